"""Versioned prompt-template assets with literal placeholder substitution.

Templates live next to this module as ``<id>.txt``; ``manifest.json`` pins
each template's semantic version and its named placeholders. Rendering
replaces ``{name}`` for the declared placeholders only, in a single pass,
with no escaping: any other brace text in a template is left untouched.
"""

from __future__ import annotations

import functools
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from ..errors import PromptAssetError

ASSET_DIR = Path(__file__).resolve().parent


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    version: str
    text: str
    placeholders: tuple[str, ...]

    def render(self, **values: str) -> str:
        missing = set(self.placeholders) - set(values)
        extra = set(values) - set(self.placeholders)
        if missing or extra:
            raise PromptAssetError(
                f"template {self.template_id}: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        if not self.placeholders:
            return self.text
        pattern = re.compile("|".join(re.escape("{" + p + "}") for p in self.placeholders))
        return pattern.sub(lambda m: str(values[m.group(0)[1:-1]]), self.text)

    @property
    def ref(self) -> str:
        return f"{self.template_id}@{self.version}"


@functools.lru_cache(maxsize=None)
def _manifest(asset_dir: Path = ASSET_DIR) -> Mapping[str, dict]:
    data = json.loads((asset_dir / "manifest.json").read_text(encoding="utf-8"))
    return data["templates"]


@functools.lru_cache(maxsize=None)
def load_prompt(template_id: str, asset_dir: Path = ASSET_DIR) -> PromptTemplate:
    try:
        entry = _manifest(asset_dir)[template_id]
    except KeyError:
        raise PromptAssetError(f"unknown prompt template {template_id!r}") from None
    path = asset_dir / entry["file"]
    if not path.exists():
        raise PromptAssetError(f"prompt asset file missing: {path}")
    text = path.read_text(encoding="utf-8")
    placeholders = tuple(entry.get("placeholders", ()))
    for p in placeholders:
        if "{" + p + "}" not in text:
            raise PromptAssetError(f"template {template_id} lacks declared placeholder {{{p}}}")
    return PromptTemplate(template_id, entry["version"], text, placeholders)


def template_versions(asset_dir: Path = ASSET_DIR) -> dict[str, str]:
    return {k: v["version"] for k, v in sorted(_manifest(asset_dir).items())}


def list_templates(asset_dir: Path = ASSET_DIR) -> list[str]:
    return sorted(_manifest(asset_dir))
