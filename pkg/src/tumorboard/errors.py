"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TumorBoardError(Exception):
    """Base class for every error raised by this package."""


# core model
class SummaryFormatError(TumorBoardError):
    pass


class MissingSection(SummaryFormatError):
    def __init__(self, name: str):
        super().__init__(f"missing section {name!r}")
        self.name = name


class DuplicateSection(SummaryFormatError):
    def __init__(self, name: str):
        super().__init__(f"duplicate section {name!r}")
        self.name = name


class RubricError(TumorBoardError, ValueError):
    pass


# chart store
class PatientNotFound(TumorBoardError, KeyError):
    def __init__(self, patient_id: str):
        super().__init__(patient_id)
        self.patient_id = patient_id

    def __str__(self) -> str:
        return f"patient {self.patient_id!r} not found"


class NoMatchingNote(TumorBoardError, LookupError):
    pass


class MalformedBundle(TumorBoardError, ValueError):
    pass


# gateway
class GatewayError(TumorBoardError):
    pass


class ReplayMiss(GatewayError, KeyError):
    def __init__(self, digest: str):
        super().__init__(digest)
        self.digest = digest

    def __str__(self) -> str:
        return f"no recorded transcript for request digest {self.digest}"


class UpstreamError(GatewayError):
    def __init__(self, status: int | None, attempts: int, detail: str = ""):
        msg = f"upstream failure (status={status}, attempts={attempts})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.status = status
        self.attempts = attempts


class GatewayTimeout(GatewayError, TimeoutError):
    def __init__(self, attempts: int):
        super().__init__(f"upstream timed out after {attempts} attempts")
        self.attempts = attempts


class TransientUpstream(GatewayError):
    """Raised by a backend for a retryable failure (429, 5xx, connection reset)."""

    def __init__(self, status: int | None, detail: str = "", timeout: bool = False):
        super().__init__(f"transient upstream failure (status={status}) {detail}".strip())
        self.status = status
        self.timeout = timeout


# orchestrator
class OrchestrationError(TumorBoardError):
    pass


class CharacterLimitViolation(OrchestrationError):
    def __init__(self, count: int, limit: int, attempts: int):
        super().__init__(f"summary has {count} characters (limit {limit}) after {attempts} attempts")
        self.count = count
        self.limit = limit
        self.attempts = attempts


class SectionParseFailure(OrchestrationError):
    pass


class ToolPermissionViolation(OrchestrationError):
    def __init__(self, agent: str, tool: str):
        super().__init__(f"agent {agent!r} is not permitted to call tool {tool!r}")
        self.agent = agent
        self.tool = tool


class RetrievalBudgetExceeded(OrchestrationError):
    pass


class ExtractFormatViolation(OrchestrationError):
    pass


class StorageUnavailable(OrchestrationError):
    pass


class NoteSetTooLarge(OrchestrationError):
    def __init__(self, n_chars: int, limit: int):
        super().__init__(f"concatenated notes span {n_chars} characters, above the {limit} budget")
        self.n_chars = n_chars
        self.limit = limit


class PromptAssetError(TumorBoardError, KeyError):
    pass


# judge
class JudgeSchemaViolation(TumorBoardError, ValueError):
    pass


class MissingRecords(TumorBoardError, ValueError):
    def __init__(self, ids):
        ids = sorted(ids)
        super().__init__(f"missing entailment records for {ids}")
        self.ids = ids


# stats
class StatsError(TumorBoardError, ValueError):
    pass


class EmptyInput(StatsError):
    pass


class RaggedRaterCounts(StatsError):
    pass


class AllZeroDifferences(StatsError):
    pass


class IncompleteMatrix(StatsError):
    pass


class OutOfRange(StatsError):
    pass


class MetricFailure(StatsError):
    def __init__(self, replicate: int, cause: BaseException | None = None):
        super().__init__(f"metric failed on bootstrap replicate {replicate}: {cause!r}")
        self.replicate = replicate


class DegenerateVariance(StatsError):
    pass


# ratings / reports
class IncompletePair(TumorBoardError, ValueError):
    def __init__(self, case_id: str, domain: str, detail: str = ""):
        super().__init__(f"case {case_id!r} domain {domain!r} lacks a two-rater pair {detail}".strip())
        self.case_id = case_id
        self.domain = domain


class NoCompleteCases(TumorBoardError, ValueError):
    pass


class InsufficientOverlap(TumorBoardError, ValueError):
    pass


class ConfigError(TumorBoardError, ValueError):
    pass
