import json

import httpx
import pytest
from hypothesis import given, strategies as st

from tumorboard.errors import ConfigError, GatewayTimeout, ReplayMiss, UpstreamError
from tumorboard.gateway import (
    ChatRequest,
    ChatResponse,
    Gateway,
    GatewayConfig,
    HttpBackend,
    TranscriptStore,
    build_gateway,
    canonical_digest,
)


def req(content="hello", **kw):
    return ChatRequest("gpt-4.1", ({"role": "user", "content": content},), **kw)


def ok_body(content="hi"):
    return {"choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]}


def scripted_endpoint(statuses, seen=None):
    statuses = list(statuses)

    def handler(request: httpx.Request) -> httpx.Response:
        if seen is not None:
            seen.append(request)
        status = statuses.pop(0)
        if status == 200:
            return httpx.Response(200, json=ok_body())
        return httpx.Response(status, text="nope")

    return HttpBackend("https://llm.test/v1", api_key="k", transport=httpx.MockTransport(handler))


def live(backend, tmp_path=None, **kw):
    mode = "record" if tmp_path else "live"
    return Gateway(mode, backend, tmp_path, sleep=lambda s: None, **kw)


class TestDigest:
    def test_key_order_and_whitespace(self):
        r = req()
        a = json.dumps(r.to_dict())
        b = json.dumps(dict(reversed(list(r.to_dict().items()))), indent=4)
        assert canonical_digest(a) == canonical_digest(b) == canonical_digest(r)

    def test_content_change(self):
        assert canonical_digest(req("hello")) != canonical_digest(req("hellp"))

    def test_parameter_matrix(self):
        variants = [req(), req(temperature=0.5), req(temperature=None), req(reasoning_effort="medium"),
                    req(max_output_tokens=100), ChatRequest("gpt-5", req().messages)]
        digests = {canonical_digest(v) for v in variants}
        assert len(digests) == len(variants)

    def test_width(self):
        assert len(canonical_digest(req())) == 64

    @given(st.text(), st.text())
    def test_distinct_content_distinct_digest(self, a, b):
        assert (canonical_digest(req(a)) == canonical_digest(req(b))) == (a == b)

    def test_request_validation(self):
        with pytest.raises(ValueError):
            ChatRequest("m", ())
        with pytest.raises(ValueError):
            req(reasoning_effort="extreme")


class TestRetry:
    def test_429_twice_then_ok(self, tmp_path):
        gw = live(scripted_endpoint([429, 429, 200]), tmp_path)
        rec = gw.complete_record(req())
        assert rec.attempts == 3
        assert rec.response.content == "hi"
        assert TranscriptStore(tmp_path).get(rec.request_digest).attempts == 3

    def test_budget_exhausted(self):
        with pytest.raises(UpstreamError) as exc:
            live(scripted_endpoint([503, 503, 503])).complete(req())
        assert (exc.value.status, exc.value.attempts) == (503, 3)

    @pytest.mark.parametrize("status", [400, 401, 403, 404, 422])
    def test_client_errors_not_retried(self, status):
        seen = []
        with pytest.raises(UpstreamError) as exc:
            live(scripted_endpoint([status, 200], seen)).complete(req())
        assert len(seen) == 1 and exc.value.attempts == 1

    def test_timeouts(self):
        def handler(request):
            raise httpx.ReadTimeout("slow", request=request)

        backend = HttpBackend("https://llm.test", transport=httpx.MockTransport(handler))
        with pytest.raises(GatewayTimeout):
            live(backend).complete(req())

    def test_backoff_is_jittered_and_bounded(self):
        sleeps = []
        gw = Gateway("live", scripted_endpoint([500, 500, 200]), sleep=sleeps.append, backoff_base=1.0)
        gw.complete(req())
        assert len(sleeps) == 2
        assert 0.5 <= sleeps[0] <= 1.0 and 1.0 <= sleeps[1] <= 2.0

    def test_wire_payload(self):
        seen = []
        live(scripted_endpoint([200], seen)).complete(req(reasoning_effort="medium", temperature=None))
        body = json.loads(seen[0].content)
        assert body == {"model": "gpt-4.1", "messages": [{"role": "user", "content": "hello"}],
                        "reasoning_effort": "medium"}
        assert seen[0].headers["Authorization"] == "Bearer k"
        assert str(seen[0].url) == "https://llm.test/v1/chat/completions"

    def test_custom_auth_header(self):
        seen = []
        backend = HttpBackend("https://x", path="gen", api_key="s", auth_header="api-key", auth_scheme=None,
                              transport=httpx.MockTransport(lambda r: seen.append(r) or httpx.Response(200, json=ok_body())))
        backend(req())
        assert seen[0].headers["api-key"] == "s" and str(seen[0].url) == "https://x/gen"

    def test_malformed_body(self):
        backend = HttpBackend("https://x", transport=httpx.MockTransport(lambda r: httpx.Response(200, json={})))
        with pytest.raises(UpstreamError):
            live(backend).complete(req())

    def test_rate_limit_waits(self):
        now = [0.0]
        sleeps = []
        gw = Gateway("live", lambda r: ChatResponse("x"), requests_per_minute=2,
                     sleep=lambda s: sleeps.append(s) or now.__setitem__(0, now[0] + s), clock=lambda: now[0])
        for _ in range(3):
            gw.complete(req())
        assert sleeps == [60.0]


class TestReplay:
    def test_replay_identity(self, tmp_path):
        backend = lambda r: ChatResponse("recorded", ({"id": "c1", "type": "function",
                                                        "function": {"name": "f", "arguments": "{}"}},), "tool_calls")
        first = Gateway("record", backend, tmp_path).complete(req())
        again = Gateway("replay", transcripts=tmp_path).complete(req())
        assert again == first

    def test_replay_miss_names_digest(self, tmp_path):
        with pytest.raises(ReplayMiss) as exc:
            Gateway("replay", transcripts=tmp_path).complete(req())
        assert exc.value.digest == canonical_digest(req())
        assert canonical_digest(req()) in str(exc.value)

    def test_store_is_append_only(self, tmp_path):
        store = TranscriptStore(tmp_path)
        store.add(req(), {"content": "one"})
        store.add(req(), {"content": "two"})
        assert store.get(canonical_digest(req())).response.content == "one"
        assert len(store.digests()) == 1

    def test_config_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            Gateway("replay")
        with pytest.raises(ConfigError):
            Gateway("live")
        with pytest.raises(ConfigError):
            Gateway("dream", transcripts=tmp_path)
        with pytest.raises(ConfigError):
            build_gateway(GatewayConfig(mode="live"))

    def test_build_from_env(self, tmp_path):
        cfg = GatewayConfig.from_env({"TUMORBOARD_LLM_MODE": "replay", "TUMORBOARD_TRANSCRIPT_DIR": str(tmp_path)})
        gw = build_gateway(cfg)
        assert gw.mode == "replay" and gw.transcripts.root == tmp_path
