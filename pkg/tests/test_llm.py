import threading

import pytest

from styleqa.errors import BackendTimeout, MalformedResponse, RateLimited
from styleqa.llm import (
    ChatRequest,
    ChatResponse,
    HttpChatBackend,
    MockChatBackend,
    RetryPolicy,
    estimate_tokens,
)

from oracles import count_tokens_oracle


def req(text="hello", adapter_id=None):
    return ChatRequest(system="sys", messages=(("user", text),), adapter_id=adapter_id)


class TestEstimator:
    def test_hundred_whitespace_tokens(self):
        prompt = " ".join(f"w{i}" for i in range(100))
        assert estimate_tokens(prompt) == 100

    def test_matches_independent_oracle(self):
        samples = [
            "Hello, world! How are you?",
            "好的,明天见!😊",
            "a-b c_d e.f",
            "",
        ]
        for text in samples:
            assert estimate_tokens(text) == count_tokens_oracle(text)


class TestChatRequest:
    def test_requires_messages(self):
        with pytest.raises(ValueError):
            ChatRequest(system="s", messages=())

    def test_fingerprint_keys_on_adapter(self):
        assert req(adapter_id=None).fingerprint() != req(adapter_id="x").fingerprint()
        assert req().fingerprint() == req().fingerprint()


class TestMockBackend:
    def test_scripted_response(self):
        r = req("ping")
        backend = MockChatBackend(script={r.fingerprint(): "ok"})
        resp = backend.complete(r)
        assert resp.text == "ok"
        assert resp.latency_ms >= 0

    def test_unscripted_uses_default(self):
        backend = MockChatBackend(default="fallback")
        assert backend.complete(req()).text == "fallback"

    def test_adapter_sensitivity_is_script_controlled(self):
        with_adapter = req("q", adapter_id="n1")
        backend = MockChatBackend(
            script={with_adapter.fingerprint(): "styled"}, default="base"
        )
        assert backend.complete(with_adapter).text == "styled"
        assert backend.complete(req("q")).text == "base"

    def test_rules_match_substring_and_callable(self):
        backend = MockChatBackend(
            rules=[
                ("magic", "by-substring"),
                (lambda r: r.adapter_id == "a1", "by-predicate"),
            ],
            default="none",
        )
        assert backend.complete(req("some magic words")).text == "by-substring"
        assert backend.complete(req("x", adapter_id="a1")).text == "by-predicate"
        assert backend.complete(req("x")).text == "none"

    def test_transcript_counts_calls(self):
        backend = MockChatBackend()
        for i in range(5):
            backend.complete(req(f"m{i}"))
        assert len(backend.transcript) == 5

    def test_transcript_thread_safe(self):
        backend = MockChatBackend()
        threads = [
            threading.Thread(target=lambda: [backend.complete(req("x")) for _ in range(50)])
            for _ in range(4)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(backend.transcript) == 200

    def test_bit_reproducible(self):
        def run():
            backend = MockChatBackend(rules=[("q", "r")], default="d")
            return [backend.complete(req(f"q{i}")) for i in range(10)]

        assert run() == run()


class FlakyBackend:
    """Fails with RateLimited n times, then delegates to a mock."""

    def __init__(self, failures, inner):
        self.failures = failures
        self.inner = inner
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            raise RateLimited("try later")
        return self.inner.complete(request)


def call_with_retries(backend, request, attempts=3):
    last = None
    for _ in range(attempts):
        try:
            return backend.complete(request)
        except RateLimited as exc:
            last = exc
    raise last


class TestRetrySemantics:
    def test_retry_is_idempotent(self):
        inner = MockChatBackend(default="done")
        flaky = FlakyBackend(2, inner)
        resp = call_with_retries(flaky, req("once"))
        assert resp.text == "done"
        # only the successful attempt reached the scripted backend
        assert len(inner.transcript) == 1


class TestHttpBackend(object):
    def _backend(self, handler, **kwargs):
        import httpx

        backend = HttpChatBackend("http://test/v1/chat", **kwargs)
        backend._client = httpx.Client(
            transport=httpx.MockTransport(handler), timeout=1.0
        )
        return backend

    def test_parses_text_and_usage(self):
        import httpx

        def handler(request):
            return httpx.Response(
                200, json={"text": "hi", "usage": {"prompt_tokens": 7, "completion_tokens": 2}}
            )

        resp = self._backend(handler).complete(req())
        assert resp == ChatResponse("hi", 7, 2, "http", resp.latency_ms)

    def test_estimates_usage_when_missing(self):
        import httpx

        def handler(request):
            return httpx.Response(200, json={"text": "two words"})

        resp = self._backend(handler).complete(req("alpha beta gamma"))
        assert resp.completion_tokens == 2
        assert resp.prompt_tokens == estimate_tokens("sys\nalpha beta gamma")

    def test_rate_limit_retries_then_raises(self):
        import httpx

        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(429)

        backend = self._backend(handler, retry=RetryPolicy(max_attempts=2, base_delay_s=0.0))
        with pytest.raises(RateLimited):
            backend.complete(req())
        assert calls["n"] == 2

    def test_unknown_adapter(self):
        import httpx

        from styleqa.errors import UnknownAdapter

        def handler(request):
            return httpx.Response(404)

        with pytest.raises(UnknownAdapter):
            self._backend(handler).complete(req(adapter_id="ghost"))

    def test_malformed_response(self):
        import httpx

        def handler(request):
            return httpx.Response(200, json={"nope": 1})

        with pytest.raises(MalformedResponse):
            self._backend(handler).complete(req())

    def test_timeout(self):
        import httpx

        def handler(request):
            raise httpx.ConnectTimeout("slow")

        with pytest.raises(BackendTimeout):
            self._backend(handler).complete(req())
