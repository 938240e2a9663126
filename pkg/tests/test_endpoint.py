from __future__ import annotations

import json

import httpx
import pytest

from hsg.endpoint import EndpointPolicy, load_templates
from hsg.errors import BackendError, EndpointUnreachable, GenerationTruncated, UnsupportedScoring
from hsg.policies import Role, RoleContext

CTX = RoleContext(Role.SNEAKY, {"q": "Start with 2. Add 3. What number results?"})


def reply(text="ok \\boxed{5}", finish="stop", logprobs=(-0.5, -0.25)):
    choice = {"message": {"role": "assistant", "content": text}, "finish_reason": finish}
    if logprobs is not None:
        choice["logprobs"] = {"content": [{"token": "t", "logprob": lp} for lp in logprobs]}
    return {"choices": [choice]}


def policy(handler, **kw):
    kw.setdefault("backoff", 0.0)
    sleeps = []
    p = EndpointPolicy("http://model.test", "tiny", transport=httpx.MockTransport(handler), sleep=sleeps.append, **kw)
    return p, sleeps


class TestEndpoint:
    def test_wire_format(self):
        seen = []

        def handler(request):
            seen.append((request.url.path, json.loads(request.content), request.headers.get("authorization")))
            return httpx.Response(200, json=reply())

        p, _ = policy(handler, api_key="secret", temperature=0.7, max_tokens=64)
        gens = p.sample(CTX, 2, seed=10)
        assert [g.text for g in gens] == ["ok \\boxed{5}"] * 2
        assert gens[0].logprob == pytest.approx(-0.75)
        path, body, auth = seen[0]
        assert path == "/v1/chat/completions" and auth == "Bearer secret"
        assert body["model"] == "tiny" and body["temperature"] == 0.7 and body["max_tokens"] == 64
        assert [b["seed"] for _, b, _ in seen] == [10, 11]
        assert "Start with 2." in body["messages"][-1]["content"]

    def test_missing_logprobs(self):
        p, _ = policy(lambda r: httpx.Response(200, json=reply(logprobs=None)))
        assert p.sample(CTX, 1, 0)[0].logprob is None

    def test_retries_then_succeeds(self):
        codes = iter([503, 429])

        def handler(request):
            code = next(codes, 200)
            return httpx.Response(code, json=reply()) if code == 200 else httpx.Response(code)

        p, sleeps = policy(handler, retries=3, backoff=0.5)
        assert p.sample(CTX, 1, 0)[0].text.startswith("ok")
        assert sleeps == [0.5, 1.0] and p.requests_sent == 3

    def test_gives_up(self):
        def handler(request):
            raise httpx.ConnectError("refused", request=request)

        p, sleeps = policy(handler, retries=2)
        with pytest.raises(EndpointUnreachable):
            p.sample(CTX, 1, 0)
        assert p.requests_sent == 3

    def test_malformed_reply_is_retried(self):
        replies = iter([httpx.Response(200, text="not json"), httpx.Response(200, json={"choices": []}),
                        httpx.Response(200, json=reply())])
        p, _ = policy(lambda r: next(replies), retries=3)
        assert p.sample(CTX, 1, 0)[0].text.startswith("ok")
        assert p.requests_sent == 3

    def test_well_formed_reply_never_retried(self):
        p, _ = policy(lambda r: httpx.Response(200, json=reply()), retries=5)
        p.sample(CTX, 1, 0)
        assert p.requests_sent == 1

    def test_client_error_not_retried(self):
        p, _ = policy(lambda r: httpx.Response(401, text="bad key"), retries=5)
        with pytest.raises(BackendError):
            p.sample(CTX, 1, 0)
        assert p.requests_sent == 1

    def test_truncation(self):
        p, _ = policy(lambda r: httpx.Response(200, json=reply(finish="length")))
        with pytest.raises(GenerationTruncated):
            p.sample(CTX, 1, 0)

    def test_cache(self, tmp_path):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(200, json=reply())

        p, _ = policy(handler, cache_dir=tmp_path)
        first = p.sample(CTX, 1, 4)
        p2, _ = policy(handler, cache_dir=tmp_path)
        assert p2.sample(CTX, 1, 4) == first
        assert len(calls) == 1 and len(list(tmp_path.iterdir())) == 1

    def test_scoring_unsupported(self):
        p, _ = policy(lambda r: httpx.Response(200, json=reply()))
        with pytest.raises(UnsupportedScoring):
            p.logprob(CTX, "text")

    def test_unknown_template(self):
        p, _ = policy(lambda r: httpx.Response(200, json=reply()))
        with pytest.raises(BackendError):
            p.sample(RoleContext(Role.SNEAKY, {"q": "x"}, "no-such-template"), 1, 0)

    def test_template_dir(self, tmp_path):
        (tmp_path / "sneaky.txt").write_text("Q: {q}")
        assert load_templates(tmp_path)["sneaky"] == "Q: {q}"
        assert "judge" in load_templates(tmp_path)
