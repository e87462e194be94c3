from __future__ import annotations

import json

import httpx
import pytest

from closedloop.providers import (
    CLOUD_DEFAULT,
    CompletionRequest,
    CountingProvider,
    ImageSegment,
    LatencyModel,
    MalformedProviderResponse,
    ProviderConfig,
    ProviderUnavailable,
    RemoteEndpoint,
    RemoteProvider,
    Role,
    RuleMiss,
    ScriptedProvider,
    TextSegment,
    Usage,
    chat_payload,
    prompt_tokens,
)

ENDPOINT = RemoteEndpoint(base_url="https://models.test/v1", model="m", retries=2)


def req(*segments, system="") -> CompletionRequest:
    return CompletionRequest(system, tuple(segments) or (TextSegment("x"),))


def reply(text="ok", prompt=10, completion=5) -> dict:
    return {"choices": [{"message": {"content": text}}],
            "usage": {"prompt_tokens": prompt, "completion_tokens": completion}}


def test_prompt_tokens_image_plus_text():
    assert prompt_tokens(req(ImageSegment("{}", 100_000), TextSegment("a" * 400))) == 1500


def test_prompt_tokens_single_short_word():
    assert prompt_tokens(req(TextSegment(""), TextSegment("word"))) == 1


def test_request_needs_a_segment():
    with pytest.raises(ValueError):
        CompletionRequest("s", ())


def test_usage_is_non_negative():
    with pytest.raises(ValueError):
        Usage(-1, 0)


def test_latency_model():
    assert LatencyModel(fixed=0.3, per_token=0.001).latency(100) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        LatencyModel(fixed=-1.0)


def test_scripted_lookup_and_usage():
    p = ScriptedProvider(CLOUD_DEFAULT)
    plan = "Description: d\nThought: t\nPlan: {}"
    rid = p.register(r"help me with: (\w+)", plan)
    assert rid == 0
    out = p.complete(req(TextSegment("please help me with: AddContact"), ImageSegment("{}", 5)))
    assert out.text == plan
    assert out.usage.prompt_tokens == prompt_tokens(req(TextSegment("please help me with: AddContact"),
                                                        ImageSegment("{}", 5)))
    assert out.synthetic_latency == 3.0


def test_scripted_expands_groups_and_callables():
    p = ScriptedProvider(CLOUD_DEFAULT, [(r"name=(\w+)", r"hello \1"), (r"call", lambda r, m: r.system.upper())])
    assert p.complete(req(TextSegment("name=bob"))).text == "hello bob"
    assert p.complete(req(TextSegment("call"), system="sys")).text == "SYS"


def test_scripted_first_rule_wins():
    p = ScriptedProvider(CLOUD_DEFAULT, [("abc", "first"), ("a", "second")])
    assert p.complete(req(TextSegment("xabcx"))).text == "first"


def test_scripted_without_rules_misses():
    p = ScriptedProvider(CLOUD_DEFAULT)
    with pytest.raises(RuleMiss):
        p.complete(req())


def test_scripted_table_freezes():
    p = ScriptedProvider(CLOUD_DEFAULT, [("x", "y")])
    p.complete(req())
    with pytest.raises(RuntimeError):
        p.register("z", "w")


def test_counting_provider():
    inner = ScriptedProvider(CLOUD_DEFAULT, [("x", "abcd")])
    counter = CountingProvider(inner)
    counter.complete(req())
    counter.complete(req())
    assert counter.calls == 2
    assert counter.tokens == 2 * (1 + 1)


def test_chat_payload_shape():
    body = chat_payload(req(ImageSegment("{}", 9), TextSegment("hi"), system="sys"), "m")
    assert body["model"] == "m"
    assert body["messages"][0] == {"role": "system", "content": "sys"}
    content = body["messages"][1]["content"]
    assert content[0]["type"] == "image_url" and content[0]["image_url"]["url"].startswith("data:")
    assert content[1] == {"type": "text", "text": "hi"}


def remote(handler, endpoint=ENDPOINT, sleeps=None) -> RemoteProvider:
    return RemoteProvider(ProviderConfig(Role.CLOUD), endpoint, httpx.MockTransport(handler),
                          sleep=(sleeps.append if sleeps is not None else lambda s: None))


def test_remote_maps_usage():
    out = remote(lambda r: httpx.Response(200, json=reply("hi", 10, 5))).complete(req())
    assert out.text == "hi"
    assert out.usage == Usage(10, 5)
    assert out.retries == 0


def test_remote_retries_server_errors():
    calls, sleeps = [], []

    def handler(request):
        calls.append(request)
        return httpx.Response(500) if len(calls) <= 2 else httpx.Response(200, json=reply())

    out = remote(handler, sleeps=sleeps).complete(req())
    assert out.retries == 2 and len(calls) == 3
    assert sleeps == [1.0, 2.0]


def test_remote_gives_up():
    with pytest.raises(ProviderUnavailable):
        remote(lambda r: httpx.Response(503)).complete(req())


def test_remote_transport_errors_are_retried():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            raise httpx.ConnectError("refused")
        return httpx.Response(200, json=reply())

    assert remote(handler).complete(req()).retries == 1


def test_remote_client_errors_are_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="no key")

    with pytest.raises(ProviderUnavailable):
        remote(handler).complete(req())
    assert len(calls) == 1


@pytest.mark.parametrize("payload", [{"choices": [{"message": {"content": "x"}}]},
                                     {"choices": [], "usage": {"prompt_tokens": 1, "completion_tokens": 1}},
                                     reply(prompt=-3)])
def test_remote_malformed_reply(payload):
    with pytest.raises(MalformedProviderResponse):
        remote(lambda r: httpx.Response(200, json=payload)).complete(req())


def test_remote_non_json_reply():
    with pytest.raises(MalformedProviderResponse):
        remote(lambda r: httpx.Response(200, text="<html>")).complete(req())


def test_remote_reads_secret_from_environment(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        seen["url"] = str(request.url)
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=reply())

    monkeypatch.setenv("CLOSEDLOOP_API_KEY", "sk-test")
    remote(handler).complete(req())
    assert seen["auth"] == "Bearer sk-test"
    assert seen["url"] == "https://models.test/v1/chat/completions"
    assert seen["body"]["model"] == "m"
    monkeypatch.delenv("CLOSEDLOOP_API_KEY")
    remote(handler).complete(req())
    assert seen["auth"] is None


def test_endpoint_from_mapping_rejects_unknown_keys():
    with pytest.raises(ValueError):
        RemoteEndpoint.from_mapping({"base_url": "x", "model": "m", "api_key": "inline"})


def test_endpoint_from_env(monkeypatch):
    monkeypatch.setenv("CLOSEDLOOP_BASE_URL", "http://h")
    monkeypatch.setenv("CLOSEDLOOP_MODEL", "m2")
    ep = RemoteEndpoint.from_env()
    assert (ep.base_url, ep.model, ep.retries) == ("http://h", "m2", 2)


def test_remote_replaces_lone_surrogates():
    out = remote(lambda r: httpx.Response(200, content=b'{"choices":[{"message":{"content":"a\\ud800b"}}],'
                                                        b'"usage":{"prompt_tokens":1,"completion_tokens":1}}')
                 ).complete(req())
    assert out.text == "a?b"
