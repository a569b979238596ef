import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from asca.attack import AttackTranscript
from asca.correction import (BackendConfig, DictionaryBackend, EchoBackend, FewShotExample, OracleBackend,
                             RemoteBackend, build_fewshot_prompt, correct, correct_batch, make_backend,
                             normalize_response, select_examples, within_one_edit)
from asca.errors import BackendProtocolError, BackendTimeout, RateLimited
from asca.metrics import bleu

FIXTURE = json.loads((Path(__file__).parent / "fixtures" / "prompt_k2.json").read_text())


def test_prompt_golden_k2():
    examples = [FewShotExample(e["noisy"], e["clean"]) for e in FIXTURE["examples"]]
    messages = [m.to_json() for m in build_fewshot_prompt(examples, FIXTURE["target"])]
    assert json.dumps(messages, ensure_ascii=False).encode() == json.dumps(FIXTURE["messages"], ensure_ascii=False).encode()


def test_prompt_zero_shot():
    system, user = build_fewshot_prompt([], "helo")
    assert system.content == "You are an expert in correcting typos in sentences."
    assert "learn from them" not in user.content
    assert user.content == ("Now, please correct these sentences and output only the corrected version "
                            "with no additional text: helo")


def test_prompt_pure_and_single_line():
    ex = [FewShotExample("a b", "a c")]
    assert build_fewshot_prompt(ex, "x") == build_fewshot_prompt(ex, "x")
    with pytest.raises(ValueError):
        build_fewshot_prompt(ex, "two\nlines")


def test_normalize_response():
    assert normalize_response("  corrected: The Cat sat!\n") == "the cat sat"
    assert normalize_response("Corrected:  i have 3 dogs") == "i have 3 dogs"


def _t(truth, predicted, level="low"):
    return AttackTranscript(truth, predicted, None, level, 0.01, 0, "channel")


def test_oracle_and_echo():
    t = _t("the cat sat", "tge cat sat")
    assert correct(OracleBackend(), t, []).corrected == "the cat sat"
    assert bleu(t.truth, correct(OracleBackend(), t, []).corrected) == 1.0
    assert correct(EchoBackend(), t, []).corrected == "tge cat sat"


def test_within_one_edit():
    assert within_one_edit("caf", "cat") and within_one_edit("ca", "cat") and within_one_edit("cats", "cat")
    assert not within_one_edit("dog", "cat") and not within_one_edit("c", "cat")


def test_dictionary_backend():
    d = DictionaryBackend(["the", "cat", "sat"])
    assert correct(d, _t("the cat sat", "the caf sat"), []).corrected == "the cat sat"
    # ties go alphabetically: "bat" and "cat" are both one edit from "xat"
    assert DictionaryBackend(["cat", "bat"]).fix_token("xat") == "bat"
    assert DictionaryBackend(["cat"]).fix_token("zzzz") == "zzzz"


def test_select_examples_no_leakage_and_level():
    pool = [_t("a b", "a c"), _t("c d", "c e"), _t("e f", "e g", "high"), _t("x y", "x z")]
    target = _t("a b", "a x")
    for seed in range(20):
        picked = select_examples(target, pool, 2, seed)
        assert len(picked) == 2
        assert all(ex.clean not in ("a b", "e f") for ex in picked)
    assert select_examples(target, pool, 0, 0) == []


def test_batch_order_independent_of_concurrency():
    d = DictionaryBackend(["the", "cat", "sat", "on", "mat"])
    ts = [_t("the cat sat", p) for p in ("the caf sat", "thx cat sat", "the cat saz", "tha cat sat")] * 5
    pool = [_t("on the mat", "on tge mat")]
    assert correct_batch(d, ts, pool, 2, 3, max_concurrent=1) == correct_batch(d, ts, pool, 2, 3, max_concurrent=8)


def test_backend_config_validation():
    with pytest.raises(ValueError):
        BackendConfig(kind="magic")
    with pytest.raises(ValueError):
        BackendConfig(kind="remote")
    assert isinstance(make_backend(BackendConfig(kind="echo")), EchoBackend)


# ---------------------------------------------------------------- scripted chat server

class ScriptedServer:
    """Local HTTP server replaying a list of (status, body, headers, delay) steps."""

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        owner = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                owner.requests.append({"path": self.path, "headers": dict(self.headers),
                                       "body": json.loads(self.rfile.read(length))})
                status, body, headers, delay = owner.script.pop(0) if owner.script else (500, "", {}, 0)
                time.sleep(delay)
                payload = body if isinstance(body, bytes) else body.encode()
                self.send_response(status)
                for k, v in headers.items():
                    self.send_header(k, v)
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                try:
                    self.wfile.write(payload)
                except (BrokenPipeError, ConnectionResetError):
                    pass

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def ok(text):
    return (200, json.dumps({"choices": [{"message": {"role": "assistant", "content": text}}]}), {}, 0)


def remote(url, **kw):
    cfg = BackendConfig(kind="remote", base_url=url, model="test-model", timeout_s=kw.pop("timeout_s", 2.0),
                        max_retries=kw.pop("max_retries", 2), backoff_s=0.01, **kw)
    sleeps = []
    return RemoteBackend(cfg, sleep=sleeps.append), sleeps


def test_remote_success_wire_format(monkeypatch, tmp_path):
    monkeypatch.setenv("CHAT_TOKEN", "secret")
    with ScriptedServer([ok("corrected: The cat sat")]) as srv:
        backend, _ = remote(srv.url, token_env="CHAT_TOKEN", audit_log=str(tmp_path / "audit.jsonl"))
        out = correct(backend, _t("the cat sat", "the caf sat"), [_t("on the mat", "on tge mat")], k=2)
    assert out.corrected == "the cat sat" and out.error is None
    req = srv.requests[0]
    assert req["path"] == "/v1/chat/completions"
    assert req["headers"]["Authorization"] == "Bearer secret"
    assert req["body"]["model"] == "test-model" and req["body"]["temperature"] == 0.0
    assert [m["role"] for m in req["body"]["messages"]] == ["system", "user"]
    assert "sentence: on tge mat\ncorrected: on the mat" in req["body"]["messages"][1]["content"]
    audit = [json.loads(line) for line in (tmp_path / "audit.jsonl").read_text().splitlines()]
    assert audit[0]["response"] == "corrected: The cat sat"


def test_remote_retries_429_then_succeeds():
    script = [(429, "", {"Retry-After": "0.05"}, 0), (503, "", {}, 0), ok("the cat sat")]
    with ScriptedServer(script) as srv:
        backend, sleeps = remote(srv.url)
        assert backend.complete(build_fewshot_prompt([], "x")) == "the cat sat"
    assert len(srv.requests) == 3
    assert sleeps[0] >= 0.05 and sleeps[1] == pytest.approx(0.02)


def test_remote_rate_limited_after_retries():
    with ScriptedServer([(429, "", {}, 0)] * 3) as srv:
        backend, sleeps = remote(srv.url, max_retries=2)
        with pytest.raises(RateLimited):
            backend.complete(build_fewshot_prompt([], "x"))
    assert len(srv.requests) == 3 and len(sleeps) == 2


def test_remote_malformed_response():
    for body in ("not json", json.dumps({"choices": []}), json.dumps({"choices": [{"message": {"content": 3}}]})):
        with ScriptedServer([(200, body, {}, 0)]) as srv:
            backend, _ = remote(srv.url)
            with pytest.raises(BackendProtocolError):
                backend.complete(build_fewshot_prompt([], "x"))


def test_remote_client_error_not_retried():
    with ScriptedServer([(401, "nope", {}, 0)]) as srv:
        backend, sleeps = remote(srv.url)
        with pytest.raises(BackendProtocolError):
            backend.complete(build_fewshot_prompt([], "x"))
    assert len(srv.requests) == 1 and not sleeps


def test_remote_timeout():
    with ScriptedServer([(200, "{}", {}, 0.6)] * 2) as srv:
        backend, _ = remote(srv.url, timeout_s=0.2, max_retries=1)
        with pytest.raises(BackendTimeout):
            backend.complete(build_fewshot_prompt([], "x"))


def test_remote_errors_recorded_per_sentence():
    script = [ok("the cat sat"), (401, "", {}, 0), ok("on the mat")]
    with ScriptedServer(script) as srv:
        backend, _ = remote(srv.url)
        ts = [_t("the cat sat", "the caf sat"), _t("a dog", "a dig"), _t("on the mat", "on tge mat")]
        out = correct_batch(backend, ts, [], k=0, max_concurrent=1)
    assert [t.corrected for t in out] == ["the cat sat", None, "on the mat"]
    assert out[1].error.startswith("BackendProtocolError")


def test_remote_concurrent_batch_keeps_order():
    n = 12
    with ScriptedServer([ok("same answer")] * n) as srv:
        backend, _ = remote(srv.url)
        ts = [_t(f"sentence {i}", f"sentence {i}") for i in range(n)]
        out = correct_batch(backend, ts, [], k=0, max_concurrent=4)
    assert [t.truth for t in out] == [t.truth for t in ts]
    assert all(t.corrected == "same answer" for t in out)
