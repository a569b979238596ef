"""Few-shot typo-correction prompts and corrector backends.

The remote backend speaks the common chat-completion wire format: POST a JSON
body ``{"model": ..., "messages": [{"role", "content"}, ...]}`` and read
``choices[0].message.content`` from the reply.
"""

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import httpx

from .dataset import normalize_sentence
from .errors import BackendError, BackendProtocolError, BackendTimeout, RateLimited
from .rng import generator

log = logging.getLogger(__name__)

SYSTEM_PROMPT = "You are an expert in correcting typos in sentences."
FEWSHOT_PREAMBLE = "Here are pairs of sentences with typos; learn from them:"
INSTRUCTION = "Now, please correct these sentences and output only the corrected version with no additional text: "
BACKEND_KINDS = ("remote", "oracle", "echo", "dictionary")


@dataclass(frozen=True)
class PromptMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user"):
            raise ValueError(f"unsupported role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_json(self):
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class FewShotExample:
    noisy: str
    clean: str

    def __post_init__(self):
        if not self.noisy or not self.clean:
            raise ValueError("few-shot sentences must be non-empty")


def _single_line(text, what):
    if "\n" in text or "\r" in text:
        raise ValueError(f"{what} must be a single line")
    return text


def build_fewshot_prompt(examples, target):
    """System + user messages; with no examples only the instruction line is sent."""
    _single_line(target, "target sentence")
    parts = []
    if examples:
        parts.append(FEWSHOT_PREAMBLE)
        for ex in examples:
            parts.append(f"sentence: {_single_line(ex.noisy, 'example')}\n"
                         f"corrected: {_single_line(ex.clean, 'example')}")
    parts.append(INSTRUCTION + target)
    return [PromptMessage("system", SYSTEM_PROMPT), PromptMessage("user", "\n\n".join(parts))]


def normalize_response(text):
    text = text.strip()
    if text.lower().startswith("corrected:"):
        text = text[len("corrected:"):]
    return normalize_sentence(text)


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "echo"
    base_url: str | None = None
    model: str | None = None
    path: str = "/chat/completions"
    token_env: str | None = None
    timeout_s: float = 30.0
    max_concurrent: int = 4
    max_retries: int = 3
    backoff_s: float = 0.5
    max_backoff_s: float = 30.0
    temperature: float = 0.0
    wordlist: tuple = ()
    audit_log: str | None = None

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}; expected one of {BACKEND_KINDS}")
        if self.kind == "remote" and not (self.base_url and self.model):
            raise ValueError("remote backend requires base_url and model")
        if self.max_concurrent < 1 or self.max_retries < 0:
            raise ValueError("max_concurrent must be >= 1 and max_retries >= 0")


class OracleBackend:
    kind = "oracle"

    def correct_one(self, transcript, examples):
        return transcript.truth


class EchoBackend:
    kind = "echo"

    def correct_one(self, transcript, examples):
        return transcript.predicted


def within_one_edit(a, b):
    """True when Levenshtein(a, b) <= 1."""
    if a == b:
        return True
    la, lb = len(a), len(b)
    if abs(la - lb) > 1:
        return False
    if la == lb:
        return sum(x != y for x, y in zip(a, b)) == 1
    if la > lb:
        a, b, la, lb = b, a, lb, la
    i = 0
    while i < la and a[i] == b[i]:
        i += 1
    return a[i:] == b[i + 1:]


class DictionaryBackend:
    """Replace each token by the alphabetically first word within one edit."""

    kind = "dictionary"

    def __init__(self, wordlist):
        self.words = sorted(set(wordlist))
        self._vocab = set(self.words)
        self._by_length = {}
        for w in self.words:
            self._by_length.setdefault(len(w), []).append(w)

    def fix_token(self, token):
        if token in self._vocab:
            return token
        candidates = [w for n in (len(token) - 1, len(token), len(token) + 1)
                      for w in self._by_length.get(n, ()) if within_one_edit(token, w)]
        return min(candidates) if candidates else token

    def correct_one(self, transcript, examples):
        return " ".join(self.fix_token(t) for t in transcript.predicted.split())


class RemoteBackend:
    kind = "remote"

    def __init__(self, cfg, client=None, sleep=time.sleep):
        self.cfg = cfg
        self.url = cfg.base_url.rstrip("/") + cfg.path
        headers = {"Content-Type": "application/json"}
        if cfg.token_env:
            token = os.environ.get(cfg.token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        self.client = client or httpx.Client(timeout=cfg.timeout_s, headers=headers)
        self._sleep = sleep
        self._audit_lock = threading.Lock()

    def _audit(self, record):
        if not self.cfg.audit_log:
            return
        with self._audit_lock, open(self.cfg.audit_log, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def _delay(self, attempt, response=None):
        delay = self.cfg.backoff_s * (2 ** attempt)
        if response is not None and "retry-after" in response.headers:
            try:
                delay = max(delay, float(response.headers["retry-after"]))
            except ValueError:
                pass
        return min(delay, self.cfg.max_backoff_s)

    def complete(self, messages):
        body = {"model": self.cfg.model, "messages": [m.to_json() for m in messages],
                "temperature": self.cfg.temperature}
        last = None
        for attempt in range(self.cfg.max_retries + 1):
            try:
                response = self.client.post(self.url, json=body)
            except httpx.TimeoutException as exc:
                last = BackendTimeout(f"request timed out after {self.cfg.timeout_s}s")
                log.warning("attempt %d timed out: %s", attempt + 1, exc)
                if attempt < self.cfg.max_retries:
                    self._sleep(self._delay(attempt))
                continue
            except httpx.HTTPError as exc:
                raise BackendProtocolError(f"transport error: {exc}") from exc
            if response.status_code == 429 or response.status_code >= 500:
                last = (RateLimited("rate limited; retries exhausted") if response.status_code == 429
                        else BackendProtocolError(f"server error {response.status_code}"))
                log.warning("attempt %d got HTTP %d", attempt + 1, response.status_code)
                if attempt < self.cfg.max_retries:
                    self._sleep(self._delay(attempt, response))
                continue
            if response.status_code != 200:
                raise BackendProtocolError(f"unexpected HTTP {response.status_code}")
            try:
                content = response.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendProtocolError("malformed chat-completion response") from exc
            if not isinstance(content, str):
                raise BackendProtocolError("message content is not a string")
            self._audit({"request": body, "response": content})
            return content
        raise last

    def correct_one(self, transcript, examples):
        return self.complete(build_fewshot_prompt(examples, transcript.predicted))


def make_backend(cfg):
    if cfg.kind == "oracle":
        return OracleBackend()
    if cfg.kind == "echo":
        return EchoBackend()
    if cfg.kind == "dictionary":
        return DictionaryBackend(cfg.wordlist)
    return RemoteBackend(cfg)


def select_examples(transcript, pool, k, seed, index=0):
    """``k`` few-shot pairs from ``pool`` at the transcript's noise level, never its own sentence."""
    eligible = [t for t in pool if t.truth != transcript.truth and t.noise_level == transcript.noise_level]
    if k <= 0 or not eligible:
        return []
    rng = generator(seed, index)
    picks = rng.choice(len(eligible), size=min(k, len(eligible)), replace=False)
    return [FewShotExample(eligible[i].predicted, eligible[i].truth) for i in picks]


def correct(backend, transcript, fewshot_pool, k=2, seed=0, index=0):
    """Fill ``corrected``; backend failures are recorded on the transcript, not raised."""
    examples = select_examples(transcript, fewshot_pool, k, seed, index)
    try:
        text = backend.correct_one(transcript, examples)
    except BackendError as exc:
        return replace(transcript, corrected=None, error=f"{type(exc).__name__}: {exc}")
    return replace(transcript, corrected=normalize_response(text), error=None)


def correct_batch(backend, transcripts, fewshot_pool, k=2, seed=0, max_concurrent=1):
    """Correct every transcript through a bounded worker pool; output keeps input order."""
    transcripts = list(transcripts)
    if max_concurrent <= 1:
        return [correct(backend, t, fewshot_pool, k, seed, i) for i, t in enumerate(transcripts)]
    with ThreadPoolExecutor(max_workers=max_concurrent) as pool:
        futures = [pool.submit(correct, backend, t, fewshot_pool, k, seed, i) for i, t in enumerate(transcripts)]
        return [f.result() for f in futures]
