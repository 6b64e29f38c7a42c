"""Uniform access to text-generation and embedding backends.

Two backends share one interface: a live HTTP backend speaking a
chat-completion wire format, and a replay backend that serves recorded
responses keyed by exact request fingerprints. With the replay backend the
whole pipeline is a deterministic function of its inputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

log = logging.getLogger(__name__)

DEFAULT_EMBED_MODEL = "all-MiniLM-L6-v2"
_RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class GenerationConfig:
    model_id: str
    temperature: float = 0.0
    max_length: int = 4096
    timeout: float = 60.0
    max_retries: int = 3

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_length <= 0:
            raise ValueError("max_length must be > 0")


def fingerprint(prompt: str, config: GenerationConfig) -> str:
    """Byte-stable replay key for one completion request."""
    payload = json.dumps(
        {
            "max_length": config.max_length,
            "model_id": config.model_id,
            "prompt": prompt,
            "temperature": config.temperature,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class GatewayError(RuntimeError):
    pass


class ReplayMissError(GatewayError):
    def __init__(self, key: str, kind: str = "completion") -> None:
        super().__init__(f"no recorded {kind} for {key}")
        self.key = key
        self.kind = kind


class TransportError(GatewayError):
    pass


class BackendError(GatewayError):
    def __init__(self, message: str, status: int | None = None) -> None:
        super().__init__(message)
        self.status = status


class ReplayStore:
    """Recorded request/response pairs; lookup is exact, no fuzzy fallback."""

    def __init__(self) -> None:
        self.completions: dict[str, str] = {}
        self.prompts: dict[str, str] = {}
        self.embeddings: dict[str, tuple[float, ...]] = {}

    def add_completion(self, prompt: str, config: GenerationConfig, response: str) -> str:
        key = fingerprint(prompt, config)
        self.completions[key] = response
        self.prompts[key] = prompt
        return key

    def add_embedding(self, text: str, vector: Sequence[float]) -> None:
        self.embeddings[text] = tuple(float(x) for x in vector)

    def __len__(self) -> int:
        return len(self.completions) + len(self.embeddings)

    @classmethod
    def load(cls, path: str | Path) -> "ReplayStore":
        store = cls()
        with open(path, encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise GatewayError(f"{path}:{number}: malformed replay record: {exc}") from None
                if record.get("kind") == "embed":
                    store.embeddings[record["text"]] = tuple(record["vector"])
                else:
                    store.completions[record["fingerprint"]] = record["response"]
                    store.prompts[record["fingerprint"]] = record.get("prompt", "")
        return store

    def save(self, path: str | Path) -> None:
        lines = []
        for key in sorted(self.completions):
            lines.append(
                json.dumps(
                    {
                        "kind": "complete",
                        "fingerprint": key,
                        "prompt": self.prompts.get(key, ""),
                        "response": self.completions[key],
                    },
                    ensure_ascii=False,
                )
            )
        for text in sorted(self.embeddings):
            lines.append(
                json.dumps(
                    {"kind": "embed", "text": text, "vector": list(self.embeddings[text])},
                    ensure_ascii=False,
                )
            )
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


class Backend(Protocol):
    def complete(self, prompt: str, config: GenerationConfig) -> str: ...

    def embed(self, texts: Sequence[str], model_id: str, timeout: float) -> list[list[float]]: ...


class ReplayBackend:
    def __init__(self, store: ReplayStore) -> None:
        self.store = store

    def complete(self, prompt: str, config: GenerationConfig) -> str:
        key = fingerprint(prompt, config)
        try:
            return self.store.completions[key]
        except KeyError:
            raise ReplayMissError(key) from None

    def embed(self, texts: Sequence[str], model_id: str, timeout: float) -> list[list[float]]:
        vectors = []
        for text in texts:
            try:
                vectors.append(list(self.store.embeddings[text]))
            except KeyError:
                raise ReplayMissError(text, kind="embedding") from None
        return vectors


class HttpBackend:
    """Chat-completion/embeddings client over HTTP.

    Retries timeouts and rate limits with exponential backoff up to the
    config's retry budget; other non-success statuses fail immediately.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
        backoff_base: float = 0.5,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.session = session or requests.Session()
        self.sleep = sleep
        self.backoff_base = backoff_base

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, path: str, payload: dict, timeout: float, max_retries: int) -> dict:
        url = f"{self.base_url}{path}"
        last_error: Exception | None = None
        for attempt in range(max_retries + 1):
            if attempt:
                self.sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                response = self.session.post(
                    url, json=payload, headers=self._headers(), timeout=timeout
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_error = exc
                log.warning("request to %s failed (attempt %d): %s", url, attempt + 1, exc)
                continue
            if response.status_code in _RETRYABLE_STATUSES:
                last_error = BackendError(
                    f"HTTP {response.status_code} from {url}", status=response.status_code
                )
                log.warning("retryable HTTP %d from %s (attempt %d)",
                            response.status_code, url, attempt + 1)
                continue
            if not 200 <= response.status_code < 300:
                raise BackendError(
                    f"HTTP {response.status_code} from {url}: {response.text[:200]}",
                    status=response.status_code,
                )
            try:
                return response.json()
            except ValueError as exc:
                raise BackendError(f"non-JSON response from {url}: {exc}") from None
        raise TransportError(f"retries exhausted for {url}: {last_error}")

    def complete(self, prompt: str, config: GenerationConfig) -> str:
        payload = {
            "model": config.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": config.temperature,
            "max_tokens": config.max_length,
        }
        body = self._post("/chat/completions", payload, config.timeout, config.max_retries)
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise BackendError(f"malformed completion response: {json.dumps(body)[:200]}") from None

    def embed(self, texts: Sequence[str], model_id: str, timeout: float) -> list[list[float]]:
        body = self._post("/embeddings", {"model": model_id, "input": list(texts)}, timeout, 3)
        try:
            return [row["embedding"] for row in body["data"]]
        except (KeyError, TypeError):
            raise BackendError(f"malformed embedding response: {json.dumps(body)[:200]}") from None


def normalize_vector(vector: Sequence[float]) -> tuple[float, ...]:
    """L2-normalize; an all-zero vector has no direction and passes through."""
    norm = math.sqrt(sum(x * x for x in vector))
    if norm == 0.0:
        return tuple(float(x) for x in vector)
    return tuple(float(x) / norm for x in vector)


class Gateway:
    """Backend-agnostic entry point with a bounded in-flight request count.

    In record mode every live request/response pair is appended to a replay
    file so the run can be replayed bit-identically.
    """

    def __init__(
        self,
        backend: Backend,
        config: GenerationConfig,
        embed_model_id: str = DEFAULT_EMBED_MODEL,
        max_in_flight: int = 4,
        record_path: str | Path | None = None,
    ) -> None:
        if max_in_flight <= 0:
            raise ValueError("max_in_flight must be > 0")
        self.backend = backend
        self.config = config
        self.embed_model_id = embed_model_id
        self.record_path = Path(record_path) if record_path else None
        self._semaphore = threading.Semaphore(max_in_flight)
        self._write_lock = threading.Lock()
        self._seen_lock = threading.Lock()
        self.seen_fingerprints: list[str] = []

    def _note(self, key: str) -> None:
        with self._seen_lock:
            if key not in self.seen_fingerprints:
                self.seen_fingerprints.append(key)

    def _record(self, record: dict) -> None:
        if self.record_path is None:
            return
        with self._write_lock:
            try:
                with open(self.record_path, "a", encoding="utf-8") as handle:
                    handle.write(json.dumps(record, ensure_ascii=False) + "\n")
            except OSError as exc:
                log.warning("could not append to replay file %s: %s", self.record_path, exc)

    def complete(self, prompt: str, config: GenerationConfig | None = None) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        config = config or self.config
        key = fingerprint(prompt, config)
        self._note(key)
        with self._semaphore:
            response = self.backend.complete(prompt, config)
        self._record(
            {"kind": "complete", "fingerprint": key, "prompt": prompt, "response": response}
        )
        return response

    def embed(self, texts: Sequence[str]) -> list[tuple[float, ...]]:
        if not texts:
            return []
        for text in texts:
            if not text:
                raise ValueError("embedding input texts must be non-empty")
        timeout = self.config.timeout
        with self._semaphore:
            raw = self.backend.embed(list(texts), self.embed_model_id, timeout)
        # Raw vectors are recorded so a replay run normalizes exactly as the
        # live run did.
        for text, vector in zip(texts, raw):
            self._record({"kind": "embed", "text": text, "vector": [float(x) for x in vector]})
        return [normalize_vector(v) for v in raw]
