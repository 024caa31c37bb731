"""Score oracles: deterministic built-in toy victims, a budget-enforcing
counting wrapper, and an HTTP client for a remote scoring service.

Built-in victims draw their weights from ``numpy.random.default_rng(seed)``
with standard-normal entries (documented so runs are reproducible
byte-for-byte).  Seed 0 is special-cased to all-zero weights, which makes
every output the uniform distribution.
"""

from __future__ import annotations

import base64
import io
import threading

import httpx
import numpy as np

from .imagecore import ColorImage, FloatImage, quantize, save_png

PROB_TOL = 1e-5


class BudgetExhausted(Exception):
    """The counting wrapper refused a query: the budget is spent."""


class TransportError(Exception):
    pass


class ProtocolError(Exception):
    pass


class BadProbabilities(Exception):
    pass


def check_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size < 2:
        raise BadProbabilities(f"expected K >= 2 probabilities, got shape {probs.shape}")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROB_TOL:
        raise BadProbabilities(f"probabilities not normalized (sum={probs.sum()!r})")
    return probs


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


class LinearVictim:
    """softmax(W x + b) over the flattened float image."""

    def __init__(self, seed: int, num_classes: int, height: int, width: int):
        if num_classes < 2:
            raise ValueError("need at least 2 classes")
        self.num_classes = num_classes
        d = height * width * 3
        if seed == 0:
            self.w = np.zeros((num_classes, d))
            self.b = np.zeros(num_classes)
        else:
            rng = np.random.default_rng(seed)
            self.w = rng.standard_normal((num_classes, d)) / np.sqrt(d)
            self.b = rng.standard_normal(num_classes) * 0.01

    def class_count(self) -> int:
        return self.num_classes

    def score(self, x: FloatImage) -> np.ndarray:
        return _softmax(self.w @ x.values.reshape(-1) + self.b)


class MlpVictim:
    """One tanh hidden layer; otherwise the same contract as LinearVictim."""

    HIDDEN = 64

    def __init__(self, seed: int, num_classes: int, height: int, width: int):
        if num_classes < 2:
            raise ValueError("need at least 2 classes")
        self.num_classes = num_classes
        d = height * width * 3
        h = self.HIDDEN
        if seed == 0:
            self.w1 = np.zeros((h, d))
            self.b1 = np.zeros(h)
            self.w2 = np.zeros((num_classes, h))
            self.b2 = np.zeros(num_classes)
        else:
            rng = np.random.default_rng(seed)
            self.w1 = rng.standard_normal((h, d)) * (2.0 / np.sqrt(d))
            self.b1 = rng.standard_normal(h) * 0.1
            self.w2 = rng.standard_normal((num_classes, h)) / np.sqrt(h)
            self.b2 = rng.standard_normal(num_classes) * 0.01

    def class_count(self) -> int:
        return self.num_classes

    def score(self, x: FloatImage) -> np.ndarray:
        hidden = np.tanh(self.w1 @ x.values.reshape(-1) + self.b1)
        return _softmax(self.w2 @ hidden + self.b2)


def linear_victim(seed: int, num_classes: int, height: int, width: int) -> LinearVictim:
    return LinearVictim(seed, num_classes, height, width)


def mlp_victim(seed: int, num_classes: int, height: int, width: int) -> MlpVictim:
    return MlpVictim(seed, num_classes, height, width)


class CountingOracle:
    """Sole query-count authority.  Raises BudgetExhausted before delegating
    when the budget is spent; a refused call does not increment the counter."""

    def __init__(self, inner, budget: int):
        self.inner = inner
        self.budget = budget
        self.used = 0
        self._lock = threading.Lock()

    def class_count(self) -> int:
        return self.inner.class_count()

    def score(self, x: FloatImage) -> np.ndarray:
        with self._lock:
            if self.used >= self.budget:
                raise BudgetExhausted(f"budget of {self.budget} queries spent")
            self.used += 1
        return self.inner.score(x)


class RemoteOracle:
    """Client for the /v1/scores wire protocol.

    Queries are quantized to 8-bit PNG before sending, matching what a real
    deployment would see.
    """

    def __init__(self, base_url: str, timeout: float = 30.0, transport=None):
        self.base_url = base_url.rstrip("/")
        self._client = httpx.Client(base_url=self.base_url, timeout=timeout,
                                    transport=transport)
        self._k = None

    def close(self) -> None:
        self._client.close()

    def class_count(self) -> int:
        if self._k is None:
            try:
                resp = self._client.get("/v1/health")
            except httpx.HTTPError as exc:
                raise TransportError(str(exc)) from exc
            if resp.status_code != 200:
                raise ProtocolError(f"health check failed: HTTP {resp.status_code}")
            try:
                self._k = int(resp.json()["classes"])
            except (KeyError, ValueError, TypeError) as exc:
                raise ProtocolError(f"malformed health response: {exc}") from exc
        return self._k

    def score(self, x: FloatImage) -> np.ndarray:
        img = quantize(x)
        return self.score_image(img)

    def score_image(self, img: ColorImage) -> np.ndarray:
        buf = io.BytesIO()
        save_png(img, buf)
        payload = {
            "images": [{
                "encoding": "png_base64",
                "data": base64.b64encode(buf.getvalue()).decode("ascii"),
            }]
        }
        try:
            resp = self._client.post("/v1/scores", json=payload)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code != 200:
            raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            rows = resp.json()["scores"]
        except (KeyError, ValueError) as exc:
            raise ProtocolError(f"malformed response: {exc}") from exc
        if not isinstance(rows, list) or len(rows) != 1:
            raise ProtocolError(f"expected 1 score row, got {rows!r}")
        return check_probs(np.asarray(rows[0], dtype=np.float64))


def make_oracle(spec: str, height: int, width: int, num_classes: int = 10):
    """Parse ``builtin:linear:SEED``, ``builtin:mlp:SEED`` or an http URL."""
    if spec.startswith("http://") or spec.startswith("https://"):
        return RemoteOracle(spec)
    parts = spec.split(":")
    if len(parts) == 3 and parts[0] == "builtin":
        kind, seed = parts[1], int(parts[2])
        if kind == "linear":
            return linear_victim(seed, num_classes, height, width)
        if kind == "mlp":
            return mlp_victim(seed, num_classes, height, width)
    raise ValueError(f"unrecognized oracle spec: {spec!r}")
