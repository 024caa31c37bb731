"""Model loading.

A model is any object with a ``classes`` attribute and a ``logits(batch)``
method taking a float64 array of shape (N, H, W, 3) with values in [0, 1]
and returning an (N, classes) array of raw scores.  Softmax is applied by
the server, never here.
"""

import numpy as np


class SeededMLP:
    """Small fixed-weight classifier generated from a seed.

    Useful as a stand-in victim: fully deterministic, needs no weight files,
    and produces a non-trivial score landscape.
    """

    def __init__(self, classes: int, seed: int, height: int, width: int,
                 hidden: int = 64):
        self.classes = classes
        rng = np.random.default_rng(seed)
        dim = height * width * 3
        self._w1 = rng.standard_normal((dim, hidden)) / np.sqrt(dim)
        self._b1 = rng.standard_normal(hidden) * 0.1
        self._w2 = rng.standard_normal((hidden, classes)) / np.sqrt(hidden)
        self._b2 = rng.standard_normal(classes) * 0.1

    def logits(self, batch: np.ndarray) -> np.ndarray:
        flat = batch.reshape(batch.shape[0], -1)
        h = np.tanh(flat @ self._w1 + self._b1)
        return h @ self._w2 + self._b2


class TorchScriptModel:
    """Wraps a TorchScript module saved with ``torch.jit.save``.

    The module must map an (N, 3, H, W) float32 tensor in [0, 1] to
    (N, classes) logits.
    """

    def __init__(self, path: str, height: int, width: int,
                 deterministic: bool = True):
        import torch  # deferred: torch is a deployment-only dependency

        self._torch = torch
        self._module = torch.jit.load(path, map_location="cpu")
        self._module.eval()
        if deterministic:
            torch.set_num_threads(1)
        with torch.inference_mode():
            probe = self._module(torch.zeros(1, 3, height, width))
        self.classes = int(probe.shape[-1])

    def logits(self, batch: np.ndarray) -> np.ndarray:
        torch = self._torch
        x = torch.from_numpy(np.ascontiguousarray(
            batch.transpose(0, 3, 1, 2), dtype=np.float32))
        with torch.inference_mode():
            out = self._module(x)
        return out.numpy().astype(np.float64)


def load_model(spec: str, height: int, width: int, deterministic: bool = True):
    """Parse ``seeded:mlp:CLASSES:SEED`` or ``torchscript:PATH``."""
    parts = spec.split(":", 1)
    if parts[0] == "seeded":
        sub = parts[1].split(":") if len(parts) == 2 else []
        if len(sub) == 3 and sub[0] == "mlp":
            return SeededMLP(int(sub[1]), int(sub[2]), height, width)
    elif parts[0] == "torchscript" and len(parts) == 2:
        return TorchScriptModel(parts[1], height, width, deterministic)
    raise ValueError(f"unrecognized model spec: {spec!r}")
