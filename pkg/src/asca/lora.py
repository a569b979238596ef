"""Low-rank adaptation of a frozen linear softmax layer.

The effective weight is ``W0 + A @ B`` with ``A`` (d_out x c) and ``B``
(c x d_in); only ``A`` and ``B`` are trained.  Training walks a curriculum of
noise levels (low -> medium -> high), using AdamW with decoupled weight decay.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError
from .io import read_matrix, write_matrix
from .rng import generator

LEVEL_ORDER = {"low": 0, "medium": 1, "high": 2}
DEFAULT_LEARNING_RATE = 2e-4


@dataclass(frozen=True, eq=False)
class FrozenLinear:
    W0: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.W0, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError("W0 must be d_out x d_in and bias length d_out")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W0", w)
        object.__setattr__(self, "bias", b)

    @property
    def shape(self):
        return self.W0.shape

    def forward(self, x):
        return np.asarray(x) @ self.W0.T + self.bias


@dataclass(frozen=True, eq=False)
class LoraAdapter:
    A: np.ndarray
    B: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.asarray(self.A, dtype=np.float64)
        b = np.asarray(self.B, dtype=np.float64)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ValueError("A must be d_out x c and B c x d_in")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("adapter factors must be finite")
        if a.shape[1] >= min(a.shape[0], b.shape[1]):
            raise ValueError(f"rank {a.shape[1]} must be below min(d_out, d_in) = {min(a.shape[0], b.shape[1])}")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)

    @property
    def rank(self):
        return self.A.shape[1]

    @classmethod
    def zeros(cls, d_out, d_in, rank, init_scale=0.01, seed=0):
        """A = 0 and small Gaussian B, so the initial update is exactly zero."""
        rng = generator(seed)
        return cls(np.zeros((d_out, rank)), init_scale * rng.standard_normal((rank, d_in)))


@dataclass(frozen=True)
class CurriculumSpec:
    stages: tuple = (("low", 1), ("medium", 1), ("high", 1))
    learning_rate: float = DEFAULT_LEARNING_RATE
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    init_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        stages = tuple((str(level), int(epochs)) for level, epochs in self.stages)
        if not stages:
            raise ValueError("curriculum needs at least one stage")
        for level, epochs in stages:
            if level not in LEVEL_ORDER:
                raise ValueError(f"unknown noise level {level!r}")
            if epochs < 1:
                raise ValueError("epochs per stage must be positive")
        ranks = [LEVEL_ORDER[level] for level, _ in stages]
        if any(b < a for a, b in zip(ranks, ranks[1:])):
            raise ValueError("noise levels must be non-decreasing through the curriculum")
        if not self.learning_rate > 0 or self.batch_size < 1:
            raise ValueError("learning_rate must be positive and batch_size >= 1")
        object.__setattr__(self, "stages", stages)


def _check(base, ad):
    if ad.A.shape[0] != base.shape[0] or ad.B.shape[1] != base.shape[1]:
        raise ValueError(f"adapter {ad.A.shape[0]}x{ad.B.shape[1]} does not fit base {base.shape}")


def merge(base, ad):
    _check(base, ad)
    return base.W0 + ad.A @ ad.B


def lora_forward(base, ad, x):
    """Logits ``(W0 + AB) x + bias`` without materialising ``AB``."""
    _check(base, ad)
    x = np.asarray(x, dtype=np.float64)
    return x @ base.W0.T + (x @ ad.B.T) @ ad.A.T + base.bias


def loss_and_grads(base, ad, X, y):
    """Mean softmax cross-entropy and its gradients with respect to A and B."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    projected = X @ ad.B.T  # n x c
    logits = X @ base.W0.T + projected @ ad.A.T + base.bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_norm[:, None]
    n = X.shape[0]
    loss = -log_p[np.arange(n), y].mean()
    g = np.exp(log_p)
    g[np.arange(n), y] -= 1.0
    g /= n  # dL/dlogits, n x d_out
    grad_A = g.T @ projected
    grad_B = (g @ ad.A).T @ X
    return float(loss), grad_A, grad_B


def mean_loss(base, ad, X, y):
    return loss_and_grads(base, ad, X, y)[0]


class _AdamW:
    def __init__(self, spec, shapes):
        self.spec = spec
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        s = self.spec
        self.t += 1
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = s.beta1 * self.m[i] + (1 - s.beta1) * g
            self.v[i] = s.beta2 * self.v[i] + (1 - s.beta2) * g * g
            m_hat = self.m[i] / (1 - s.beta1 ** self.t)
            v_hat = self.v[i] / (1 - s.beta2 ** self.t)
            p = p - s.learning_rate * s.weight_decay * p
            out.append(p - s.learning_rate * m_hat / (np.sqrt(v_hat) + s.eps))
        return out


def _stage_data(task_data, level, stage):
    data = task_data(level, stage) if callable(task_data) else task_data[level]
    X, y = data
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)


def train_lora(base, rank, task_data, curriculum):
    """Fit A and B through the curriculum; ``base`` is never written to.

    ``task_data`` maps a noise level to ``(features, labels)``, or is a
    callable ``(level, stage_index) -> (features, labels)``.
    """
    d_out, d_in = base.shape
    ad = LoraAdapter.zeros(d_out, d_in, rank, curriculum.init_scale, curriculum.seed)
    A, B = ad.A.copy(), ad.B.copy()
    opt = _AdamW(curriculum, [A.shape, B.shape])
    history = []
    for stage, (level, epochs) in enumerate(curriculum.stages):
        X, y = _stage_data(task_data, level, stage)
        rng = generator(curriculum.seed, stage + 1)
        for epoch in range(epochs):
            order = rng.permutation(len(y))
            for start in range(0, len(y), curriculum.batch_size):
                batch = order[start:start + curriculum.batch_size]
                loss, gA, gB = loss_and_grads(base, LoraAdapter(A, B), X[batch], y[batch])
                if not np.isfinite(loss):
                    raise DivergenceError(f"loss became {loss} in stage {level!r}, epoch {epoch}")
                A, B = opt.step([A, B], [gA, gB])
                if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
                    raise DivergenceError(f"adapter diverged in stage {level!r}, epoch {epoch}")
            history.append({"stage": level, "epoch": epoch, "loss": mean_loss(base, LoraAdapter(A, B), X, y)})
    meta = {"rank": rank, "curriculum": asdict(curriculum), "history": history}
    return LoraAdapter(A, B, meta)


def base_from_centroids(model, temperature=1.0):
    """Frozen linear layer equivalent to a nearest-centroid model, logits scaled by 1/temperature."""
    W, b = model.as_linear()
    return FrozenLinear(W / temperature, b / temperature)


def save_adapter(ad, root):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_matrix(root / "A.amat", ad.A)
    write_matrix(root / "B.amat", ad.B)
    (root / "adapter.json").write_text(json.dumps({"rank": ad.rank, **ad.meta}, indent=2, sort_keys=True) + "\n")
    return root


def load_adapter(root):
    root = Path(root)
    meta = json.loads((root / "adapter.json").read_text())
    meta.pop("rank", None)
    return LoraAdapter(read_matrix(root / "A.amat"), read_matrix(root / "B.amat"), meta)
