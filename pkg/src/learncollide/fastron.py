"""Kernel perceptron collision proxy over FK features (Fastron-style).

Training keeps the hypothesis vector ``F = K @ alpha`` up to date one Gram
column at a time: each iteration picks the training point with the worst
margin ``y_i * F_i``, sets its margin to its target with a single weight
correction, and adds the correction times that point's kernel column to
``F``. Columns are computed only when needed and kept in a bounded cache.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, bundle

CONVERGED = "converged"
ITERATION_CAP = "iteration_cap"
SUPPORT_CAP_BLOCKED = "support_cap_blocked"
CHECKPOINT_FORMAT = "fastron-model"
DEFAULT_CACHE_BYTES = 256 * 2**20


@dataclass(frozen=True)
class FastronConfig:
    gamma: float = 5.0
    beta: float = 500.0
    max_updates: int = 5000
    max_supports: int = 30000

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.beta >= 1:
            raise ValueError(f"beta must be at least 1, got {self.beta}")
        if self.max_updates < 1:
            raise ValueError(f"max_updates must be positive, got {self.max_updates}")
        if self.max_supports < 1:
            raise ValueError(f"max_supports must be positive, got {self.max_supports}")


def kernel(a, b, gamma: float) -> np.ndarray:
    """Rational quadratic kernel ``(1 + gamma/2 * |a - b|^2) ** -2``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError("kernel arguments must have equal dimension")
    diff = a - b
    return (1.0 + 0.5 * gamma * np.einsum("...i,...i->...", diff, diff)) ** -2


def gram_column(features: np.ndarray, i: int, gamma: float) -> np.ndarray:
    diff = features - features[i]
    return (1.0 + 0.5 * gamma * np.einsum("ij,ij->i", diff, diff)) ** -2


@dataclass
class FastronModel:
    features: np.ndarray
    labels: np.ndarray
    alpha: np.ndarray
    F: np.ndarray
    config: FastronConfig
    termination: str = ""
    iterations: int = 0
    removed: int = 0
    gram_cache: OrderedDict = field(default_factory=OrderedDict, repr=False)
    cache_limit: int = 0
    columns_computed: int = 0
    _support: tuple | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(self.alpha)

    @property
    def n_supports(self) -> int:
        return int(np.count_nonzero(self.alpha))

    def column(self, i: int) -> np.ndarray:
        col = self.gram_cache.get(i)
        if col is not None:
            self.gram_cache.move_to_end(i)
            return col
        col = gram_column(self.features, i, self.config.gamma)
        self.columns_computed += 1
        if self.cache_limit > 0:
            self.gram_cache[i] = col
            if len(self.gram_cache) > self.cache_limit:
                self.gram_cache.popitem(last=False)
        return col

    def margins(self) -> np.ndarray:
        return self.labels * self.F

    def recompute_F(self) -> np.ndarray:
        """``K @ alpha`` from scratch over the current supports."""
        out = np.zeros(self.n)
        for i in self.support_indices:
            out += self.alpha[i] * gram_column(self.features, i, self.config.gamma)
        return out

    def _supports(self):
        if self._support is None:
            idx = self.support_indices
            s = np.ascontiguousarray(self.features[idx])
            self._support = (s, np.einsum("ij,ij->i", s, s), self.alpha[idx].copy())
        return self._support

    def scores(self, queries) -> np.ndarray:
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        if q.shape[1] != self.features.shape[1]:
            raise ValueError(f"model expects {self.features.shape[1]} features, got {q.shape[1]}")
        s, s_sq, a = self._supports()
        out = np.zeros(q.shape[0])
        if a.size == 0:
            return out
        chunk = max(1, (1 << 22) // a.size)
        half_gamma = 0.5 * self.config.gamma
        for start in range(0, q.shape[0], chunk):
            qc = q[start:start + chunk]
            d2 = np.einsum("ij,ij->i", qc, qc)[:, None] + s_sq[None, :] - 2.0 * (qc @ s.T)
            np.maximum(d2, 0.0, out=d2)
            d2 *= half_gamma
            d2 += 1.0
            out[start:start + chunk] = (d2 ** -2) @ a
        return out

    def predict(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Labels (+1 iff score >= 0) and scores ``sum_i alpha_i k(X_i, x)``."""
        s = self.scores(queries)
        return np.where(s >= 0, 1, -1).astype(np.int8), s

    def invalidate(self) -> None:
        self._support = None

    # -- persistence ----------------------------------------------------------

    def to_bytes(self, extra_meta: dict | None = None) -> bytes:
        idx = self.support_indices
        meta = {"format": CHECKPOINT_FORMAT, "version": 1, "tool_version": __version__, "model": "fastron",
                "gamma": self.config.gamma, "fastron_config": asdict(self.config), "termination": self.termination,
                "iterations": self.iterations, "removed": self.removed, "n_supports": int(idx.size)}
        if extra_meta:
            meta.update(extra_meta)
        arrays = {"features": self.features, "labels": self.labels.astype(np.int8),
                  "alpha_index": idx.astype(np.int64), "alpha_value": self.alpha[idx], "F": self.F}
        return bundle.dumps(meta, arrays)

    def save(self, path, extra_meta: dict | None = None) -> str:
        raw = self.to_bytes(extra_meta)
        with open(path, "wb") as fh:
            fh.write(raw)
        return hashlib.sha256(raw).hexdigest()

    @classmethod
    def from_bundle(cls, meta: dict, arrays: dict) -> "FastronModel":
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a Fastron model file")
        n = arrays["labels"].shape[0]
        alpha = np.zeros(n)
        alpha[arrays["alpha_index"]] = arrays["alpha_value"]
        return cls(features=arrays["features"], labels=arrays["labels"].astype(float), alpha=alpha,
                   F=arrays["F"], config=FastronConfig(**meta["fastron_config"]), termination=meta["termination"],
                   iterations=meta["iterations"], removed=meta.get("removed", 0))

    @classmethod
    def load(cls, path) -> tuple["FastronModel", dict]:
        meta, arrays = bundle.read(path)
        return cls.from_bundle(meta, arrays), meta


def remove_redundant_supports(model: FastronModel) -> FastronModel:
    """Drop supports whose own margin stays positive without their contribution.

    Repeatedly removes the support with the largest ``y_i * (F_i - alpha_i)``
    while that value is strictly positive (``k(x_i, x_i) = 1``).
    """
    y = model.labels
    while True:
        idx = model.support_indices
        if idx.size == 0:
            break
        excl = y[idx] * (model.F[idx] - model.alpha[idx])
        k = int(np.argmax(excl))
        if not excl[k] > 0:
            break
        i = int(idx[k])
        model.F -= model.alpha[i] * model.column(i)
        model.alpha[i] = 0.0
        model.removed += 1
    model.invalidate()
    return model


def fastron_train(features, labels, config: FastronConfig = FastronConfig(),
                  cache_bytes: int = DEFAULT_CACHE_BYTES, on_update=None) -> FastronModel:
    """Train with lazy Gram columns.

    Terminates as ``converged`` when every margin is positive after redundant
    supports are removed, ``iteration_cap`` after ``max_updates`` corrections,
    or ``support_cap_blocked`` when every misclassified point would need a
    new support beyond ``max_supports``. ``on_update(model)`` is called after
    every correction (used by invariant tests).
    """
    x = np.ascontiguousarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("features must be (n, d) with one label per row")
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one training point")
    if config.max_supports > n:
        raise ValueError(f"max_supports ({config.max_supports}) exceeds training size ({n})")
    model = FastronModel(x, y, np.zeros(n), np.zeros(n), config,
                         cache_limit=max(1, cache_bytes // (8 * n)))
    target = np.where(y > 0, config.beta, 1.0) * y
    n_supports = 0
    while True:
        m = y * model.F
        if m.min() > 0:
            remove_redundant_supports(model)
            n_supports = model.n_supports
            if (y * model.F).min() > 0:
                model.termination = CONVERGED
                break
            m = y * model.F
        if model.iterations >= config.max_updates:
            model.termination = ITERATION_CAP
            break
        admissible = m <= 0
        if n_supports >= config.max_supports:
            admissible &= model.alpha != 0
        if not admissible.any():
            model.termination = SUPPORT_CAP_BLOCKED
            break
        i = int(np.argmin(np.where(admissible, m, np.inf)))
        delta = target[i] - model.F[i]
        was_support = model.alpha[i] != 0
        model.alpha[i] += delta
        is_support = model.alpha[i] != 0
        n_supports += int(is_support) - int(was_support)
        model.F += delta * model.column(i)
        model.iterations += 1
        if on_update is not None:
            on_update(model)
    model.invalidate()
    return model


def fastron_train_naive(features, labels, config: FastronConfig = FastronConfig()) -> FastronModel:
    """Reference trainer: full Gram matrix up front, ``F`` recomputed each step.

    Same selection, correction and removal rules as :func:`fastron_train`;
    kept deliberately simple as an oracle for the lazy implementation.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    n = x.shape[0]
    diff = x[:, None, :] - x[None, :, :]
    K = (1.0 + 0.5 * config.gamma * (diff ** 2).sum(axis=2)) ** -2
    alpha = np.zeros(n)
    it = 0
    removed = 0
    reason = ""
    while True:
        F = K @ alpha
        if np.all(y * F > 0):
            while True:
                sup = np.flatnonzero(alpha)
                if sup.size == 0:
                    break
                excl = y[sup] * (F[sup] - alpha[sup])
                k = int(np.argmax(excl))
                if not excl[k] > 0:
                    break
                alpha[sup[k]] = 0.0
                removed += 1
                F = K @ alpha
            if np.all(y * F > 0):
                reason = CONVERGED
                break
        if it >= config.max_updates:
            reason = ITERATION_CAP
            break
        m = y * F
        admissible = m <= 0
        if np.count_nonzero(alpha) >= config.max_supports:
            admissible &= alpha != 0
        if not admissible.any():
            reason = SUPPORT_CAP_BLOCKED
            break
        i = int(np.argmin(np.where(admissible, m, np.inf)))
        r = config.beta if y[i] > 0 else 1.0
        alpha[i] += r * y[i] - F[i]
        it += 1
    model = FastronModel(x, y, alpha, K @ alpha, config, termination=reason, iterations=it, removed=removed)
    return model


def fastron_predict(model: FastronModel, queries) -> tuple[np.ndarray, np.ndarray]:
    return model.predict(queries)
