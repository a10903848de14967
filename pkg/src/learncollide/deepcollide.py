"""Implicit neural representation of the collision function.

Pipeline for FK features ``x`` of dimension ``d``::

    e = encode(x)                                  # 2*L*d sinusoids
    h1..h3 = relu(norm(fc(.)))                     # three hidden layers
    h4 = relu(norm(fc(concat(h3, e))))             # concatenative skip
    h5 = relu(norm(fc(h4)))
    score = norm(fc(h5))                           # scalar, sign = label

Gradients are derived by hand for the mean absolute error. Normalization
uses batch statistics in training and running statistics in evaluation.
"""

from __future__ import annotations

import copy
import hashlib
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, bundle
from .dataset import LabeledDataset, SplitSpec, scale_targets, split
from .geometry import Environment
from .seeding import derive_seed, substream

N_LAYERS = 6
SKIP_LAYER = 3
CHECKPOINT_FORMAT = "deepcollide-checkpoint"
CHECKPOINT_VERSION = 1
ENCODE_CHUNK = 4096


class NumericalError(ArithmeticError):
    def __init__(self, message: str, layer: int | None = None, epoch: int | None = None,
                 batch: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch
        self.batch = batch


class UntrainedModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class PositionalEncodingSpec:
    L: int = 12
    sigma: float = 1.0

    def __post_init__(self):
        if int(self.L) < 1:
            raise ValueError(f"L must be at least 1, got {self.L}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 512
    lr_max: float = 1e-3
    lr_min: float = 1e-7
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    beta: float = 1.0
    early_stop_patience: int | None = 10
    train_fraction: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 for batch statistics")
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError("learning rates must satisfy 0 < lr_min <= lr_max")
        if not self.beta > 0:
            raise ValueError("beta must be positive")


def positional_encode(features, spec: PositionalEncodingSpec, dtype=np.float64) -> np.ndarray:
    """``(sin(k*sigma*p), cos(k*sigma*p))`` for k = 1..L, per coordinate.

    Output ordering is coordinate-major, then frequency, then (sin, cos).
    Works on a single vector or on a batch in the last axis.
    """
    p = np.asarray(features, dtype=np.float64)
    freqs = np.arange(1, spec.L + 1, dtype=np.float64) * spec.sigma
    arg = p[..., :, None] * freqs
    out = np.empty(arg.shape + (2,), dtype=dtype)
    out[..., 0] = np.sin(arg)
    out[..., 1] = np.cos(arg)
    return out.reshape(p.shape[:-1] + (2 * spec.L * p.shape[-1],))


def cosine_lr(epoch: float, config: TrainingConfig) -> float:
    if not 0 <= epoch <= config.epochs:
        raise ValueError(f"epoch must lie in [0, {config.epochs}], got {epoch}")
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + math.cos(math.pi * epoch / config.epochs))


class Adam:
    """Bias-corrected Adam over a dict of parameter arrays (updated in place)."""

    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, moments, lr, config: TrainingConfig):
    """Functional form of one Adam update; ``moments`` is ``(m, v, t)``."""
    m, v, t = moments
    t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    new_params, new_m, new_v = {}, {}, {}
    for k in params:
        g = grads[k]
        new_m[k] = b1 * m[k] + (1 - b1) * g
        new_v[k] = b2 * v[k] + (1 - b2) * g * g
        m_hat = new_m[k] / (1 - b1 ** t)
        v_hat = new_v[k] / (1 - b2 ** t)
        new_params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return new_params, (new_m, new_v, t)


class DeepCollideModel:
    def __init__(self, input_dim: int, encoding: PositionalEncodingSpec = PositionalEncodingSpec(),
                 hidden: int = 256, seed: int = 0, dtype=np.float64, momentum: float = 0.1,
                 bn_eps: float = 1e-5, init: str = "uniform"):
        self.input_dim = int(input_dim)
        self.encoding = encoding
        self.hidden = int(hidden)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.momentum = momentum
        self.bn_eps = bn_eps
        self.mode = "train"
        self.trained = False
        self.params: dict[str, np.ndarray] = {}
        self.running: dict[str, np.ndarray] = {}
        self._plan = None
        self._cache = None
        rng = substream(seed, "deepcollide-init")
        for i, (fan_in, fan_out) in enumerate(self.layer_dims()):
            bound = 1.0 / math.sqrt(fan_in)
            if init == "zeros":
                w = np.zeros((fan_in, fan_out))
                b = np.zeros(fan_out)
            else:
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                b = rng.uniform(-bound, bound, size=fan_out)
            self.params[f"W{i}"] = w.astype(self.dtype)
            self.params[f"b{i}"] = b.astype(self.dtype)
            self.params[f"gamma{i}"] = np.ones(fan_out, dtype=self.dtype)
            self.params[f"shift{i}"] = np.zeros(fan_out, dtype=self.dtype)
            self.running[f"mean{i}"] = np.zeros(fan_out, dtype=self.dtype)
            self.running[f"var{i}"] = np.ones(fan_out, dtype=self.dtype)

    @property
    def encoded_dim(self) -> int:
        return 2 * self.encoding.L * self.input_dim

    def layer_dims(self) -> list[tuple[int, int]]:
        e, h = self.encoded_dim, self.hidden
        ins = [e, h, h, h + e, h, h]
        outs = [h] * (N_LAYERS - 1) + [1]
        return list(zip(ins, outs))

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def train_mode(self) -> None:
        self.mode = "train"
        self._plan = None

    def eval_mode(self) -> None:
        self.mode = "eval"

    def encode(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.input_dim:
            raise ValueError(f"model expects {self.input_dim} features, got {features.shape[-1]}")
        if features.ndim == 1 or features.shape[0] <= ENCODE_CHUNK:
            return positional_encode(features, self.encoding, self.dtype)
        out = np.empty((features.shape[0], self.encoded_dim), dtype=self.dtype)
        for s in range(0, features.shape[0], ENCODE_CHUNK):
            out[s:s + ENCODE_CHUNK] = positional_encode(features[s:s + ENCODE_CHUNK], self.encoding, self.dtype)
        return out

    # -- forward / backward -----------------------------------------------------

    def _run(self, enc: np.ndarray, train: bool, update_running: bool) -> tuple[np.ndarray, list]:
        p = self.params
        h = enc
        cache = []
        for i in range(N_LAYERS):
            x = np.concatenate([h, enc], axis=1) if i == SKIP_LAYER else h
            z = x @ p[f"W{i}"] + p[f"b{i}"]
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_running:
                    n = z.shape[0]
                    m = self.momentum
                    self.running[f"mean{i}"] = (1 - m) * self.running[f"mean{i}"] + m * mu
                    self.running[f"var{i}"] = (1 - m) * self.running[f"var{i}"] + m * var * (n / (n - 1))
            else:
                mu = self.running[f"mean{i}"]
                var = self.running[f"var{i}"]
            inv = 1.0 / np.sqrt(var + self.bn_eps)
            xhat = (z - mu) * inv
            y = p[f"gamma{i}"] * xhat + p[f"shift{i}"]
            if i < N_LAYERS - 1:
                y = np.maximum(y, 0.0)
            if not np.all(np.isfinite(y)):
                raise NumericalError(f"non-finite activations in layer {i}", layer=i)
            cache.append((x, xhat, inv, y))
            h = y
        return h[:, 0], cache

    def forward(self, features, encoded: bool = False) -> np.ndarray:
        """Scores for a batch. Train mode uses batch statistics and updates running ones."""
        enc = np.asarray(features, dtype=self.dtype) if encoded else self.encode(features)
        if enc.ndim != 2 or enc.shape[1] != self.encoded_dim:
            raise ValueError(f"expected a batch of shape (N, {self.encoded_dim}), got {enc.shape}")
        train = self.mode == "train"
        if train and enc.shape[0] < 2:
            raise ValueError("training-mode forward needs a batch of at least 2")
        out, cache = self._run(enc, train, update_running=train)
        self._cache = cache if train else None
        return out

    def _backprop(self, cache: list, out: np.ndarray, targets: np.ndarray) -> tuple[float, dict]:
        p = self.params
        n = out.shape[0]
        resid = out - targets
        loss = float(np.mean(np.abs(resid)))
        dy = (np.sign(resid) / n)[:, None].astype(self.dtype)
        grads = {}
        for i in reversed(range(N_LAYERS)):
            x, xhat, inv, y = cache[i]
            if i < N_LAYERS - 1:
                dy = dy * (y > 0)
            grads[f"shift{i}"] = dy.sum(axis=0)
            grads[f"gamma{i}"] = (dy * xhat).sum(axis=0)
            dxhat = dy * p[f"gamma{i}"]
            dz = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
            grads[f"W{i}"] = x.T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            if i > 0:
                w = p[f"W{i}"][:self.hidden] if i == SKIP_LAYER else p[f"W{i}"]
                dy = dz @ w.T
        return loss, grads

    def backward(self, targets) -> tuple[dict, float]:
        """Gradients of mean |score - target| for the last training-mode forward."""
        if self._cache is None:
            raise RuntimeError("backward needs a preceding training-mode forward pass")
        cache = self._cache
        out = cache[-1][3][:, 0]
        loss, grads = self._backprop(cache, out, np.asarray(targets, dtype=self.dtype))
        return grads, loss

    def loss_and_grads(self, enc: np.ndarray, targets: np.ndarray) -> tuple[float, dict]:
        """Training-mode loss and gradients without touching running statistics."""
        out, cache = self._run(enc, train=True, update_running=False)
        return self._backprop(cache, out, targets)

    def loss(self, enc: np.ndarray, targets: np.ndarray) -> float:
        out, _ = self._run(enc, train=True, update_running=False)
        return float(np.mean(np.abs(out - targets)))

    # -- inference ----------------------------------------------------------------

    def _inference_plan(self):
        """Normalization folded into each affine layer (evaluation statistics)."""
        if self._plan is None:
            plan = []
            for i in range(N_LAYERS):
                scale = self.params[f"gamma{i}"] / np.sqrt(self.running[f"var{i}"] + self.bn_eps)
                w = self.params[f"W{i}"] * scale
                b = (self.params[f"b{i}"] - self.running[f"mean{i}"]) * scale + self.params[f"shift{i}"]
                plan.append((np.ascontiguousarray(w), b))
            self._plan = plan
        return self._plan

    def scores(self, features) -> np.ndarray:
        """Evaluation-mode scores with folded normalization."""
        plan = self._inference_plan()
        enc = self.encode(np.atleast_2d(features))
        h = enc
        for i, (w, b) in enumerate(plan):
            x = np.concatenate([h, enc], axis=1) if i == SKIP_LAYER else h
            h = x @ w + b
            if i < N_LAYERS - 1:
                np.maximum(h, 0.0, out=h)
        out = h[:, 0]
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite scores", layer=N_LAYERS - 1)
        return out

    def predict(self, features) -> tuple[np.ndarray, np.ndarray]:
        """Labels (+1 iff score >= 0) and raw scores."""
        if not self.trained:
            raise UntrainedModelError("model has not been trained")
        if self.mode != "eval":
            raise RuntimeError("predict requires eval mode")
        s = self.scores(features)
        return np.where(s >= 0, 1, -1).astype(np.int8), s

    # -- snapshots and checkpoints ------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {**{k: v.copy() for k, v in self.params.items()},
                **{f"running_{k}": v.copy() for k, v in self.running.items()}}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k] = np.array(state[k], dtype=self.dtype)
        for k in self.running:
            self.running[k] = np.array(state[f"running_{k}"], dtype=self.dtype)
        self._plan = None

    def architecture(self) -> dict:
        return {"input_dim": self.input_dim, "L": self.encoding.L, "sigma": self.encoding.sigma,
                "hidden": self.hidden, "seed": self.seed, "dtype": self.dtype.name,
                "momentum": self.momentum, "bn_eps": self.bn_eps}

    def to_bytes(self, extra_meta: dict | None = None) -> bytes:
        meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "tool_version": __version__,
                "model": "deepcollide", "architecture": self.architecture(), "trained": self.trained}
        if extra_meta:
            meta.update(extra_meta)
        return bundle.dumps(meta, self.state())

    def save(self, path, extra_meta: dict | None = None) -> str:
        raw = self.to_bytes(extra_meta)
        with open(path, "wb") as fh:
            fh.write(raw)
        return hashlib.sha256(raw).hexdigest()

    @classmethod
    def from_bundle(cls, meta: dict, arrays: dict) -> "DeepCollideModel":
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a DeepCollide checkpoint")
        a = meta["architecture"]
        model = cls(a["input_dim"], PositionalEncodingSpec(a["L"], a["sigma"]), a["hidden"], a["seed"],
                    np.dtype(a["dtype"]), a["momentum"], a["bn_eps"], init="zeros")
        model.load_state(arrays)
        model.trained = bool(meta["trained"])
        model.mode = "eval"
        return model

    @classmethod
    def load(cls, path) -> tuple["DeepCollideModel", dict]:
        meta, arrays = bundle.read(path)
        return cls.from_bundle(meta, arrays), meta

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


# -- training -----------------------------------------------------------------------

@dataclass
class TrainingReport:
    epoch_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = float("nan")
    stopped_early: bool = False
    epochs_run: int = 0
    n_train: int = 0
    n_val: int = 0
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _batches(n: int, batch_size: int, order: np.ndarray):
    # a trailing batch of one row cannot be normalized and is dropped
    for j in range(0, n, batch_size):
        idx = order[j:j + batch_size]
        if idx.size >= 2:
            yield idx


def train(dataset: LabeledDataset, env: Environment | None, encoding: PositionalEncodingSpec = PositionalEncodingSpec(),
          config: TrainingConfig = TrainingConfig(), hidden: int = 256, dtype=np.float64,
          features: np.ndarray | None = None) -> tuple[DeepCollideModel, TrainingReport]:
    """Fit a model to a labeled dataset; returns the best-validation snapshot.

    ``features`` may be passed directly (precomputed FK features); otherwise
    they are taken from the dataset's cache or computed from ``env``.
    """
    t0 = time.perf_counter()
    if features is None:
        features = dataset.features(env)
    if len(dataset) < 40:
        raise ValueError("training needs at least 40 rows")
    spec = SplitSpec(config.train_fraction, derive_seed(config.seed, "deepcollide-split"))
    work = LabeledDataset(dataset.configurations, dataset.labels, dataset.env_ref, features)
    train_set, val_set = split(work, spec)
    targets = scale_targets(train_set.labels, config.beta).astype(dtype)

    model = DeepCollideModel(features.shape[1], encoding, hidden, config.seed, dtype)
    enc = model.encode(train_set.fk_features)
    opt = Adam(model.params, config.adam_beta1, config.adam_beta2, config.adam_eps)
    report = TrainingReport(n_train=len(train_set), n_val=len(val_set))
    best_state = None
    since_best = 0
    n = len(train_set)
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config)
        model.train_mode()
        order = substream(config.seed, "deepcollide-shuffle", epoch).permutation(n)
        losses = []
        for b, idx in enumerate(_batches(n, config.batch_size, order)):
            try:
                out, cache = model._run(enc[idx], train=True, update_running=True)
            except NumericalError as err:
                raise NumericalError(f"{err} (epoch {epoch}, batch {b})", err.layer, epoch, b) from err
            loss, grads = model._backprop(cache, out, targets[idx])
            opt.step(model.params, grads, lr)
            losses.append(loss)
        model.eval_mode()
        model._plan = None
        model.trained = True
        labels, _ = model.predict(val_set.fk_features)
        acc = float(np.mean(labels == val_set.labels))
        report.epoch_loss.append(float(np.mean(losses)) if losses else float("nan"))
        report.val_accuracy.append(acc)
        report.learning_rate.append(lr)
        report.epochs_run = epoch + 1
        if best_state is None or acc > report.best_val_accuracy:
            best_state = model.state()
            report.best_epoch = epoch
            report.best_val_accuracy = acc
            since_best = 0
        else:
            since_best += 1
            if config.early_stop_patience is not None and since_best >= config.early_stop_patience:
                report.stopped_early = True
                break
    model.load_state(best_state)
    model.eval_mode()
    model.trained = True
    report.wall_seconds = time.perf_counter() - t0
    return model, report


def training_meta(config: TrainingConfig, encoding: PositionalEncodingSpec, hidden: int, dtype) -> dict:
    return {"training_config": asdict(config), "encoding": asdict(encoding), "hidden": hidden,
            "precision": "f64-test" if np.dtype(dtype) == np.float64 else "f32-bench"}


def clone(model: DeepCollideModel) -> DeepCollideModel:
    return copy.deepcopy(model)
