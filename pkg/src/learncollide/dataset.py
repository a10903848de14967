"""Uniform C-space sampling, splitting, target scaling and dataset files."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import COLLISION, Environment, label_configurations, sample_configurations
from .kinematics import fk_features_batch
from .seeding import substream

BINARY_MAGIC = b"CSL1"


@dataclass
class LabeledDataset:
    configurations: np.ndarray
    labels: np.ndarray
    env_ref: str = ""
    fk_features: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.configurations = np.asarray(self.configurations, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.configurations.ndim != 2:
            raise ValueError("configurations must be an (n, J) matrix")
        if self.labels.shape != (self.configurations.shape[0],):
            raise ValueError("labels must have one entry per configuration")
        if not np.all(np.abs(self.labels) == 1):
            raise ValueError("labels must be -1 or +1")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dof(self) -> int:
        return self.configurations.shape[1]

    @property
    def collision_fraction(self) -> float:
        return float(np.mean(self.labels == COLLISION))

    def features(self, env: Environment) -> np.ndarray:
        """FK features, computed once and cached on the dataset."""
        if self.fk_features is None:
            if env.dof != self.dof:
                raise ValueError(f"environment has {env.dof} DoF, dataset has {self.dof}")
            self.fk_features = fk_features_batch(env.robots, self.configurations)
        return self.fk_features

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        fk = None if self.fk_features is None else self.fk_features[idx]
        return LabeledDataset(self.configurations[idx], self.labels[idx], self.env_ref, fk)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.95
    shuffle_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def sample_dataset(env: Environment, n: int, seed: int, tag: str = "sample") -> LabeledDataset:
    q = sample_configurations(env, n, seed, tag=tag)
    return LabeledDataset(q, label_configurations(env, q), env.fingerprint())


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    perm = substream(spec.shuffle_seed, "split").permutation(n)
    n_train = math.ceil(spec.train_fraction * n)
    if n_train >= n:
        raise ValueError(f"split of {n} rows at fraction {spec.train_fraction} leaves no validation rows")
    return perm[:n_train], perm[n_train:]


def split(dataset: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    train_idx, val_idx = split_indices(len(dataset), spec)
    return dataset.subset(train_idx), dataset.subset(val_idx)


def scale_targets(labels, beta: float) -> np.ndarray:
    """Map +1 to +beta and leave -1 untouched."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    labels = np.asarray(labels)
    return np.where(labels > 0, float(beta), -1.0)


# -- files --------------------------------------------------------------------

def write_csv(dataset: LabeledDataset, path) -> None:
    j = dataset.dof
    header = ",".join([f"q{i}" for i in range(j)] + ["y"])
    lines = [header]
    for row, y in zip(dataset.configurations, dataset.labels):
        lines.append(",".join(f"{v:.17g}" for v in row) + f",{int(y)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path, env_ref: str = "") -> LabeledDataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[-1] != "y" or any(h != f"q{i}" for i, h in enumerate(header[:-1])):
            raise ValueError(f"{path}: expected header q0..q(J-1),y")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        data = np.empty((0, len(header)))
    return LabeledDataset(data[:, :-1], data[:, -1].astype(np.int8), env_ref)


def write_binary(dataset: LabeledDataset, path) -> None:
    n, j = dataset.configurations.shape
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<QQ", n, j))
        fh.write(dataset.configurations.astype("<f8").tobytes())
        fh.write(dataset.labels.astype("i1").tobytes())


def read_binary(path, env_ref: str = "") -> LabeledDataset:
    raw = Path(path).read_bytes()
    if raw[:4] != BINARY_MAGIC:
        raise ValueError(f"{path}: not a CSL1 dataset file")
    n, j = struct.unpack("<QQ", raw[4:20])
    q_end = 20 + 8 * n * j
    q = np.frombuffer(raw[20:q_end], dtype="<f8").reshape(n, j).astype(float)
    y = np.frombuffer(raw[q_end:q_end + n], dtype="i1").astype(np.int8)
    return LabeledDataset(q, y, env_ref)


def write_dataset(dataset: LabeledDataset, path) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        write_csv(dataset, path)
    else:
        write_binary(dataset, path)


def read_dataset(path, env_ref: str = "") -> LabeledDataset:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == BINARY_MAGIC:
        return read_binary(path, env_ref)
    return read_csv(path, env_ref)


def dataset_metadata(dataset: LabeledDataset, seed: int, **extra) -> dict:
    meta = {"env_ref": dataset.env_ref, "n": len(dataset), "seed": seed,
            "density_estimate": dataset.collision_fraction}
    meta.update(extra)
    return meta


def write_metadata(meta: dict, path) -> None:
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
