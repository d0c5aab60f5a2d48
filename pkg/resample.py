"""
Batch construction for classifier-based CMI estimation.

- joint batches: samples of p(x, y, z)
- isolated k-NN product batches: approximately p(x|z) p(y, z)
- MI-Diff product batches for I(X;Z) and I(X;Y,Z)
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from datagen import Dataset, make_rng
from errors import ConfigError
from knn import build_index, query_knn_many

logger = logging.getLogger(__name__)

ORIGINS = ("joint", "isolated_knn", "midiff_xz", "midiff_xyz", "exact_product")


@dataclass
class LabeledBatch:
    """
    Triples plus their class label q (1 = joint, 0 = product).
    A role that a batch does not carry (MI-Diff pairs) is a zero-width block.
    """
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    label: int
    origin: str
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ConfigError(f"Unknown batch origin '{self.origin}'")
        if (self.label == 1) != (self.origin == "joint"):
            raise ConfigError(f"Label {self.label} is inconsistent with origin '{self.origin}'")
        if not (len(self.x) == len(self.y) == len(self.z)):
            raise ConfigError("Batch roles have different lengths")

    @property
    def size(self) -> int:
        return len(self.x)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.x.shape[1], self.y.shape[1], self.z.shape[1]

    def __len__(self):
        return self.size

    def features(self) -> np.ndarray:
        return np.hstack([self.x, self.y, self.z])

    def without(self, role: str) -> "LabeledBatch":
        values = {"x": self.x, "y": self.y, "z": self.z}
        if role not in values:
            raise ConfigError(f"Unknown role '{role}'")
        values[role] = np.empty((self.size, 0))
        return LabeledBatch(values["x"], values["y"], values["z"], self.label, self.origin,
                            dict(self.provenance, dropped=role))


def pool_batches(joint: LabeledBatch, product: LabeledBatch) -> Tuple[np.ndarray, np.ndarray, float]:
    """Stack both classes; p1 = b / (b + b') follows from the actual sizes."""
    if joint.size == 0 or product.size == 0:
        raise ConfigError("Both joint and product batches must be non-empty")
    if joint.dims != product.dims:
        raise ConfigError(f"Joint dims {joint.dims} differ from product dims {product.dims}")
    features = np.vstack([joint.features(), product.features()])
    labels = np.concatenate([np.full(joint.size, float(joint.label)),
                             np.full(product.size, float(product.label))])
    p1 = joint.size / (joint.size + product.size)
    return features, labels, p1


# -----------------------
# Batches
# -----------------------

def _draw_without_replacement(rng, n: int, size: int, what: str) -> np.ndarray:
    if size < 0 or size > n:
        raise ConfigError(f"{what}: cannot draw {size} distinct indices from {n} samples")
    return rng.choice(n, size=size, replace=False)


def joint_batch(dataset: Dataset, b: int, seed) -> LabeledBatch:
    rng = make_rng(seed)
    idx = _draw_without_replacement(rng, dataset.n, b, "joint batch")
    return LabeledBatch(dataset.x[idx], dataset.y[idx], dataset.z[idx], label=1, origin="joint",
                        provenance={"indices": idx})


def isolated_knn_batch(dataset: Dataset, m: int, k: int, seed, structure: str = "auto",
                       isolated: Optional[Sequence[int]] = None) -> LabeledBatch:
    """
    Draw an isolation set I_m; every i in I_m borrows x from its k nearest
    z-neighbours outside I_m, giving the m*k samples (x_j, y_i, z_i).
    """
    n = dataset.n
    rng = make_rng(seed)
    if isolated is None:
        if m < 1 or k < 1:
            raise ConfigError(f"isolated k-NN needs m >= 1 and k >= 1, got m={m}, k={k}")
        iso = _draw_without_replacement(rng, n, m, "isolation set")
    else:
        iso = np.asarray(isolated, dtype=np.int64)
        if len(np.unique(iso)) != len(iso) or iso.min() < 0 or iso.max() >= n:
            raise ConfigError("Forced isolation set must hold distinct in-range indices")
        m = len(iso)
    if k < 1 or k > n - m:
        raise ConfigError(f"k={k} violates k <= n - m = {n - m}")

    outside = np.ones(n, dtype=bool)
    outside[iso] = False
    rest = np.flatnonzero(outside)

    if dataset.z.shape[1] == 0:
        # Nothing to condition on: every outside point is equally near
        neighbors = np.stack([rng.choice(rest, size=k, replace=False) for _ in iso])
    else:
        index = build_index(dataset.z[rest], rest, structure)
        neighbors = query_knn_many(index, dataset.z[iso], k)

    anchors = np.repeat(iso, k)
    sources = neighbors.reshape(-1)
    return LabeledBatch(
        dataset.x[sources], dataset.y[anchors], dataset.z[anchors], label=0, origin="isolated_knn",
        provenance={"m": m, "k": k, "isolated": iso, "anchors": anchors, "sources": sources}
    )


def midiff_product_batch_xz(dataset: Dataset, b: int, seed) -> LabeledBatch:
    """{(x_i, z_j)} with independent index draws; y is carried as a zero-width block."""
    rng = make_rng(seed)
    i1 = _draw_without_replacement(rng, dataset.n, b, "MI-Diff batch")
    i2 = _draw_without_replacement(rng, dataset.n, b, "MI-Diff batch")
    return LabeledBatch(dataset.x[i1], np.empty((b, 0)), dataset.z[i2], label=0, origin="midiff_xz",
                        provenance={"x_indices": i1, "z_indices": i2})


def midiff_product_batch_xyz(dataset: Dataset, b: int, seed) -> LabeledBatch:
    """{(x_i, y_j, z_j)}: x drawn independently of the co-indexed (y, z) pair."""
    rng = make_rng(seed)
    i1 = _draw_without_replacement(rng, dataset.n, b, "MI-Diff batch")
    i2 = _draw_without_replacement(rng, dataset.n, b, "MI-Diff batch")
    return LabeledBatch(dataset.x[i1], dataset.y[i2], dataset.z[i2], label=0, origin="midiff_xyz",
                        provenance={"x_indices": i1, "yz_indices": i2})


# -----------------------
# Schedules
# -----------------------

@dataclass(frozen=True)
class BatchSchedule:
    n: int
    k: int
    m: int
    b: int
    epsilon_0: Optional[float] = None

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise ConfigError(f"schedule needs k >= 1 and m >= 1, got k={self.k}, m={self.m}")
        if self.k > self.n - self.m:
            raise ConfigError(f"k={self.k} violates k <= n - m = {self.n - self.m}")
        if not 1 <= self.b <= self.n:
            raise ConfigError(f"joint batch size b={self.b} must lie in [1, n={self.n}]")

    @property
    def b_prime(self) -> int:
        return self.m * self.k

    @property
    def p1(self) -> float:
        return self.b / (self.b + self.b_prime)

    def check_ordering(self):
        """n - k >= m >= k, the ordering the concentration results rely on."""
        if not self.n - self.k >= self.m >= self.k:
            raise ConfigError(f"schedule violates n - k >= m >= k (n={self.n}, m={self.m}, k={self.k})")
        return self


def schedule_from_n(n: int, epsilon_0: float = 0.1, mode: str = "theory", k: Optional[int] = None,
                    b_target: Optional[int] = None) -> BatchSchedule:
    """
    theory:  k = ceil(n^(1/2 + eps0)), m = max(k, floor(b_target / k))
    fixed_k: user k, m = floor(b_target / k)
    b_target defaults to n so that b ~ b' (p1 close to 1/2).
    """
    b = n if b_target is None else int(b_target)
    if mode == "theory":
        if epsilon_0 <= 0:
            raise ConfigError(f"epsilon_0 must be positive, got {epsilon_0}")
        # Tolerance keeps exact powers (1e5 ** 0.6 = 1000) from rounding up
        k = int(math.ceil(n ** (0.5 + epsilon_0) - 1e-9))
        m = max(k, b // k)
    elif mode == "fixed_k":
        if k is None or k < 1:
            raise ConfigError("fixed_k mode needs a positive k")
        m = b // k
    else:
        raise ConfigError(f"Unknown schedule mode '{mode}'")

    if m < k:
        raise ConfigError(f"schedule violates m >= k (m={m}, k={k})")
    schedule = BatchSchedule(n=n, k=k, m=m, b=min(b, n),
                             epsilon_0=epsilon_0 if mode == "theory" else None).check_ordering()
    logger.info(f"Schedule ({mode}): n={n}, k={k}, m={m}, b={schedule.b}, b'={schedule.b_prime}")
    return schedule
