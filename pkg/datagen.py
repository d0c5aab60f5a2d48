"""
Synthetic data for CMI experiments

- Gaussian chain X -> Y -> Z with a shared tridiagonal covariance
- Closed-form ground truth (nats)
- Component-wise maps, train/test split, CSV round trip
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import multivariate_normal
from sklearn.model_selection import train_test_split

from errors import ConfigError

logger = logging.getLogger(__name__)

ROLES = ("x", "y", "z")


# -----------------------
# Seeds
# -----------------------

def make_rng(seed) -> np.random.Generator:
    """Counter-based generator so every trial gets its own reproducible stream."""
    return np.random.Generator(np.random.Philox(seed))


def derive_seeds(master, count: int) -> List[int]:
    children = np.random.SeedSequence(master).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


# -----------------------
# Types
# -----------------------

@dataclass(frozen=True)
class GaussianChainConfig:
    sigma_x: float = 10.0
    sigma_y: float = 1.0
    sigma_z: float = 5.0
    d: int = 3
    rho: float = 0.0

    def __post_init__(self):
        for name in ("sigma_x", "sigma_y", "sigma_z"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f"d must be a positive integer, got {self.d}")
        if not abs(self.rho) < 0.5:
            raise ConfigError(f"|rho| must be < 0.5 for a positive definite Sigma_d, got {self.rho}")

    def sigma_d(self) -> np.ndarray:
        """Tridiagonal Sigma_d: ones on the diagonal, rho next to it."""
        d = int(self.d)
        return np.eye(d) + self.rho * (np.eye(d, k=1) + np.eye(d, k=-1))

    def cholesky(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.sigma_d())
        except np.linalg.LinAlgError as exc:
            raise ConfigError(f"Sigma_d is not positive definite (rho={self.rho})") from exc


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = _as_2d(self.x)
        self.y = _as_2d(self.y)
        self.z = _as_2d(self.z)
        n = len(self.x)
        if n < 1:
            raise ConfigError("Dataset needs at least one sample")
        if len(self.y) != n or len(self.z) != n:
            raise ConfigError(f"Role lengths differ: x={n}, y={len(self.y)}, z={len(self.z)}")

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.x.shape[1], self.y.shape[1], self.z.shape[1]

    def role(self, name: str) -> np.ndarray:
        if name not in ROLES:
            raise ConfigError(f"Unknown role '{name}' (expected one of {ROLES})")
        return getattr(self, name)

    def take(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.x[indices], self.y[indices], self.z[indices], dict(self.provenance))

    def features(self) -> np.ndarray:
        return np.hstack([self.x, self.y, self.z])


def _as_2d(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ConfigError(f"Expected a 2-D sample array, got shape {arr.shape}")
    return arr


# -----------------------
# Sampling
# -----------------------

def sample_gaussian_chain(config: GaussianChainConfig, n: int, seed) -> Dataset:
    """
    X ~ N(0, sx^2 S), Y ~ N(X, sy^2 S), Z ~ N(Y, sz^2 S) with S = Sigma_d.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    rng = make_rng(seed)
    chol = config.cholesky()
    d = int(config.d)

    noise = rng.standard_normal((3, n, d)) @ chol.T
    x = config.sigma_x * noise[0]
    y = x + config.sigma_y * noise[1]
    z = y + config.sigma_z * noise[2]

    provenance = {"generator": "gaussian_chain", "seed": seed, "n": n,
                  "sigma_x": config.sigma_x, "sigma_y": config.sigma_y,
                  "sigma_z": config.sigma_z, "d": d, "rho": config.rho}
    return Dataset(x, y, z, provenance)


def chain_covariance(config: GaussianChainConfig) -> np.ndarray:
    """Joint covariance of the stacked vector (X, Y, Z)."""
    a, b, c = config.sigma_x ** 2, config.sigma_y ** 2, config.sigma_z ** 2
    blocks = np.array([[a, a, a],
                       [a, a + b, a + b],
                       [a, a + b, a + b + c]])
    return np.kron(blocks, config.sigma_d())


def sample_conditional_product(config: GaussianChainConfig, n: int, seed) -> Dataset:
    """Exact draws from p(x|z) p(y,z): (y, z) from the chain, x re-drawn given z only."""
    base = sample_gaussian_chain(config, n, seed)
    d = int(config.d)
    cov = chain_covariance(config)
    xs, zs = np.arange(d), np.arange(2 * d, 3 * d)

    gain = cov[np.ix_(xs, zs)] @ np.linalg.inv(cov[np.ix_(zs, zs)])
    cond_cov = cov[np.ix_(xs, xs)] - gain @ cov[np.ix_(zs, xs)]
    cond_chol = np.linalg.cholesky(cond_cov)

    rng = make_rng(derive_seeds(seed, 1)[0])
    x = base.z @ gain.T + rng.standard_normal((n, d)) @ cond_chol.T
    provenance = dict(base.provenance, generator="gaussian_chain_product")
    return Dataset(x, base.y, base.z, provenance)


# -----------------------
# Ground truth
# -----------------------

def true_cmi_xy_given_z(config: GaussianChainConfig) -> float:
    """d/2 log(1 + sx^2/sy^2) - d/2 log(1 + sx^2/(sy^2 + sz^2)), nats, Sigma_d = I."""
    if config.rho != 0:
        raise ConfigError("closed-form I(X;Y|Z) is only provided for rho = 0; use gaussian_cmi")
    sx2, sy2, sz2 = config.sigma_x ** 2, config.sigma_y ** 2, config.sigma_z ** 2
    half_d = config.d / 2.0
    return half_d * math.log1p(sx2 / sy2) - half_d * math.log1p(sx2 / (sy2 + sz2))


def true_cmi_xz_given_y(config: GaussianChainConfig) -> float:
    # Markov chain X -> Y -> Z
    return 0.0


def gaussian_cmi(cov: np.ndarray, x_idx: Sequence[int], y_idx: Sequence[int],
                 z_idx: Sequence[int] = ()) -> float:
    """I(X;Y|Z) of a jointly Gaussian vector, from its covariance."""
    def logdet(idx):
        idx = list(idx)
        if not idx:
            return 0.0
        sign, value = np.linalg.slogdet(cov[np.ix_(idx, idx)])
        if sign <= 0:
            raise ConfigError("covariance block is not positive definite")
        return value

    x_idx, y_idx, z_idx = list(x_idx), list(y_idx), list(z_idx)
    return 0.5 * (logdet(x_idx + z_idx) + logdet(y_idx + z_idx)
                  - logdet(z_idx) - logdet(x_idx + y_idx + z_idx))


def chain_truth(config: GaussianChainConfig) -> float:
    """I(X;Y|Z) for any admissible rho."""
    d = int(config.d)
    return gaussian_cmi(chain_covariance(config), range(d), range(d, 2 * d), range(2 * d, 3 * d))


def true_cmi_split(config: GaussianChainConfig, d1: int) -> Tuple[float, float]:
    """(I(X;Y1|Z), I(X;Y2|Y1,Z)) for Y split into its first d1 and last d - d1 coordinates."""
    d = int(config.d)
    if not 0 < d1 < d:
        raise ConfigError(f"d1 must lie in (0, {d}), got {d1}")
    cov = chain_covariance(config)
    xs = range(d)
    y1 = range(d, d + d1)
    y2 = range(d + d1, 2 * d)
    zs = range(2 * d, 3 * d)
    part1 = gaussian_cmi(cov, xs, y1, zs)
    part2 = gaussian_cmi(cov, xs, y2, list(y1) + list(zs))
    return part1, part2


def oracle_log_ratio(config: GaussianChainConfig, x, y, z) -> np.ndarray:
    """log p(x,y,z) / (p(x|z) p(y,z)) = log p(x|y,z) - log p(x|z) for the chain."""
    d = int(config.d)
    x, y, z = _as_2d(x), _as_2d(y), _as_2d(z)
    cov = chain_covariance(config)
    xs = np.arange(d)
    yz = np.arange(d, 3 * d)
    zs = np.arange(2 * d, 3 * d)

    def conditional_logpdf(cond_idx, cond_values):
        gain = cov[np.ix_(xs, cond_idx)] @ np.linalg.inv(cov[np.ix_(cond_idx, cond_idx)])
        cond_cov = cov[np.ix_(xs, xs)] - gain @ cov[np.ix_(cond_idx, xs)]
        resid = x - cond_values @ gain.T
        return np.atleast_1d(multivariate_normal(mean=np.zeros(d), cov=cond_cov).logpdf(resid))

    return conditional_logpdf(yz, np.hstack([y, z])) - conditional_logpdf(zs, z)


# -----------------------
# Transforms & splits
# -----------------------

COMPONENT_MAPS = {
    "identity": lambda v: v,
    "tanh": lambda v, a=0.05: np.tanh(a * v),
    "affine": lambda v, a=1.0, b=0.0: a * v + b,
}


def apply_componentwise(dataset: Dataset, role: str, name: str, **params) -> Dataset:
    """Apply a registered scalar map element-wise to one role; I(f(X);Y|Z) = I(X;Y|Z) for injective f."""
    if name not in COMPONENT_MAPS:
        raise ConfigError(f"Unknown component map '{name}' (registered: {sorted(COMPONENT_MAPS)})")
    values = {r: dataset.role(r) for r in ROLES}
    values[role] = COMPONENT_MAPS[name](values[role], **params)
    provenance = dict(dataset.provenance)
    provenance["transforms"] = provenance.get("transforms", []) + [{"role": role, "map": name, **params}]
    return Dataset(values["x"], values["y"], values["z"], provenance)


def regroup(dataset: Dataset, x, y, z) -> Dataset:
    """
    Re-assign column blocks to roles. Each of x, y, z is a list of
    (role, slice) pairs; an empty list gives a zero-width role.
    """
    def gather(blocks):
        parts = [dataset.role(r)[:, cols] for r, cols in blocks]
        if not parts:
            return np.empty((dataset.n, 0))
        return np.hstack(parts)

    return Dataset(gather(x), gather(y), gather(z), dict(dataset.provenance))


def split_dataset(dataset: Dataset, train_fraction: float, seed) -> Tuple[Dataset, Dataset]:
    """Random disjoint split; the train side gets floor(train_fraction * n) samples."""
    if not 0 < train_fraction < 1:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(math.floor(train_fraction * dataset.n))
    if n_train < 1 or n_train >= dataset.n:
        raise ConfigError(f"train_fraction={train_fraction} leaves an empty part for n={dataset.n}")

    train_idx, test_idx = train_test_split(
        np.arange(dataset.n), train_size=n_train, random_state=int(seed) % (2 ** 32), shuffle=True
    )
    return dataset.take(train_idx), dataset.take(test_idx)


# -----------------------
# CSV interface
# -----------------------

def dataset_columns(dims: Sequence[int]) -> List[str]:
    return [f"{role}_{i}" for role, dim in zip(ROLES, dims) for i in range(dim)]


def save_dataset_csv(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(dataset.features(), columns=dataset_columns(dataset.dims))
    df.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Saved {dataset.n} samples to {path}")
    return path


def load_dataset_csv(path, dims: Optional[Sequence[int]] = None) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Dataset file not found: {path}")
    df = pd.read_csv(path, float_precision="round_trip")

    if dims is None:
        dims = [sum(1 for c in df.columns if c.startswith(f"{role}_")) for role in ROLES]
    expected = dataset_columns(dims)
    for col in expected:
        if col not in df.columns:
            raise ConfigError(f"Missing column '{col}' in {path}")

    values = df[expected].to_numpy(dtype=np.float64)
    if not np.isfinite(values).all():
        raise ConfigError(f"Non-numeric or missing values in {path}")
    cuts = np.cumsum(dims)[:-1]
    x, y, z = np.split(values, cuts, axis=1)
    return Dataset(x, y, z, {"source": str(path)})
