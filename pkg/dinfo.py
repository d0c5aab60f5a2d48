"""
Directed information between time series.

I(X -> Y || Z) is reduced to a single CMI on lag-embedded windows,
I(X^l ; Y_t | Z^l, Y^{l-1}), and estimated with the resampled-trial loop. Three series
give a directed-information graph with six weighted links.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler
from tqdm import tqdm

from classifier import NetConfig
from datagen import Dataset, derive_seeds
from errors import ConfigError
from estimator import run_algorithm1

logger = logging.getLogger(__name__)

DROP_POLICIES = ("drop_row", "error")


@dataclass
class TimeSeriesTable:
    frame: pd.DataFrame
    period: Optional[str] = None
    units: Optional[str] = None
    rows_read: int = 0
    rows_dropped: int = 0

    def __post_init__(self):
        if self.frame.empty:
            raise ConfigError("Time-series table is empty")
        if self.frame.isna().any().any():
            raise ConfigError("Time-series table holds missing values")
        if not self.rows_read:
            self.rows_read = len(self.frame)

    @property
    def names(self) -> List[str]:
        return [str(c) for c in self.frame.columns]

    @property
    def length(self) -> int:
        return len(self.frame)

    def column(self, name: str) -> pd.Series:
        if name not in self.frame.columns:
            raise ConfigError(f"Unknown series '{name}' (have {self.names})")
        return self.frame[name]

    @classmethod
    def from_arrays(cls, columns: Dict[str, Sequence[float]], period: Optional[str] = None,
                    units: Optional[str] = None) -> "TimeSeriesTable":
        lengths = {len(v) for v in columns.values()}
        if len(lengths) > 1:
            raise ConfigError(f"Series have different lengths: {sorted(lengths)}")
        return cls(pd.DataFrame({k: np.asarray(v, dtype=np.float64) for k, v in columns.items()}),
                   period=period, units=units)


def ingest_csv(path, columns: Optional[Sequence[str]] = None, drop_policy: str = "drop_row",
               period: Optional[str] = None, units: Optional[str] = None) -> TimeSeriesTable:
    """One row per time step; cells that do not parse as numbers count as gaps."""
    if drop_policy not in DROP_POLICIES:
        raise ConfigError(f"Unknown drop policy '{drop_policy}' (expected one of {DROP_POLICIES})")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Time-series file not found: {path}")

    try:
        header = pd.read_csv(path, header=None, nrows=1, dtype=str).iloc[0].tolist()
        df = pd.read_csv(path, dtype=str)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigError(f"Cannot parse {path}: {exc}") from exc

    duplicates = sorted({h for h in header if header.count(h) > 1})
    if duplicates:
        raise ConfigError(f"Duplicate column names in {path}: {duplicates}")

    columns = list(df.columns) if columns is None else list(columns)
    for col in columns:
        if col not in df.columns:
            raise ConfigError(f"Missing column '{col}' in {path}")

    values = df[columns].apply(pd.to_numeric, errors="coerce")
    bad = values.isna().any(axis=1) | ~np.isfinite(values.to_numpy(dtype=np.float64)).all(axis=1)
    rows_read = len(values)
    if bad.any():
        if drop_policy == "error":
            raise ConfigError(f"Row {int(np.flatnonzero(bad.to_numpy())[0]) + 1} of {path} has a missing "
                              f"or non-numeric value")
        values = values[~bad].reset_index(drop=True)
        logger.warning(f"Dropped {int(bad.sum())} of {rows_read} rows with gaps from {path}")
    if values.empty:
        raise ConfigError(f"No usable rows in {path}")

    return TimeSeriesTable(values.astype(np.float64), period=period, units=units,
                           rows_read=rows_read, rows_dropped=int(bad.sum()))


# -----------------------
# Lag embedding
# -----------------------

def _windows(series: pd.Series, l: int, first_lag: int = 0) -> pd.DataFrame:
    """Columns lag l-1 .. first_lag of series, oldest first."""
    name = series.name
    return pd.concat({f"{name}_lag{j}": series.shift(j) for j in range(l - 1, first_lag - 1, -1)}, axis=1)


def lag_embed(table: TimeSeriesTable, source: str, target: str, conditioned: Sequence[str], l: int,
              standardize: bool = True) -> Dataset:
    """
    Window t (stride 1) maps to X = x_{t-l+1..t}, Y = y_t and
    Z = (z_{t-l+1..t} for each conditioned series, y_{t-l+1..t-1}).
    """
    if l < 1:
        raise ConfigError(f"Markov order l must be >= 1, got {l}")
    if l > table.length:
        raise ConfigError(f"l={l} exceeds the series length {table.length}")
    names = [source, target, *conditioned]
    if len(set(names)) != len(names):
        raise ConfigError(f"source, target and conditioned series must be distinct, got {names}")

    frame = pd.DataFrame({name: table.column(name) for name in names})
    if standardize:
        frame = pd.DataFrame(StandardScaler().fit_transform(frame), columns=frame.columns)

    x = _windows(frame[source], l)
    y = frame[[target]]
    z_parts = [_windows(frame[name], l) for name in conditioned]
    if l > 1:
        z_parts.append(_windows(frame[target], l, first_lag=1))
    z = pd.concat(z_parts, axis=1) if z_parts else pd.DataFrame(index=frame.index)

    keep = slice(l - 1, None)
    provenance = {"source": source, "target": target, "conditioned": list(conditioned), "l": l,
                  "standardized": standardize, "x_columns": list(x.columns), "z_columns": list(z.columns)}
    return Dataset(x.iloc[keep].to_numpy(), y.iloc[keep].to_numpy(),
                   z.iloc[keep].to_numpy().reshape(len(frame) - l + 1, -1), provenance)


# -----------------------
# DI estimation
# -----------------------

@dataclass(frozen=True)
class DIConfig:
    net: NetConfig = field(default_factory=lambda: NetConfig(input_dim=1))
    T: int = 1
    k: int = 2
    b: Optional[int] = None
    m: Optional[int] = None
    estimator: str = "dv"
    train_fraction: float = 0.5
    standardize: bool = True
    structure: str = "auto"

    def __post_init__(self):
        if self.estimator not in ("dv", "nwj", "ldr"):
            raise ConfigError(f"Unknown estimator '{self.estimator}' for DI")


def estimate_di(table: TimeSeriesTable, source: str, target: str, conditioned: Sequence[str], l: int,
                config: DIConfig, seed) -> float:
    dataset = lag_embed(table, source, target, conditioned, l, config.standardize)
    n_train = int(np.floor(config.train_fraction * dataset.n))
    b = config.b if config.b is not None else min(n_train, dataset.n - n_train)
    report = run_algorithm1(dataset, T=config.T, b=b, k=config.k, net=config.net, seed=seed, m=config.m,
                            train_fraction=config.train_fraction, structure=config.structure)
    value = report.averages[config.estimator]
    logger.info(f"I({source} -> {target} || {','.join(conditioned) or '-'}) = {value:.4f} nats")
    return value


@dataclass
class DIGraph:
    nodes: List[str]
    weights: np.ndarray
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.nodes), len(self.nodes)):
            raise ConfigError("DI weight matrix must be square over the node list")
        np.fill_diagonal(self.weights, 0.0)

    def weight(self, a: str, b: str) -> float:
        return float(self.weights[self.nodes.index(a), self.nodes.index(b)])

    def to_payload(self) -> Dict:
        adjacency = {a: {b: self.weight(a, b) for b in self.nodes if b != a} for a in self.nodes}
        return {"nodes": list(self.nodes), "adjacency": adjacency, "matrix": self.weights.tolist(),
                "metadata": self.metadata}

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.weights, index=self.nodes, columns=self.nodes)
        df.index.name = "source"
        return df


def _link_task(task):
    table, a, b, rest, l, config, seed = task
    return estimate_di(table, a, b, rest, l, config, seed)


def build_digraph(table: TimeSeriesTable, nodes: Sequence[str], l: int, config: DIConfig, seed,
                  threads: int = 1) -> DIGraph:
    """Weight a -> b is I(a -> b || c), c being the remaining node."""
    nodes = list(nodes)
    if len(nodes) != 3 or len(set(nodes)) != 3:
        raise ConfigError(f"build_digraph takes exactly 3 distinct series, got {nodes}")

    links = [(a, b) for a in nodes for b in nodes if a != b]
    link_seeds = derive_seeds(seed, len(links))
    tasks = [(table, a, b, [c for c in nodes if c not in (a, b)], l, config, s)
             for (a, b), s in zip(links, link_seeds)]

    if threads <= 1:
        values = [_link_task(task) for task in tqdm(tasks, desc="DI links", leave=False)]
    else:
        with ProcessPoolExecutor(max_workers=threads) as executor:
            values = list(tqdm(executor.map(_link_task, tasks), total=len(tasks), desc="DI links", leave=False))

    weights = np.zeros((3, 3))
    for (a, b), value in zip(links, values):
        weights[nodes.index(a), nodes.index(b)] = value
    metadata = {"l": l, "estimator": config.estimator, "T": config.T, "k": config.k, "seed": seed,
                "link_seeds": dict(zip([f"{a}->{b}" for a, b in links], link_seeds)),
                "standardized": config.standardize, "rows_read": table.rows_read,
                "rows_dropped": table.rows_dropped, "period": table.period, "units": table.units}
    return DIGraph(nodes, weights, metadata)
