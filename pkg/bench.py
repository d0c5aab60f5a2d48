"""
Benchmark sweeps over the Gaussian chain.

- axes: n, k, d, or n at a fixed k/n ratio
- every cell gets its own derived seed; a failed cell is recorded and the sweep goes on
- long-format rows (cell, method, estimator, trial, estimate, truth) for external plotting
- Mann-Whitney U comparison of two method/estimator columns per cell
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import mannwhitneyu
from tqdm import tqdm

from classifier import NetConfig
from datagen import GaussianChainConfig, chain_truth, derive_seeds, sample_gaussian_chain
from errors import CMIError, ConfigError
from estimator import METHODS, run_methods

logger = logging.getLogger(__name__)

AXES = ("n", "k", "d", "ratio")
EXACT_LIMIT = 20


@dataclass(frozen=True)
class BenchSpec:
    axis: str
    values: Tuple[float, ...]
    chain: GaussianChainConfig = field(default_factory=GaussianChainConfig)
    n: int = 8000
    k: int = 2
    T: int = 3
    net: NetConfig = field(default_factory=lambda: NetConfig(input_dim=1))
    methods: Tuple[str, ...] = ("isolated_knn",)
    train_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.axis not in AXES:
            raise ConfigError(f"Unknown sweep axis '{self.axis}' (expected one of {AXES})")
        if not self.values:
            raise ConfigError("Sweep grid is empty")
        if any(m not in METHODS for m in self.methods):
            raise ConfigError(f"Unknown method in {self.methods} (expected {METHODS})")

    def cells(self) -> List[Dict]:
        cell_seeds = derive_seeds(self.seed, len(self.values))
        cells = []
        for i, (value, cell_seed) in enumerate(zip(self.values, cell_seeds)):
            n, k, d = self.n, self.k, int(self.chain.d)
            if self.axis == "n":
                n = int(value)
            elif self.axis == "k":
                k = int(value)
            elif self.axis == "d":
                d = int(value)
            else:
                n = int(value)
                k = max(1, int(round(self.k / self.n * n)))
            cells.append({"cell": i, "axis": self.axis, "value": value, "n": n, "k": k, "d": d, "seed": cell_seed})
        return cells


def run_cell(task) -> Tuple[List[Dict], Dict]:
    """Returns (long-format rows, cell status record)."""
    cell, spec = task
    status = {**cell, "status": "ok", "error": ""}
    try:
        chain = replace(spec.chain, d=cell["d"])
        data_seed, run_seed = derive_seeds(cell["seed"], 2)
        dataset = sample_gaussian_chain(chain, cell["n"], data_seed)
        reports = run_methods(dataset, spec.methods, spec.T, cell["k"], spec.net, run_seed,
                              train_fraction=spec.train_fraction)
    except CMIError as exc:
        logger.warning(f"Cell {cell['cell']} ({cell['axis']}={cell['value']}) failed: {exc}")
        status.update(status="failed", error=str(exc))
        return [], status

    truth = chain_truth(chain)
    rows = []
    for method, report in reports.items():
        for name in report.estimators:
            for trial, value in zip(report.trials["trial"], report.trials[name]):
                rows.append({**cell, "method": method, "estimator": name, "trial": int(trial),
                             "estimate": float(value), "truth": truth})
    return rows, status


@dataclass
class SweepResult:
    spec: BenchSpec
    frame: pd.DataFrame
    cells: pd.DataFrame

    @property
    def failed(self) -> bool:
        return bool((self.cells["status"] != "ok").any())

    def summary(self) -> pd.DataFrame:
        if self.frame.empty:
            return pd.DataFrame()
        keys = ["cell", "axis", "value", "n", "k", "d", "method", "estimator"]
        grouped = self.frame.groupby(keys, sort=True)
        df = grouped["estimate"].agg(["mean", "std", "min", "max"]).reset_index()
        df["truth"] = grouped["truth"].first().to_numpy()
        return df


def run_sweep(spec: BenchSpec, threads: int = 1) -> SweepResult:
    tasks = [(cell, spec) for cell in spec.cells()]
    logger.info(f"Sweep over {spec.axis}: {len(tasks)} cells, methods={list(spec.methods)}")
    if threads <= 1:
        results = [run_cell(task) for task in tqdm(tasks, desc="sweep cells", leave=False)]
    else:
        with ProcessPoolExecutor(max_workers=threads) as executor:
            results = list(tqdm(executor.map(run_cell, tasks), total=len(tasks), desc="sweep cells", leave=False))

    rows = [row for cell_rows, _ in results for row in cell_rows]
    frame = pd.DataFrame(rows, columns=["cell", "axis", "value", "n", "k", "d", "seed", "method",
                                        "estimator", "trial", "estimate", "truth"])
    cells = pd.DataFrame([status for _, status in results])
    return SweepResult(spec, frame, cells)


# -----------------------
# Mann-Whitney U
# -----------------------

def mann_whitney(first: Sequence[float], second: Sequence[float]) -> Dict:
    """
    Two-sided U test; U is reported for the first sample. Exact
    enumeration up to 20 values per group without ties, else the normal
    approximation with tie and continuity correction.
    """
    a = np.asarray(first, dtype=np.float64)
    b = np.asarray(second, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ConfigError("Mann-Whitney U needs two non-empty samples")
    pooled = np.concatenate([a, b])
    has_ties = len(np.unique(pooled)) < len(pooled)
    method = "exact" if max(len(a), len(b)) <= EXACT_LIMIT and not has_ties else "asymptotic"
    result = mannwhitneyu(a, b, alternative="two-sided", method=method)
    return {"U": float(result.statistic), "p_value": float(result.pvalue), "method": method,
            "n1": len(a), "n2": len(b)}


def compare_columns(frame: pd.DataFrame, first: str, second: str) -> pd.DataFrame:
    """U test per cell between two 'method:estimator' columns, e.g. isolated_knn:dv vs midiff:dv."""
    def pick(df, label):
        method, _, estimator = label.partition(":")
        return df[(df["method"] == method) & (df["estimator"] == estimator)]["estimate"].to_numpy()

    rows = []
    for cell, df in frame.groupby("cell", sort=True):
        a, b = pick(df, first), pick(df, second)
        if len(a) == 0 or len(b) == 0:
            logger.warning(f"Cell {cell}: nothing to compare for {first} vs {second}")
            continue
        rows.append({"cell": cell, "first": first, "second": second, **mann_whitney(a, b)})
    return pd.DataFrame(rows)
