"""
Command-line front end.

    python cli.py synth --preset d3 --n 80000 --trials 5
    python cli.py estimate --data my.csv --dims 3,3,3
    python cli.py digraph --series traffic.csv --nodes a,b,c --lag 5
    python cli.py bench --axis n --values 2000,4000,8000 --estimators dv,midiff

Parameters resolve as built-in defaults < preset < --config file < flags.
Artifacts are only written once every requested computation has succeeded.
"""
import argparse
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, get_type_hints

import numpy as np
import pandas as pd

from bench import BenchSpec, compare_columns, run_sweep
from classifier import NetConfig, checkpoint_payload
from datagen import (Dataset, GaussianChainConfig, apply_componentwise, chain_truth, derive_seeds,
                     load_dataset_csv, regroup, sample_gaussian_chain, true_cmi_split)
from dinfo import DIConfig, build_digraph, ingest_csv
from errors import CMIError, ConfigError
from estimator import EstimateReport, default_batch_size, run_methods
from reports import content_hash, save_frame, save_json
from resample import schedule_from_n
from settings import CONFIG_VERSION, DEFAULT_OUT_DIR, DEFAULT_THREADS, configure_logging, load_config_file
from theory import BoundParams, diagnostic_table

logger = logging.getLogger(__name__)

COMMANDS = ("synth", "estimate", "digraph", "bench")
ESTIMATOR_CHOICES = ("dv", "nwj", "ldr", "midiff")
ALL = slice(None)

PRESETS = {
    "d3": {"sigma_x": 10.0, "sigma_y": 1.0, "sigma_z": 5.0, "d": 3},
    "zero": {"sigma_x": 10.0, "sigma_y": 1.0, "sigma_z": 5.0, "d": 3},
    "dim": {"sigma_x": 10.0, "sigma_y": 3.0, "sigma_z": 5.0},
    "tanh": {"sigma_x": 10.0, "sigma_y": 1.0, "sigma_z": 5.0, "d": 1, "tanh_a": 0.05},
    "dpi": {"d": 5, "d1": 1},
    "custom": {},
}


@dataclass
class RunConfig:
    command: str = "synth"
    preset: str = "d3"
    # Gaussian chain
    sigma_x: float = 10.0
    sigma_y: float = 1.0
    sigma_z: float = 5.0
    d: int = 3
    d1: int = 1
    rho: float = 0.0
    tanh_a: float = 0.05
    # Schedule
    n: int = 80000
    k: int = 2
    m: Optional[int] = None
    b: Optional[int] = None
    schedule: str = "fixed_k"
    epsilon_0: float = 0.1
    trials: int = 5
    train_fraction: float = 0.5
    structure: str = "auto"
    # Network
    epochs: int = 200
    tau: float = 1e-3
    learning_rate: float = 1e-3
    hidden: str = "64,64"
    minibatch_size: int = 128
    estimators: str = "dv,nwj,ldr"
    seed: int = 0
    threads: int = DEFAULT_THREADS
    out_dir: str = str(DEFAULT_OUT_DIR)
    diagnostics: bool = False
    track_epochs: bool = False
    checkpoints: bool = False
    config: Optional[str] = None
    # estimate
    data: Optional[str] = None
    dims: Optional[str] = None
    # digraph
    series: Optional[str] = None
    nodes: Optional[str] = None
    lag: int = 5
    drop_policy: str = "drop_row"
    # bench
    axis: str = "n"
    values: str = "2000,4000,8000"
    compare: Optional[str] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"Unknown command '{self.command}'")
        if self.preset not in PRESETS:
            raise ConfigError(f"Unknown preset '{self.preset}' (expected one of {sorted(PRESETS)})")
        unknown = [e for e in self.estimator_list if e not in ESTIMATOR_CHOICES]
        if unknown or not self.estimator_list:
            raise ConfigError(f"--estimators must pick from {ESTIMATOR_CHOICES}, got '{self.estimators}'")
        if self.n < 2 or self.k < 1 or self.trials < 1 or self.epochs < 0 or self.lag < 1:
            raise ConfigError("n >= 2, k >= 1, trials >= 1, epochs >= 0 and lag >= 1 are required")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.schedule not in ("fixed_k", "theory"):
            raise ConfigError(f"Unknown schedule '{self.schedule}' (fixed_k or theory)")
        if self.preset == "dpi" and not 0 < self.d1 < self.d:
            raise ConfigError(f"dpi preset needs 0 < d1 < d, got d1={self.d1}, d={self.d}")

    @property
    def estimator_list(self) -> List[str]:
        return [e.strip() for e in self.estimators.split(",") if e.strip()]

    @property
    def methods(self) -> List[str]:
        chosen = self.estimator_list
        methods = ["isolated_knn"] if any(e in ("dv", "nwj", "ldr") for e in chosen) else []
        return methods + (["midiff"] if "midiff" in chosen else [])

    def chain(self) -> GaussianChainConfig:
        return GaussianChainConfig(self.sigma_x, self.sigma_y, self.sigma_z, self.d, self.rho)

    def net(self) -> NetConfig:
        hidden = tuple(int(w) for w in self.hidden.split(",") if w.strip())
        return NetConfig(input_dim=1, hidden=hidden, tau=self.tau, learning_rate=self.learning_rate,
                         minibatch_size=self.minibatch_size, epochs=self.epochs, init_seed=self.seed)

    def to_dict(self) -> Dict:
        """Resolved parameters; the worker count is left out so reports match across --threads."""
        values = asdict(self)
        values.pop("threads")
        return {"config_version": CONFIG_VERSION, **values}


# -----------------------
# Config resolution
# -----------------------

_FIELD_TYPES = get_type_hints(RunConfig)


def _coerce(key: str, raw):
    kind = _FIELD_TYPES[key]
    kind = next((t for t in getattr(kind, "__args__", ()) if t is not type(None)), kind)
    if not isinstance(raw, str):
        return raw
    try:
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"Config value {key.upper()}={raw!r} is not a valid {kind.__name__}") from exc


def resolve_config(flags: Dict) -> RunConfig:
    flags = dict(flags)
    file_values = load_config_file(flags["config"]) if flags.get("config") else {}
    for key in file_values:
        if key not in _FIELD_TYPES or key == "command":
            raise ConfigError(f"Unknown config key '{key.upper()}'")

    preset = flags.get("preset", file_values.get("preset", RunConfig.preset))
    if preset not in PRESETS:
        raise ConfigError(f"Unknown preset '{preset}' (expected one of {sorted(PRESETS)})")
    values = dict(PRESETS[preset])
    values.update({key: _coerce(key, raw) for key, raw in file_values.items()})
    values.update(flags)
    return RunConfig(**values)


def resolve_schedule(cfg: RunConfig, n: int) -> Tuple[int, Optional[int], int]:
    """(k, m, b) for a dataset of n samples."""
    b = cfg.b if cfg.b is not None else default_batch_size(n, cfg.train_fraction)
    if cfg.schedule == "theory":
        n_train = int(np.floor(cfg.train_fraction * n))
        schedule = schedule_from_n(n_train, cfg.epsilon_0, mode="theory", b_target=b)
        return schedule.k, schedule.m, schedule.b
    return cfg.k, cfg.m, b


# -----------------------
# Artifacts
# -----------------------

def write_artifacts(out_dir: Path, artifacts: Dict) -> List[Path]:
    written = []
    for name, obj in artifacts.items():
        path = out_dir / name
        written.append(save_frame(path, obj) if isinstance(obj, pd.DataFrame) else save_json(path, obj))
    logger.info(f"Wrote {len(written)} artifacts to {out_dir}")
    return written


def _report_artifacts(prefix: str, report: EstimateReport, cfg: RunConfig, input_hash: str) -> Dict:
    payload = {"run_config": cfg.to_dict(), "config_hash": content_hash(cfg.to_dict()),
               "input_hash": input_hash, **report.to_payload()}
    artifacts = {
        f"{prefix}_report.json": payload,
        f"{prefix}_trials.csv": report.to_frame(),
        f"{prefix}_timings.json": {"threads": cfg.threads, "trials": report.timings},
    }
    if report.epoch_trace is not None:
        artifacts[f"{prefix}_epochs.csv"] = report.epoch_trace
    for label, clf in report.classifiers:
        artifacts[f"{prefix}_checkpoints/{label}.json"] = checkpoint_payload(clf)
    return artifacts


def _summary_rows(target: str, reports: Dict[str, EstimateReport], chosen: List[str],
                  truth: Optional[float]) -> List[Dict]:
    rows = []
    for method, report in reports.items():
        extremes = report.extremes()
        for name in report.estimators:
            if method == "isolated_knn" and name not in chosen:
                continue
            rows.append({"target": target, "method": method, "estimator": name,
                         "average": report.averages[name], "min": extremes[name]["min"],
                         "max": extremes[name]["max"], "std": extremes[name]["std"], "truth": truth})
    return rows


def _diagnostics(report: EstimateReport, dataset: Dataset, tau: float) -> pd.DataFrame:
    cfg = report.config
    trials = report.trials
    params = BoundParams(n=cfg["n_train"], m=cfg["m"], k=cfg["k"], b=cfg["b"], tau=tau, p1=cfg["p1"],
                         d=max(1, dataset.dims[2]), B=float(trials["lipschitz_proxy"].mean()),
                         K=float(trials["parameter_norm"].max()), h=int(trials["n_parameters"].iloc[0]))
    return diagnostic_table(params)


# -----------------------
# Commands
# -----------------------

def build_targets(cfg: RunConfig, seed) -> List[Tuple[str, Dataset, Optional[float]]]:
    """(label, dataset, closed-form truth) for each quantity a preset estimates."""
    chain = cfg.chain()
    data = sample_gaussian_chain(chain, cfg.n, seed)
    truth = chain_truth(chain)
    if cfg.preset == "zero":
        swapped = regroup(data, x=[("x", ALL)], y=[("z", ALL)], z=[("y", ALL)])
        return [("I(X;Z|Y)", swapped, 0.0)]
    if cfg.preset == "tanh":
        return [("I(f(X);Y|Z)", apply_componentwise(data, "x", "tanh", a=cfg.tanh_a), truth)]
    if cfg.preset == "dpi":
        d1 = cfg.d1
        part1, part2 = true_cmi_split(chain, d1)
        first = regroup(data, x=[("x", ALL)], y=[("y", slice(0, d1))], z=[("z", ALL)])
        second = regroup(data, x=[("x", ALL)], y=[("y", slice(d1, None))], z=[("y", slice(0, d1)), ("z", ALL)])
        return [("I(X;Y|Z)", data, truth), ("I(X;Y1|Z)", first, part1), ("I(X;Y2|Y1,Z)", second, part2)]
    return [("I(X;Y|Z)", data, truth)]


def cmd_synth(cfg: RunConfig) -> int:
    data_seed, run_seed = derive_seeds(cfg.seed, 2)
    targets = build_targets(cfg, data_seed)
    target_seeds = derive_seeds(run_seed, len(targets))
    net = cfg.net()

    artifacts, rows = {}, []
    for i, ((label, dataset, truth), seed) in enumerate(zip(targets, target_seeds)):
        k, m, b = resolve_schedule(cfg, dataset.n)
        reports = run_methods(dataset, cfg.methods, cfg.trials, k, net, seed, b=b, m=m,
                              train_fraction=cfg.train_fraction, threads=cfg.threads, structure=cfg.structure,
                              track_epochs=cfg.track_epochs, keep_classifiers=cfg.checkpoints)
        input_hash = content_hash(dataset.provenance)
        for method, report in reports.items():
            artifacts.update(_report_artifacts(f"target{i}_{method}", report, cfg, input_hash))
        if cfg.diagnostics and "isolated_knn" in reports:
            artifacts[f"target{i}_diagnostics.csv"] = _diagnostics(reports["isolated_knn"], dataset, cfg.tau)
        rows.extend(_summary_rows(label, reports, cfg.estimator_list, truth))

    summary = pd.DataFrame(rows)
    if cfg.preset == "dpi":
        parts = summary[summary["target"] != "I(X;Y|Z)"]
        additivity = parts.groupby(["method", "estimator"], sort=False)["average"].sum().reset_index()
        additivity.insert(0, "target", "I(X;Y1|Z)+I(X;Y2|Y1,Z)")
        additivity["truth"] = targets[0][2]
        summary = pd.concat([summary, additivity], ignore_index=True)
    artifacts["summary.csv"] = summary

    write_artifacts(Path(cfg.out_dir) / f"synth_{cfg.preset}", artifacts)
    print(f"📊 synth preset={cfg.preset} n={cfg.n} T={cfg.trials} E={cfg.epochs} tau={cfg.tau}")
    print(summary.to_string(index=False))
    return 0


def cmd_estimate(cfg: RunConfig) -> int:
    if not cfg.data:
        raise ConfigError("estimate needs --data <csv>")
    dims = [int(v) for v in cfg.dims.split(",")] if cfg.dims else None
    if dims is not None and len(dims) != 3:
        raise ConfigError(f"--dims takes three comma-separated sizes, got '{cfg.dims}'")
    path = Path(cfg.data)
    dataset = load_dataset_csv(path, dims)
    k, m, b = resolve_schedule(cfg, dataset.n)
    reports = run_methods(dataset, cfg.methods, cfg.trials, k, cfg.net(), cfg.seed, b=b, m=m,
                          train_fraction=cfg.train_fraction, threads=cfg.threads, structure=cfg.structure,
                          track_epochs=cfg.track_epochs, keep_classifiers=cfg.checkpoints)

    input_hash = content_hash(path)
    artifacts = {}
    for method, report in reports.items():
        artifacts.update(_report_artifacts(method, report, cfg, input_hash))
    if cfg.diagnostics and "isolated_knn" in reports:
        artifacts["diagnostics.csv"] = _diagnostics(reports["isolated_knn"], dataset, cfg.tau)
    summary = pd.DataFrame(_summary_rows(path.name, reports, cfg.estimator_list, None)).drop(columns="truth")
    artifacts["summary.csv"] = summary

    write_artifacts(Path(cfg.out_dir) / f"estimate_{path.stem}", artifacts)
    print(f"📊 estimate {path} n={dataset.n} dims={dataset.dims}")
    print(summary.to_string(index=False))
    return 0


def cmd_digraph(cfg: RunConfig) -> int:
    if not cfg.series or not cfg.nodes:
        raise ConfigError("digraph needs --series <csv> and --nodes a,b,c")
    nodes = [v.strip() for v in cfg.nodes.split(",")]
    path = Path(cfg.series)
    table = ingest_csv(path, nodes, cfg.drop_policy)
    estimator = next((e for e in cfg.estimator_list if e in ("dv", "nwj", "ldr")), "dv")
    config = DIConfig(net=cfg.net(), T=cfg.trials, k=cfg.k, b=cfg.b, m=cfg.m, estimator=estimator,
                      train_fraction=cfg.train_fraction, structure=cfg.structure)
    graph = build_digraph(table, nodes, cfg.lag, config, cfg.seed, threads=cfg.threads)

    payload = {"run_config": cfg.to_dict(), "config_hash": content_hash(cfg.to_dict()),
               "input_hash": content_hash(path), **graph.to_payload()}
    write_artifacts(Path(cfg.out_dir) / f"digraph_{path.stem}",
                    {"graph.json": payload, "graph.csv": graph.to_frame().reset_index()})
    print(f"🕸️ DI graph over {nodes} (l={cfg.lag}, {estimator}, {table.rows_dropped} rows dropped)")
    print(graph.to_frame().to_string())
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    values = tuple(float(v) for v in cfg.values.split(",") if v.strip())
    spec = BenchSpec(axis=cfg.axis, values=values, chain=cfg.chain(), n=cfg.n, k=cfg.k, T=cfg.trials,
                     net=cfg.net(), methods=tuple(cfg.methods), train_fraction=cfg.train_fraction, seed=cfg.seed)
    result = run_sweep(spec, threads=cfg.threads)

    summary = result.summary()
    if not summary.empty:
        chosen = cfg.estimator_list
        summary = summary[(summary["method"] != "isolated_knn") | summary["estimator"].isin(chosen)]
    artifacts = {"sweep.csv": result.frame, "cells.csv": result.cells, "summary.csv": summary,
                 "run_config.json": {"run_config": cfg.to_dict(), "config_hash": content_hash(cfg.to_dict())}}
    if cfg.compare:
        first, _, second = cfg.compare.partition(",")
        artifacts["mann_whitney.csv"] = compare_columns(result.frame, first.strip(), second.strip())

    write_artifacts(Path(cfg.out_dir) / f"bench_{cfg.axis}", artifacts)
    print(f"📈 bench over {cfg.axis}: {len(values)} cells, "
          f"{int((result.cells['status'] != 'ok').sum())} failed")
    if not summary.empty:
        print(summary.to_string(index=False))
    if "mann_whitney.csv" in artifacts and not artifacts["mann_whitney.csv"].empty:
        print(artifacts["mann_whitney.csv"].to_string(index=False))
    return 1 if result.failed else 0


HANDLERS = {"synth": cmd_synth, "estimate": cmd_estimate, "digraph": cmd_digraph, "bench": cmd_bench}


# -----------------------
# Parser
# -----------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=str, help="KEY=VALUE run-config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out-dir", dest="out_dir", type=str)
    common.add_argument("--log-level", dest="log_level", type=str)
    common.add_argument("--n", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--m", type=int)
    common.add_argument("--b", type=int)
    common.add_argument("--schedule", choices=("fixed_k", "theory"))
    common.add_argument("--epsilon-0", dest="epsilon_0", type=float)
    common.add_argument("--trials", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--tau", type=float)
    common.add_argument("--lr", dest="learning_rate", type=float)
    common.add_argument("--hidden", type=str, help="comma-separated layer widths")
    common.add_argument("--minibatch-size", dest="minibatch_size", type=int)
    common.add_argument("--train-fraction", dest="train_fraction", type=float)
    common.add_argument("--structure", choices=("auto", "kdtree", "brute"))
    common.add_argument("--estimators", type=str, help="comma-separated subset of dv,nwj,ldr,midiff")
    common.add_argument("--diagnostics", action="store_true")
    common.add_argument("--track-epochs", dest="track_epochs", action="store_true",
                        help="evaluate DV/NWJ/LDR on the test batches after every epoch")
    common.add_argument("--checkpoints", action="store_true", help="write every trained classifier as JSON")

    chain = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    chain.add_argument("--preset", choices=sorted(PRESETS))
    chain.add_argument("--sigma-x", dest="sigma_x", type=float)
    chain.add_argument("--sigma-y", dest="sigma_y", type=float)
    chain.add_argument("--sigma-z", dest="sigma_z", type=float)
    chain.add_argument("--d", type=int)
    chain.add_argument("--d1", type=int)
    chain.add_argument("--rho", type=float)
    chain.add_argument("--tanh-a", dest="tanh_a", type=float)

    parser = argparse.ArgumentParser(description="Neural CMI estimation with isolated k-NN resampling")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common, chain], help="synthetic Gaussian-chain experiments")

    estimate = sub.add_parser("estimate", parents=[common], help="estimate I(X;Y|Z) from a dataset CSV")
    estimate.add_argument("--data", type=str, default=argparse.SUPPRESS)
    estimate.add_argument("--dims", type=str, default=argparse.SUPPRESS, help="dx,dy,dz")

    digraph = sub.add_parser("digraph", parents=[common], help="directed-information graph of 3 series")
    digraph.add_argument("--series", type=str, default=argparse.SUPPRESS)
    digraph.add_argument("--nodes", type=str, default=argparse.SUPPRESS)
    digraph.add_argument("--lag", type=int, default=argparse.SUPPRESS)
    digraph.add_argument("--drop-policy", dest="drop_policy", choices=("drop_row", "error"),
                         default=argparse.SUPPRESS)

    bench = sub.add_parser("bench", parents=[common, chain], help="sweeps over n, k, d or k/n ratio")
    bench.add_argument("--axis", choices=("n", "k", "d", "ratio"), default=argparse.SUPPRESS)
    bench.add_argument("--values", type=str, default=argparse.SUPPRESS)
    bench.add_argument("--compare", type=str, default=argparse.SUPPRESS,
                       help="two method:estimator labels, e.g. isolated_knn:ldr,midiff:dv")
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    configure_logging(args.pop("log_level", None))
    try:
        cfg = resolve_config(args)
        return HANDLERS[cfg.command](cfg)
    except (CMIError, OSError) as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        print(f"❌ {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
