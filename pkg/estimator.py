"""
CMI estimators built on a density-ratio model.

- Gamma_hat = (1 - p1)/p1 * omega/(1 - omega) from a trained classifier,
  or the analytic ratio of the Gaussian chain (oracle mode)
- DV, NWJ and LDR estimates on held-out joint/product batches
- The split, resample, train, evaluate loop over T trials, the MI-Diff baseline, oracle runs
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp
from tqdm import tqdm

from classifier import Classifier, NetConfig, init_classifier, train_classifier
from datagen import (Dataset, GaussianChainConfig, derive_seeds, oracle_log_ratio,
                     sample_conditional_product, sample_gaussian_chain, split_dataset)
from errors import CMIError, ConfigError, TrialFailedError
from resample import (BatchSchedule, LabeledBatch, isolated_knn_batch, joint_batch,
                      midiff_product_batch_xyz, midiff_product_batch_xz)

logger = logging.getLogger(__name__)

ESTIMATORS = ("dv", "nwj", "ldr")


# -----------------------
# Ratio models
# -----------------------

class RatioModel:
    """Either a learned classifier with its training prior p1, or the analytic chain ratio."""

    def __init__(self, variant: str, classifier: Optional[Classifier] = None, p1: Optional[float] = None,
                 chain: Optional[GaussianChainConfig] = None):
        self.variant = variant
        self.classifier = classifier
        self.p1 = p1
        self.chain = chain

    @classmethod
    def learned(cls, classifier: Classifier, p1: Optional[float] = None) -> "RatioModel":
        p1 = classifier.train_p1 if p1 is None else p1
        if p1 is None or not 0 < p1 < 1:
            raise ConfigError(f"learned ratio needs a prior p1 in (0, 1), got {p1}")
        return cls("learned", classifier=classifier, p1=p1)

    @classmethod
    def oracle(cls, chain: GaussianChainConfig) -> "RatioModel":
        return cls("oracle", chain=chain)

    @property
    def tau(self) -> Optional[float]:
        return self.classifier.tau if self.classifier is not None else None

    @property
    def input_dim(self) -> int:
        """Total width of one (x, y, z) triple."""
        if self.variant == "oracle":
            return 3 * self.chain.d
        return self.classifier.config.input_dim

    def bounds(self) -> Tuple[float, float]:
        """Range of Gamma_hat implied by clipping omega to [tau, 1 - tau]."""
        if self.variant != "learned":
            return 0.0, np.inf
        odds = (1.0 - self.p1) / self.p1
        tau = self.tau
        return odds * tau / (1.0 - tau), odds * (1.0 - tau) / tau

    def log_gamma(self, x, y, z) -> np.ndarray:
        if self.variant == "oracle":
            return oracle_log_ratio(self.chain, x, y, z)
        features = np.hstack([np.atleast_2d(x), np.atleast_2d(y), np.atleast_2d(z)])
        omega = self.classifier.evaluate(features)
        return np.log((1.0 - self.p1) / self.p1) + np.log(omega) - np.log1p(-omega)


def gamma_hat(model: RatioModel, x, y, z):
    """
    Gamma_hat for one triple (float) or for row-aligned arrays of triples.
    1-D inputs are one triple when their widths add up to the model's input
    dimension, otherwise a batch of one-dimensional roles.
    """
    x, y, z = (np.asarray(v, dtype=np.float64) for v in (x, y, z))
    if x.ndim <= 1 and y.ndim <= 1 and z.ndim <= 1:
        if x.size + y.size + z.size == model.input_dim:
            x, y, z = (v.reshape(1, -1) for v in (x, y, z))
            return float(np.exp(model.log_gamma(x, y, z))[0])
        if not x.size == y.size == z.size:
            raise ConfigError(f"1-D inputs of lengths {x.size}, {y.size}, {z.size} are neither one triple "
                              f"of width {model.input_dim} nor a batch of equal length")
        x, y, z = (v.reshape(-1, 1) for v in (x, y, z))
    return np.exp(model.log_gamma(x, y, z))


def _log_gamma(model: RatioModel, batch: LabeledBatch) -> np.ndarray:
    if batch.size == 0:
        raise ConfigError(f"{batch.origin} batch is empty")
    return model.log_gamma(batch.x, batch.y, batch.z)


def _dv(log_joint, log_prod) -> float:
    return float(np.mean(log_joint) - (logsumexp(log_prod) - np.log(len(log_prod))))


def _nwj(log_joint, log_prod) -> float:
    return float(1.0 + np.mean(log_joint) - np.mean(np.exp(log_prod)))


def estimate_dv(model: RatioModel, joint_test: LabeledBatch, product_test: LabeledBatch) -> float:
    """(1/b) sum_joint log G - log[(1/b') sum_product G]"""
    return _dv(_log_gamma(model, joint_test), _log_gamma(model, product_test))


def estimate_nwj(model: RatioModel, joint_test: LabeledBatch, product_test: LabeledBatch) -> float:
    """1 + (1/b) sum_joint log G - (1/b') sum_product G; never above the DV value."""
    return _nwj(_log_gamma(model, joint_test), _log_gamma(model, product_test))


def estimate_ldr(model: RatioModel, joint_test: LabeledBatch) -> float:
    return float(np.mean(_log_gamma(model, joint_test)))


def estimate_all(model: RatioModel, joint_test: LabeledBatch, product_test: LabeledBatch) -> Dict[str, float]:
    log_joint = _log_gamma(model, joint_test)
    log_prod = _log_gamma(model, product_test)
    return {"dv": _dv(log_joint, log_prod), "nwj": _nwj(log_joint, log_prod), "ldr": float(np.mean(log_joint))}


# -----------------------
# Reports
# -----------------------

@dataclass
class EstimateReport:
    method: str
    trials: pd.DataFrame
    config: Dict
    estimators: Tuple[str, ...] = ESTIMATORS
    timings: List[Dict] = field(default_factory=list)
    # one row per (trial, epoch) when per-epoch tracking was requested
    epoch_trace: Optional[pd.DataFrame] = None
    # (label, trained classifier) pairs, kept only on request
    classifiers: List[Tuple[str, Classifier]] = field(default_factory=list)

    @property
    def averages(self) -> Dict[str, float]:
        return {name: float(np.mean(self.trials[name].to_numpy())) for name in self.estimators}

    def extremes(self) -> Dict[str, Dict[str, float]]:
        out = {}
        for name in self.estimators:
            values = self.trials[name].to_numpy()
            out[name] = {"min": float(np.min(values)), "max": float(np.max(values)),
                         "std": float(np.std(values))}
        return out

    def to_payload(self) -> Dict:
        return {
            "method": self.method,
            "config": self.config,
            "averages": self.averages,
            "extremes": self.extremes(),
            "trials": self.trials.to_dict(orient="records"),
        }

    def to_frame(self) -> pd.DataFrame:
        df = self.trials.copy()
        df.insert(0, "method", self.method)
        return df


# -----------------------
# Trial runner
# -----------------------

def _run_trials(fn: Callable, tasks: Sequence, threads: int, desc: str) -> List:
    """Trials are independent and carry their own seeds, so results do not depend on threads."""
    if threads <= 1:
        return [fn(task) for task in tqdm(tasks, desc=desc, disable=len(tasks) < 2, leave=False)]
    with ProcessPoolExecutor(max_workers=threads) as executor:
        return list(tqdm(executor.map(fn, tasks), total=len(tasks), desc=desc, leave=False))


def _classifier_diagnostics(clf: Classifier) -> Dict[str, float]:
    return {
        "final_loss": clf.loss_log[-1] if clf.loss_log else float("nan"),
        "parameter_norm": clf.parameter_norm(),
        "lipschitz_proxy": clf.lipschitz_proxy(),
        "n_parameters": clf.n_parameters,
    }


def _epoch_tracker(t: int, joint_test: LabeledBatch, prod_test: LabeledBatch, trace: List[Dict]):
    def record(epoch: int, model: Classifier):
        values = estimate_all(RatioModel.learned(model), joint_test, prod_test)
        trace.append({"trial": t, "epoch": epoch, "loss": model.loss_log[-1], **values})
    return record


def _isolated_knn_trial(task):
    t, trial_seed, train, test, b, m, k, net, structure, track_epochs, keep_classifier = task
    timings = {"trial": t}
    trace: List[Dict] = []
    try:
        s = derive_seeds([trial_seed, net.init_seed], 6)
        start = time.perf_counter()
        joint_train = joint_batch(train, b, s[0])
        prod_train = isolated_knn_batch(train, m, k, s[1], structure)
        timings["resample_train"] = time.perf_counter() - start

        # Test batches have their own seeds and do not depend on training
        start = time.perf_counter()
        joint_test = joint_batch(test, b, s[4])
        prod_test = isolated_knn_batch(test, m, k, s[5], structure)
        timings["resample_test"] = time.perf_counter() - start

        start = time.perf_counter()
        on_epoch = _epoch_tracker(t, joint_test, prod_test, trace) if track_epochs else None
        clf = init_classifier(replace(net, init_seed=s[2]))
        clf = train_classifier(clf, joint_train, prod_train, seed=s[3], on_epoch=on_epoch)
        timings["train"] = time.perf_counter() - start

        start = time.perf_counter()
        values = estimate_all(RatioModel.learned(clf), joint_test, prod_test)
        timings["evaluate"] = time.perf_counter() - start
    except CMIError as exc:
        raise TrialFailedError(t, str(exc)) from exc

    row = {"trial": t, "seed": trial_seed, **values, "p1": clf.train_p1, **_classifier_diagnostics(clf)}
    kept = [(f"trial{t}", clf)] if keep_classifier else []
    return row, timings, trace, kept


def _collect(method: str, results: List, config: Dict, estimators: Tuple[str, ...],
             track_epochs: bool) -> EstimateReport:
    trials = pd.DataFrame([row for row, _, _, _ in results])
    trace = pd.DataFrame([r for _, _, rows, _ in results for r in rows]) if track_epochs else None
    kept = [pair for _, _, _, pairs in results for pair in pairs]
    return EstimateReport(method, trials, config, estimators, [tm for _, tm, _, _ in results], trace, kept)


def run_algorithm1(dataset: Dataset, T: int, b: int, k: int, net: NetConfig, seed,
                   m: Optional[int] = None, train_fraction: float = 0.5, threads: int = 1,
                   structure: str = "auto", track_epochs: bool = False,
                   keep_classifiers: bool = False) -> EstimateReport:
    """
    Split once; for each of T trials draw train joint / isolated k-NN batches,
    train a fresh classifier, draw test batches and evaluate DV, NWJ, LDR.

    track_epochs also evaluates the three estimators on the test batches after
    every training epoch (report.epoch_trace); keep_classifiers returns the
    trained networks for checkpointing.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    m = b // k if m is None else m
    split_seed, *trial_seeds = derive_seeds(seed, T + 1)
    train, test = split_dataset(dataset, train_fraction, split_seed)
    for part, name in ((train, "train"), (test, "test")):
        try:
            BatchSchedule(n=part.n, k=k, m=m, b=b)
        except ConfigError as exc:
            raise ConfigError(f"{name} split (n={part.n}): {exc}") from exc

    net = net.with_input_dim(sum(dataset.dims))
    logger.info(f"Isolated k-NN run: n={dataset.n}, T={T}, b={b}, m={m}, k={k}, b'={m * k}, "
                f"tau={net.tau}, E={net.epochs}")
    tasks = [(t, trial_seeds[t], train, test, b, m, k, net, structure, track_epochs, keep_classifiers)
             for t in range(T)]
    results = _run_trials(_isolated_knn_trial, tasks, threads, "isolated k-NN trials")

    config = {
        "n": dataset.n, "dims": list(dataset.dims), "n_train": train.n, "n_test": test.n,
        "k": k, "m": m, "b": b, "b_prime": m * k, "p1": b / (b + m * k),
        "tau": net.tau, "epochs": net.epochs, "T": T, "seed": seed, "trial_seeds": trial_seeds,
        "train_fraction": train_fraction, "structure": structure, "net": net.to_dict(),
    }
    return _collect("isolated_knn", results, config, ESTIMATORS, track_epochs)


def _midiff_trial(task):
    t, trial_seed, train, test, b, net, keep_classifiers = task
    dx, dy, dz = train.dims
    timings = {"trial": t}
    try:
        s = derive_seeds([trial_seed, net.init_seed], 10)
        start = time.perf_counter()
        joint_train = joint_batch(train, b, s[0])
        prod_xyz = midiff_product_batch_xyz(train, b, s[1])
        prod_xz = midiff_product_batch_xz(train, b, s[2])
        clf_xyz = train_classifier(init_classifier(replace(net, input_dim=dx + dy + dz, init_seed=s[3])),
                                   joint_train, prod_xyz, seed=s[4])
        clf_xz = train_classifier(init_classifier(replace(net, input_dim=dx + dz, init_seed=s[5])),
                                  joint_train.without("y"), prod_xz, seed=s[6])
        timings["train"] = time.perf_counter() - start

        start = time.perf_counter()
        joint_test = joint_batch(test, b, s[7])
        e_xyz = estimate_all(RatioModel.learned(clf_xyz), joint_test, midiff_product_batch_xyz(test, b, s[8]))
        e_xz = estimate_all(RatioModel.learned(clf_xz), joint_test.without("y"),
                            midiff_product_batch_xz(test, b, s[9]))
        timings["evaluate"] = time.perf_counter() - start
    except CMIError as exc:
        raise TrialFailedError(t, str(exc)) from exc

    row = {"trial": t, "seed": trial_seed}
    for name in ("dv", "nwj"):
        row[f"{name}_xyz"] = e_xyz[name]
        row[f"{name}_xz"] = e_xz[name]
        row[name] = e_xyz[name] - e_xz[name]
    kept = [(f"trial{t}_xyz", clf_xyz), (f"trial{t}_xz", clf_xz)] if keep_classifiers else []
    return row, timings, [], kept


def run_midiff(dataset: Dataset, T: int, b: int, net: NetConfig, seed, train_fraction: float = 0.5,
               threads: int = 1, keep_classifiers: bool = False) -> EstimateReport:
    """I(X;Y|Z) = I(X;Y,Z) - I(X;Z), each term from its own classifier."""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    split_seed, *trial_seeds = derive_seeds(seed, T + 1)
    train, test = split_dataset(dataset, train_fraction, split_seed)
    if not 1 <= b <= min(train.n, test.n):
        raise ConfigError(f"b={b} must lie in [1, {min(train.n, test.n)}] for the train/test splits")

    logger.info(f"MI-Diff: n={dataset.n}, T={T}, b={b}, tau={net.tau}, E={net.epochs}")
    tasks = [(t, trial_seeds[t], train, test, b, net, keep_classifiers) for t in range(T)]
    results = _run_trials(_midiff_trial, tasks, threads, "MI-Diff trials")

    config = {
        "n": dataset.n, "dims": list(dataset.dims), "n_train": train.n, "n_test": test.n, "b": b,
        "tau": net.tau, "epochs": net.epochs, "T": T, "seed": seed, "trial_seeds": trial_seeds,
        "train_fraction": train_fraction, "net": net.to_dict(),
    }
    return _collect("midiff", results, config, ("dv", "nwj"), track_epochs=False)


def oracle_product_batch(chain: GaussianChainConfig, n: int, seed, product: str = "exact", k: int = 2,
                         resample_seed=None) -> LabeledBatch:
    """
    Product-side sample for the oracle runs: n exact p(x|z)p(y,z) draws, or
    isolated k-NN resampling (m = n // 2) of n fresh chain samples.
    """
    if product == "exact":
        prod = sample_conditional_product(chain, n, seed)
        return LabeledBatch(prod.x, prod.y, prod.z, label=0, origin="exact_product",
                            provenance={"sampler": "conditional_product", "n": n})
    if product == "isolated_knn":
        resample_seed = derive_seeds(seed, 1)[0] if resample_seed is None else resample_seed
        return isolated_knn_batch(sample_gaussian_chain(chain, n, seed), n // 2, k, resample_seed)
    raise ConfigError(f"Unknown product sampler '{product}'")


def run_oracle(chain: GaussianChainConfig, n: int, seed, product: str = "exact", k: int = 2,
               T: int = 1) -> EstimateReport:
    """
    Evaluate the three estimators with the analytic ratio on n fresh joint
    samples and a product sample (exact draws or isolated k-NN resampling).
    """
    if product not in ("exact", "isolated_knn"):
        raise ConfigError(f"Unknown product sampler '{product}'")
    model = RatioModel.oracle(chain)
    rows = []
    for t, trial_seed in enumerate(derive_seeds(seed, T)):
        s = derive_seeds(trial_seed, 3)
        data = sample_gaussian_chain(chain, n, s[0])
        joint = LabeledBatch(data.x, data.y, data.z, label=1, origin="joint")
        prod_batch = oracle_product_batch(chain, n, s[1], product, k, resample_seed=s[2])
        rows.append({"trial": t, "seed": trial_seed, "product_origin": prod_batch.origin,
                     **estimate_all(model, joint, prod_batch)})

    config = {"n": n, "T": T, "seed": seed, "product": product, "k": k if product == "isolated_knn" else None,
              "chain": {"sigma_x": chain.sigma_x, "sigma_y": chain.sigma_y, "sigma_z": chain.sigma_z,
                        "d": chain.d, "rho": chain.rho}}
    return EstimateReport("oracle", pd.DataFrame(rows), config)


# -----------------------
# Method dispatch
# -----------------------

METHODS = ("isolated_knn", "midiff")


def default_batch_size(n: int, train_fraction: float = 0.5) -> int:
    """Largest b both splits can supply."""
    n_train = int(np.floor(train_fraction * n))
    return min(n_train, n - n_train)


def run_methods(dataset: Dataset, methods: Sequence[str], T: int, k: int, net: NetConfig, seed,
                b: Optional[int] = None, m: Optional[int] = None, train_fraction: float = 0.5,
                threads: int = 1, structure: str = "auto", track_epochs: bool = False,
                keep_classifiers: bool = False) -> Dict[str, EstimateReport]:
    """Each method gets its own seed stream derived from the master seed; epoch tracking is isolated k-NN only."""
    unknown = [name for name in methods if name not in METHODS]
    if unknown:
        raise ConfigError(f"Unknown method(s) {unknown} (expected {METHODS})")
    b = default_batch_size(dataset.n, train_fraction) if b is None else b
    method_seeds = dict(zip(METHODS, derive_seeds(seed, len(METHODS))))
    reports = {}
    for name in methods:
        if name == "isolated_knn":
            reports[name] = run_algorithm1(dataset, T, b, k, net, method_seeds[name], m=m,
                                           train_fraction=train_fraction, threads=threads, structure=structure,
                                           track_epochs=track_epochs, keep_classifiers=keep_classifiers)
        else:
            reports[name] = run_midiff(dataset, T, b, net, method_seeds[name], train_fraction=train_fraction,
                                       threads=threads, keep_classifiers=keep_classifiers)
    return reports
