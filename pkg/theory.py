"""
Concentration-bound diagnostics for the isolated k-NN estimators.

- delta1 .. delta7: the probability bounds of the consistency analysis,
  evaluated in log domain so (4BK sqrt(h) / (tau eps))^h stays representable
- eta_eps: the accuracy targets derived from epsilon*
- diagnostic_table: one row per (delta_i, eps), probability clipped to [0, 1]
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from errors import ConfigError

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)

# Cones of angle pi/6 covering R^d; exact for d = 1, 2
KNOWN_GAMMA_D = {1: 2.0, 2: 6.0}


def default_gamma_d(d: int) -> float:
    """Known covering numbers for d <= 2, otherwise the (loose) bound (1 + 2/sqrt(2 - sqrt 3))^d - 1."""
    if d < 1:
        raise ConfigError(f"gamma_d needs d >= 1, got {d}")
    if d in KNOWN_GAMMA_D:
        return KNOWN_GAMMA_D[d]
    return (1.0 + 2.0 / math.sqrt(2.0 - math.sqrt(3.0))) ** d - 1.0


def gamma_d_is_conservative(d: int) -> bool:
    return d not in KNOWN_GAMMA_D


@dataclass(frozen=True)
class BoundParams:
    n: int
    m: int
    k: int
    b: int
    tau: float
    p1: float
    d: int
    gamma_d: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    lambda_X: Optional[float] = None
    epsilon_star: Optional[float] = None
    B: Optional[float] = None
    K: Optional[float] = None
    h: Optional[int] = None

    def __post_init__(self):
        if self.gamma_d is None:
            object.__setattr__(self, "gamma_d", default_gamma_d(self.d))
        if min(self.n, self.m, self.k, self.b, self.d) < 1:
            raise ConfigError("n, m, k, b and d must all be >= 1")
        if not 0 < self.p1 < 1:
            raise ConfigError(f"p1 must lie in (0, 1), got {self.p1}")
        if not 0 < self.tau < min(0.5, self.p1):
            raise ConfigError(f"tau={self.tau} violates 0 < tau < min(1/2, p1={self.p1})")
        if self.gamma_d <= 0:
            raise ConfigError(f"gamma_d must be positive, got {self.gamma_d}")
        for name in ("alpha", "beta", "lambda_X", "epsilon_star", "B", "K", "h"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.alpha is not None and self.beta is not None and not self.alpha < self.beta:
            raise ConfigError(f"alpha={self.alpha} must be below beta={self.beta}")

    @property
    def log_odds_span(self) -> float:
        """log((1 - tau)/tau), the range of log omega over the clipped outputs."""
        return math.log((1.0 - self.tau) / self.tau)

    @property
    def ratio_span(self) -> Tuple[float, float]:
        """(c, M) of Gamma_hat: its range width and its maximum."""
        odds = (1.0 - self.p1) / self.p1
        tau = self.tau
        return odds * (1.0 - 2.0 * tau) / (tau * (1.0 - tau)), odds * (1.0 - tau) / tau

    @classmethod
    def from_schedule(cls, schedule, tau: float, d: int, **kwargs) -> "BoundParams":
        return cls(n=schedule.n, m=schedule.m, k=schedule.k, b=schedule.b, tau=tau, p1=schedule.p1, d=d, **kwargs)


# -----------------------
# Table of bounds
# -----------------------

def log_delta1(eps: float, c: float, M: float, params: BoundParams) -> float:
    if eps <= 0 or c <= 0 or M <= 0:
        raise ConfigError(f"delta1 needs eps, c, M > 0, got eps={eps}, c={c}, M={M}")
    n, m, k = params.n, params.m, params.k
    if m >= n:
        raise ConfigError(f"delta1 needs m < n, got m={m}, n={n}")
    exponents = np.array([
        LOG2 - 2.0 * eps ** 2 * k ** 2 / (n * c ** 2),
        LOG2 - 2.0 * eps ** 2 * k ** 2 / ((n - m) * c ** 2),
        -(n - m) * eps ** 2 / (8.0 * M ** 2 * params.gamma_d ** 2),
    ])
    return float(np.logaddexp.reduce(exponents))


def delta1(eps: float, c: float, M: float, params: BoundParams) -> float:
    return math.exp(log_delta1(eps, c, M, params))


def _hoeffding_tail(b: int, eps: float, scale: float) -> float:
    """log of 2 exp(-b eps^2 / scale)"""
    return LOG2 - b * eps ** 2 / scale


def log_delta_chain(i: int, eps: float, params: BoundParams) -> float:
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    tau, p1, b = params.tau, params.p1, params.b
    span = params.log_odds_span

    if i == 2:
        return log_delta1(eps, span, -math.log(tau), params)
    if i == 3:
        w = 3.0 - 2.0 * p1
        return float(np.logaddexp(log_delta_chain(2, eps / w, params),
                                  LOG2 - 2.0 * b * eps ** 2 / (w * span) ** 2))
    if i == 4:
        if params.B is None or params.K is None or params.h is None:
            raise ConfigError("delta4 needs the Lipschitz constant B, norm bound K and parameter count h")
        h = params.h
        log_cover = h * math.log(4.0 * params.B * params.K * math.sqrt(h) / (tau * eps))
        return log_cover + log_delta_chain(3, eps, params)

    c, M = params.ratio_span
    if i == 5:
        w = 2.0 * tau + 6.0 * p1 - 8.0 * p1 * tau
        tail = LOG2 - b * (1.0 - p1) ** 2 * eps ** 2 * tau ** 2 / (2.0 * (w * span) ** 2)
        return float(np.logaddexp(log_delta1((1.0 - p1) * eps * tau / w, c, M, params), tail))
    if i == 6:
        return float(np.logaddexp(log_delta1(eps / 8.0, c, M, params),
                                  _hoeffding_tail(b, eps, 128.0 * span ** 2)))
    if i == 7:
        return _hoeffding_tail(b, eps, 8.0 * span ** 2)
    raise ConfigError(f"delta_chain index must be in 2..7, got {i}")


def delta_chain(i: int, eps: float, params: BoundParams) -> float:
    """exp of log_delta_chain; may be inf for delta4 with many parameters."""
    with np.errstate(over="ignore"):
        return float(np.exp(log_delta_chain(i, eps, params)))


def eta_eps(params: BoundParams) -> Tuple[float, float]:
    missing = [name for name in ("alpha", "beta", "lambda_X", "epsilon_star") if getattr(params, name) is None]
    if missing:
        raise ConfigError(f"eta_eps needs {', '.join(missing)}")
    tau = params.tau
    eta = tau ** 3 * (1.0 - tau) * params.epsilon_star / (2.0 * (2.0 * tau ** 2 - 2.0 * tau + 1.0) * params.beta)
    eps = (eta / (1.0 - tau)) ** 2 * params.alpha / (2.0 * params.lambda_X)
    return eta, eps


def diagnostic_table(params: BoundParams, eps_values: Iterable[float] = (0.1, 0.5, 1.0),
                     c: float = 1.0, M: float = 1.0) -> pd.DataFrame:
    """
    Rows for delta1(eps, c, M) and delta2..delta7(eps). delta4 is left
    empty when B, K, h are unknown.
    """
    rows = []
    for eps in eps_values:
        for i in range(1, 8):
            row = {"delta": f"delta{i}", "eps": float(eps), "log_value": np.nan, "value": np.nan,
                   "probability_bound": np.nan}
            try:
                log_value = log_delta1(eps, c, M, params) if i == 1 else log_delta_chain(i, eps, params)
            except ConfigError as exc:
                logger.info(f"delta{i}(eps={eps}) skipped: {exc}")
                rows.append(row)
                continue
            with np.errstate(over="ignore"):
                value = float(np.exp(log_value))
            row.update(log_value=log_value, value=value, probability_bound=min(1.0, value))
            rows.append(row)

    df = pd.DataFrame(rows)
    df["n"], df["m"], df["k"], df["b"] = params.n, params.m, params.k, params.b
    df["tau"], df["p1"], df["gamma_d"] = params.tau, params.p1, params.gamma_d
    df["gamma_d_conservative"] = gamma_d_is_conservative(params.d) and params.gamma_d == default_gamma_d(params.d)
    return df
