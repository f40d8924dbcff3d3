"""Goodness-of-fit tests and moment checks for the simulated hitting times."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .config import THRESHOLDS
from .engine import TrajectoryRecord
from .errors import InsufficientSamples
from .lattice import TorusGeometry


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    name: str
    statistic: float
    p_value: float
    n_samples: int
    alpha: float

    @property
    def passed(self) -> bool:
        return self.p_value > self.alpha

    def to_json(self) -> str:
        out = asdict(self)
        out["passed"] = self.passed
        return json.dumps(out)


def _samples(x, minimum: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size < minimum:
        raise InsufficientSamples(f"need at least {minimum} samples, got {arr.size}")
    return arr


def ks_exponential(samples, rate: float, alpha: float | None = None) -> TestReport:
    """One-sample KS test against the exponential law with the given rate.

    The statistic is computed on ``rate * samples`` against Exp(1), and the
    p-value comes from the asymptotic Kolmogorov distribution.
    """
    x = _samples(samples, THRESHOLDS.min_ks_samples)
    if np.any(x < 0):
        raise ValueError("exponential samples must be non-negative")
    if not rate > 0:
        raise ValueError("rate must be positive")
    res = sps.kstest(x * rate, "expon", method="asymp")
    return TestReport("ks_exponential", float(res.statistic), float(res.pvalue), x.size,
                      THRESHOLDS.alpha if alpha is None else alpha)


def ks_two_sample(a, b, alpha: float | None = None) -> TestReport:
    """Two-sample KS test with the asymptotic p-value."""
    x = _samples(a, THRESHOLDS.min_ks_samples)
    y = _samples(b, THRESHOLDS.min_ks_samples)
    res = sps.ks_2samp(x, y, method="asymp")
    return TestReport("ks_two_sample", float(res.statistic), float(min(1.0, res.pvalue)),
                      min(x.size, y.size), THRESHOLDS.alpha if alpha is None else alpha)


def empirical_moment(samples, m: int) -> tuple[float, float]:
    """Mean of ``samples**m`` and its standard error."""
    x = np.asarray(samples, dtype=float) ** m
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf
    return float(x.mean()), se


@dataclass(frozen=True)
class MomentCheck:
    m: int
    moments: dict[int, float]
    ses: dict[int, float]
    spread: float

    @property
    def stable(self) -> bool:
        return self.spread <= THRESHOLDS.moment_spread


def moment_bound_check(samples_by_N: Mapping[int, Sequence[float]], m: int) -> MomentCheck:
    """Empirical ``m``-th moments of ``tau/theta`` on a grid of ``N``.

    Uniform boundedness in ``N`` is read as stability: the largest moment on
    the grid is within a factor ``THRESHOLDS.moment_spread`` of the smallest.
    """
    if m not in (1, 2, 3):
        raise ValueError("m must be 1, 2 or 3")
    moments, ses = {}, {}
    for N, xs in samples_by_N.items():
        moments[N], ses[N] = empirical_moment(xs, m)
    vals = list(moments.values())
    spread = max(vals) / min(vals) if min(vals) > 0 else math.inf
    return MomentCheck(m, moments, ses, spread)


def g_N(g: TorusGeometry, t: np.ndarray) -> np.ndarray:
    """Shape of the particle-count bound: ``N^d/t`` (d >= 3), ``N^2 log(1+t)/t`` (d = 2)."""
    t = np.asarray(t, dtype=float)
    if g.d == 2:
        return g.N**2 * np.log1p(t) / t
    return g.n_sites / t


@dataclass
class CountDecayTable:
    t: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    scaled: np.ndarray
    window: tuple[float, float]

    @property
    def fitted_constant(self) -> float:
        """Smallest ``c`` with ``mean <= c * g_N`` across the window."""
        return float(self._in_window().max())

    @property
    def spread(self) -> float:
        w = self._in_window()
        return float(w.max() / w.min())

    def _in_window(self) -> np.ndarray:
        lo, hi = self.window
        mask = (self.t >= lo) & (self.t <= hi)
        if not mask.any():
            raise ValueError("no grid time falls inside the window")
        return self.scaled[mask]

    def rows(self) -> list[dict]:
        return [dict(t=float(t), mean=float(m), se=float(s), scaled=float(c))
                for t, m, s, c in zip(self.t, self.mean, self.se, self.scaled)]


def count_decay_check(
    records: Iterable[TrajectoryRecord],
    g: TorusGeometry,
    t_grid: Sequence[float],
    window: tuple[float, float],
) -> CountDecayTable:
    """Empirical ``E|A(t)|`` on ``t_grid`` from full-torus runs, scaled by ``g_N(t)``."""
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    if any(r.n0 != g.n_sites for r in records):
        raise ValueError("count decay needs full-torus initial conditions")
    t = np.asarray(t_grid, dtype=float)
    counts = np.array([r.count_at(t) for r in records], dtype=float)
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / math.sqrt(len(records)) if len(records) > 1 else np.zeros_like(mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(t > 0, mean / g_N(g, np.where(t > 0, t, 1.0)), np.nan)
    return CountDecayTable(t, mean, se, scaled, window)
