"""Scale constants: the meeting time theta_N, the escape probability v_d and the
intermediate scales gamma_N and a_N.

``theta_N`` follows the convention that the difference of two rate-1 walkers
is a rate-2 walk; reports say so explicitly to avoid factor-2 confusion.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit

from . import oracle
from .config import DEFAULT_SEED
from .engine import ParticleConfig, StopRule, _uniform_index, run_replicas
from .lattice import TorusGeometry

SPEED_NOTE = "difference walk runs at speed 2 (two rate-1 walkers)"

DEFAULT_RADII = (10, 25, 50, 100, 200, 500, 1000)


@dataclass
class ScaleReport:
    d: int
    N: int
    theta: float
    method: str
    asymptote: float
    relative_gap: float
    se: float | None = None
    residual: float | None = None
    note: str = SPEED_NOTE

    @property
    def ratio(self) -> float:
        """``theta`` divided by its natural scale (``N^d`` or ``N^2 log N``)."""
        return self.theta / natural_scale(TorusGeometry(self.d, self.N))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ratio"] = self.ratio
        return out


def natural_scale(g: TorusGeometry) -> float:
    return g.N**2 * math.log(g.N) if g.d == 2 else float(g.n_sites)


def theta_asymptote(g: TorusGeometry, v_d: float | None = None) -> float:
    """Leading-order ``theta_N``: ``N^d / (2 v_d)`` for d >= 3, ``N^2 log N / pi`` for d = 2."""
    if g.d == 2:
        return g.N**2 * math.log(g.N) / math.pi
    if v_d is None:
        v_d = default_escape(g.d)
    return g.n_sites / (2.0 * v_d)


def _mc_pair_start(g: TorusGeometry):
    def factory(rng: np.random.Generator) -> ParticleConfig:
        a, b = rng.integers(g.n_sites, size=2)
        return ParticleConfig.from_sites(g, [int(a), int(b)])

    return factory


def estimate_theta(
    g: TorusGeometry,
    method: str = "exact_solve",
    replicas: int = 10_000,
    seed: int = 0,
    workers: int = 1,
    v_d: float | None = None,
) -> ScaleReport:
    """Mean meeting time of two independent stationary walkers.

    ``method`` is ``exact_solve`` (dense hitting-time solve), ``spectral``
    (eigenvalue sum, no size cap) or ``monte_carlo`` (engine replicas from
    independent uniform starts).
    """
    se = residual = None
    if method == "exact_solve":
        theta, residual = oracle.theta_exact(g)
    elif method == "spectral":
        theta = oracle.theta_spectral(g)
    elif method == "monte_carlo":
        if replicas < 1:
            raise ValueError("monte_carlo needs at least one replica")
        recs = run_replicas(_mc_pair_start(g), StopRule.full_coalescence(), seed, replicas, workers)
        times = np.array([r.tau[1] for r in recs])
        theta = float(times.mean())
        se = float(times.std(ddof=1) / math.sqrt(len(times))) if len(times) > 1 else math.inf
    else:
        raise ValueError(f"unknown method {method!r}")
    asym = theta_asymptote(g, v_d)
    return ScaleReport(g.d, g.N, theta, method, asym, abs(theta - asym) / asym, se, residual)


# --------------------------------------------------------------------------
# escape probability


@njit(cache=True, nogil=True)
def _escape_stage(starts, d, r_out, rng, from_origin):
    """Run one walk from each start until it returns to 0 or leaves the ball.

    Returns ``(escaped, exits)``; ``exits[i]`` is where walk ``i`` first had
    squared norm ``>= r_out**2``.
    """
    m = starts.shape[0]
    escaped = np.zeros(m, dtype=np.bool_)
    exits = np.zeros((m, d), dtype=np.int64)
    r2 = r_out * r_out
    x = np.zeros(d, dtype=np.int64)
    for w in range(m):
        sq = 0
        for j in range(d):
            x[j] = starts[w, j]
            sq += x[j] * x[j]
        if not from_origin and sq == 0:
            continue
        while True:
            u = _uniform_index(rng, 2 * d)
            j = u >> 1
            s = 1 - 2 * (u & 1)
            sq += 2 * s * x[j] + 1
            x[j] += s
            if sq == 0:
                break
            if sq >= r2:
                escaped[w] = True
                for k in range(d):
                    exits[w, k] = x[k]
                break
    return escaped, exits


@dataclass
class EscapeEstimate:
    """No-return probability before leaving each ball of the ladder."""

    d: int
    radii: tuple[int, ...]
    estimates: tuple[float, ...]
    ses: tuple[float, ...]
    stage_walks: tuple[int, ...]
    stage_survival: tuple[float, ...] = field(default=())

    def at(self, radius: int) -> tuple[float, float]:
        k = self.radii.index(radius)
        return self.estimates[k], self.ses[k]

    @property
    def value(self) -> float:
        return self.estimates[-1]

    @property
    def se(self) -> float:
        return self.ses[-1]


ESCAPE_CHUNKS = 16


def _stage(starts, d, r_out, seed, from_origin, workers):
    # fixed chunking keeps results independent of the worker count
    chunks = np.array_split(np.arange(len(starts)), ESCAPE_CHUNKS)
    seqs = np.random.SeedSequence(seed).spawn(len(chunks))

    def run(k):
        rng = np.random.default_rng(seqs[k])
        return _escape_stage(starts[chunks[k]], d, r_out, rng, from_origin)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(chunks))))
    else:
        parts = [run(k) for k in range(len(chunks))]
    escaped = np.concatenate([p[0] for p in parts])
    exits = np.concatenate([p[1] for p in parts])
    return escaped, exits


def estimate_escape(
    d: int,
    radii: Sequence[int] = DEFAULT_RADII,
    walks: int = 400_000,
    continuation: Sequence[int] | None = None,
    seed: int = 0,
    workers: int = 1,
    stage_steps: float = 2e8,
) -> EscapeEstimate:
    """Probability that the nearest-neighbour walk on Z^d never returns to 0,
    approximated by no return before leaving the Euclidean ball of radius ``R``.

    Multilevel splitting over ``radii``: ``walks`` walks start at 0 and run to
    the first radius; each later stage restarts ``continuation[k]`` walks from
    exit points resampled uniformly among the previous stage's escapers. The
    estimate at radius ``r_k`` is the product of stage survival fractions, so
    estimates at different radii share their early stages and differ only by
    the returns that happen between radii. The truncation bias at radius
    ``R`` is of order ``1/R``.

    Without explicit ``continuation`` counts, stage ``k`` gets about
    ``stage_steps / (r_{k+1}^2 - r_k^2)`` walks (at least 500), since a walk
    crossing the annulus takes roughly that many steps.
    """
    if d < 3:
        raise ValueError("the walk is recurrent for d <= 2; escape probability is 0")
    radii = tuple(int(r) for r in radii)
    if any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] < 2:
        raise ValueError("radii must be increasing and >= 2")
    if continuation is None:
        continuation = [max(500, min(walks, int(stage_steps // (b * b - a * a))))
                        for a, b in zip(radii, radii[1:])]
    if len(continuation) != len(radii) - 1:
        raise ValueError("need one continuation budget per stage after the first")
    seeds = np.random.SeedSequence(seed).spawn(len(radii))
    resample = np.random.default_rng(seeds[0].spawn(1)[0])

    starts = np.zeros((walks, d), dtype=np.int64)
    counts = [walks] + list(continuation)
    q, est, ses = [], [], []
    log_v = 0.0
    rel_var = 0.0
    for k, r in enumerate(radii):
        escaped, exits = _stage(starts, d, r, int(seeds[k].generate_state(1)[0]), k == 0, workers)
        m = len(escaped)
        qk = float(escaped.mean())
        q.append(qk)
        if qk == 0.0:
            raise RuntimeError(f"no walk survived to radius {r}; increase the budget")
        log_v += math.log(qk)
        rel_var += (1.0 - qk) / (qk * m)
        v = math.exp(log_v)
        est.append(v)
        ses.append(v * math.sqrt(rel_var))
        if k + 1 < len(radii):
            pool = exits[escaped]
            pick = resample.integers(len(pool), size=counts[k + 1])
            starts = pool[pick]
    return EscapeEstimate(d, radii, tuple(est), tuple(ses), tuple(counts), tuple(q))


@lru_cache(maxsize=None)
def default_escape(d: int) -> float:
    """Cached escape probability at the default ladder and seed."""
    return estimate_escape(d, seed=DEFAULT_SEED).value


def green_function_escape(d: int) -> float:
    """``1 / G(0)`` with ``G(0) = int_0^inf (e^{-s} I_0(s))^d ds`` by quadrature.

    Independent of the Monte Carlo estimator; used to validate it.
    """
    from scipy.integrate import quad
    from scipy.special import ive

    if d < 3:
        raise ValueError("the walk is recurrent for d <= 2")
    value, _ = quad(lambda s: ive(0, s / d) ** d, 0, np.inf, limit=500)
    return 1.0 / value


# --------------------------------------------------------------------------
# intermediate scales


def choose_gamma(g: TorusGeometry) -> float:
    """A time between the ``N^2`` mixing scale and ``theta_N``."""
    L = math.log(g.N)
    return g.N**2 * (math.sqrt(L) if g.d == 2 else L)


def choose_aN(g: TorusGeometry) -> int:
    """Scatter distance with ``1 << a_N << N`` (and ``a_N >> N / sqrt(log N)`` when d = 2)."""
    if g.d == 2:
        a = math.floor(g.N / math.log(g.N) ** 0.25)
    else:
        a = math.floor(math.sqrt(g.N))
    return max(2, a) if g.N >= 8 else max(1, a)
