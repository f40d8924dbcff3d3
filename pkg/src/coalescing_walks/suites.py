"""Acceptance suites.

Each suite runs a group of numbered acceptance checks and returns one
:class:`Row` per check. Rows carry the measured value, the condition it was
held to and the verdict; :func:`write_csv` renders them in a fixed schema so
that re-running a suite with the same options reproduces the file byte for
byte.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np

from . import estimators, kingman, oracle
from .config import DEFAULT_SEED, THRESHOLDS
from .engine import ParticleConfig, StopRule, random_scattered, replacement_ensemble, run_replicas
from .errors import InsufficientSamples
from .lattice import TorusGeometry
from .stats import count_decay_check, ks_exponential, ks_two_sample

CSV_FIELDS = ("suite", "criterion", "check", "value", "condition", "passed", "detail")


@dataclass(frozen=True)
class Row:
    suite: str
    criterion: int
    check: str
    value: float
    condition: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class SuiteOptions:
    """``replicas = None`` keeps each criterion's own sample size."""

    seed: int = DEFAULT_SEED
    replicas: int | None = None
    workers: int = 1


def sub_seed(seed: int, *keys: int) -> int:
    """Independent seed for one experiment inside a suite."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@lru_cache(maxsize=None)
def theta_of(d: int, N: int) -> float:
    """Exact meeting time: dense solve when it fits, eigenvalue sum otherwise."""
    g = TorusGeometry(d, N)
    if g.n_sites <= oracle.DEFAULT_STATE_CAP:
        return oracle.theta_exact(g)[0]
    return oracle.theta_spectral(g)


@lru_cache(maxsize=None)
def _escape(d: int, seed: int) -> estimators.EscapeEstimate:
    return estimators.estimate_escape(d, seed=seed)


def _strictly_decreasing(xs) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]))


def _fmt(xs) -> str:
    return " ".join(f"{x:.6g}" for x in xs)


# --------------------------------------------------------------------------
# exactness: criteria 1-3


def exactness(opts: SuiteOptions) -> list[Row]:
    rows = []
    rng = np.random.default_rng(sub_seed(opts.seed, 1))
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 51))
        chain = oracle.random_reversible_chain(rng, n)
        B = rng.choice(n, size=int(rng.integers(1, max(2, n // 5))), replace=False).tolist()
        f = rng.normal(size=n)
        worst = max(worst, oracle.occupation_identity_check(chain, B, f).abs_diff)
    tol = THRESHOLDS.occupation_tol
    rows.append(Row("exactness", 1, "occupation_identity_max_abs_diff", worst, f"<= {tol:g}",
                    worst <= tol, "100 random reversible chains, |E| <= 50"))

    ident = kingman.builtin_test_functions()[0]
    half = Fraction(1, 2)
    bad = [n for n in range(2, 1001) if kingman.generator_L(ident, kingman.SValue(n)) != half]
    bad += [0] if kingman.generator_L(ident, kingman.SValue.zero()) != half else []
    rows.append(Row("exactness", 2, "generator_identity_violations", float(len(bad)), "== 0",
                    not bad, "L(x) = 1/2 on {1/n : 2 <= n <= 1000} and at 0"))
    suite = kingman.builtin_test_functions()
    nonzero = sum(1 for f in suite for h in suite
                  if kingman.carre_du_champ(f, h, kingman.SValue.zero()) != 0)
    rows.append(Row("exactness", 2, "carre_du_champ_at_zero_nonzero", float(nonzero), "== 0",
                    nonzero == 0, f"{len(suite)}x{len(suite)} pairs from the built-in suite"))

    Ns = (4, 8, 16)
    sums = [oracle.lem9_sum(TorusGeometry(2, N), 2) for N in Ns]
    gaps = [abs(v - 1.0) for v in sums]
    trend = THRESHOLDS.adjacency_trend_tol
    monotone = all(b <= a + trend for a, b in zip(gaps, gaps[1:]))
    rows.append(Row("exactness", 3, "adjacency_sum_gap_non_increasing", float(monotone),
                    f"gaps non-increasing (slack {trend:g})", monotone,
                    f"|sum - 1| at N = {Ns}: {_fmt(gaps)}"))
    cap = THRESHOLDS.adjacency_max_gap
    rows.append(Row("exactness", 3, "adjacency_sum_gap_at_N16", gaps[-1], f"<= {cap:g}", gaps[-1] <= cap, "d = 2, n = 2"))
    three = oracle.lem9_sum(TorusGeometry(2, 4), 3)
    rows.append(Row("exactness", 3, "adjacency_sum_n3_d2_N4", three, "finite", math.isfinite(three),
                    f"n = 2 value at N = 4: {sums[0]:.6g}"))
    return rows


# --------------------------------------------------------------------------
# exponentiality: criteria 4-5


def hitting_ratios(d: int, N: int, n: int, replicas: int, seed: int, workers: int = 1) -> np.ndarray:
    """``tau_{n-1} / theta_N`` from uniform scattered ``n``-point starts."""
    g = TorusGeometry(d, N)
    a = estimators.choose_aN(g)
    recs = run_replicas(lambda rng: random_scattered(g, n, a, rng), StopRule.reach_count(n - 1),
                        seed, replicas, workers)
    return np.array([r.tau[n - 1] for r in recs]) / theta_of(d, N)


def exponentiality(opts: SuiteOptions) -> list[Row]:
    replicas = 1000 if opts.replicas is None else opts.replicas
    if replicas < THRESHOLDS.min_ks_samples:
        raise InsufficientSamples(
            f"exponentiality needs >= {THRESHOLDS.min_ks_samples} replicas for the KS test, got {replicas}"
        )
    rows = []
    for n in (2, 3, 4):
        x = hitting_ratios(3, 16, n, replicas, sub_seed(opts.seed, 4, n), opts.workers)
        rate = kingman.lam(n)
        rep = ks_exponential(x, rate)
        rows.append(Row("exponentiality", 4, f"ks_exp_n{n}", rep.p_value, f"p > {rep.alpha:g}", rep.passed,
                        f"D = {rep.statistic:.6g}, {rep.n_samples} replicas, d = 3, N = 16"))
        mean = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(x.size))
        z = abs(mean - 1.0 / rate) / se
        rows.append(Row("exponentiality", 5, f"mean_n{n}", mean, f"|mean - 1/{rate}| <= {THRESHOLDS.n_se:g} SE",
                        z <= THRESHOLDS.n_se, f"se = {se:.6g}, z = {z:.3f}"))
    return rows


# --------------------------------------------------------------------------
# kingman limit: criteria 6 and 11


def decay_window(g: TorusGeometry) -> tuple[float, float]:
    return float(g.N**2), theta_of(g.d, g.N)


def decay_grid(g: TorusGeometry, points: int = 9) -> np.ndarray:
    lo, hi = decay_window(g)
    return np.concatenate(([0.0], np.geomspace(lo, hi, points)))


def kingman_limit(opts: SuiteOptions) -> list[Row]:
    replicas = 500 if opts.replicas is None else opts.replicas
    rows = []
    g = TorusGeometry(3, 16)
    recs = run_replicas(ParticleConfig.full(g), StopRule.full_coalescence(),
                        sub_seed(opts.seed, 6), replicas, opts.workers)
    scaled = np.array([r.tau[1] for r in recs]) / theta_of(3, 16)
    limit = kingman.sample_absorption_time(np.random.default_rng(sub_seed(opts.seed, 6, 1)), 10_000)
    rep = ks_two_sample(scaled, limit)
    rows.append(Row("kingman_limit", 6, "ks_coalescence_time", rep.p_value, f"p > {rep.alpha:g}", rep.passed,
                    f"D = {rep.statistic:.6g}, {replicas} replicas vs 10000 Kingman samples; "
                    f"mean C_N/theta = {scaled.mean():.6g}"))

    g2 = TorusGeometry(2, 32)
    recs2 = run_replicas(ParticleConfig.full(g2), StopRule.full_coalescence(),
                         sub_seed(opts.seed, 11), replicas, opts.workers)
    for geom, rs in ((g, recs), (g2, recs2)):
        table = count_decay_check(rs, geom, decay_grid(geom), decay_window(geom))
        ok0 = table.mean[0] == geom.n_sites
        spread = table.spread
        rows.append(Row("kingman_limit", 11, f"count_decay_spread_d{geom.d}_N{geom.N}", spread,
                        f"<= {THRESHOLDS.decay_spread:g}", spread <= THRESHOLDS.decay_spread and ok0,
                        f"fitted c = {table.fitted_constant:.6g} on [{table.window[0]:.6g}, {table.window[1]:.6g}]"))
    return rows


# --------------------------------------------------------------------------
# scales: criteria 7-8


def scales(opts: SuiteOptions) -> list[Row]:
    rows = []
    esc = _escape(3, sub_seed(opts.seed, 7))
    v500, _ = esc.at(500)
    v1000, se = esc.at(1000)
    drift = abs(v500 - v1000)
    rows.append(Row("scales", 7, "escape_radius_stability", drift, f"<= {THRESHOLDS.escape_stability:g}",
                    drift <= THRESHOLDS.escape_stability, f"v3(500) = {v500:.6g}, v3(1000) = {v1000:.6g} +- {se:.2g}"))
    rep = estimators.estimate_theta(TorusGeometry(3, 16), "exact_solve", v_d=v1000)
    rows.append(Row("scales", 7, "theta_gap_d3_N16", rep.relative_gap, f"<= {THRESHOLDS.theta_gap_d3:g}",
                    rep.relative_gap <= THRESHOLDS.theta_gap_d3,
                    f"theta/N^3 = {rep.ratio:.6g} vs 1/(2 v3) = {1 / (2 * v1000):.6g}"))
    Ns = (16, 32, 64)
    ratios = [estimators.estimate_theta(TorusGeometry(2, N), "exact_solve").ratio for N in Ns]
    dist = [abs(r - 1 / math.pi) for r in ratios]
    rows.append(Row("scales", 7, "theta_d2_approaches_inv_pi", dist[-1], "distance to 1/pi strictly decreasing",
                    _strictly_decreasing(dist), f"theta/(N^2 log N) at N = {Ns}: {_fmt(ratios)}"))

    target = v1000 * math.exp(-1.0)
    Ns = (6, 8, 12)
    gaps = []
    for N in Ns:
        g = TorusGeometry(3, N)
        surv = oracle.pair_coalescence_law(g, [g.point((0, 0, 0)), g.unit(0)], [theta_of(3, N)])[0]
        gaps.append(abs(surv - target) / target)
    cap = THRESHOLDS.pair_law_gap
    rows.append(Row("scales", 8, "pair_law_gap_decreasing", gaps[-1], "strictly decreasing in N",
                    _strictly_decreasing(gaps), f"gaps at N = {Ns}: {_fmt(gaps)}"))
    rows.append(Row("scales", 8, "pair_law_gap_N12", gaps[-1], f"<= {cap:g}", gaps[-1] <= cap,
                    f"target v3/e = {target:.6g}"))
    return rows


# --------------------------------------------------------------------------
# replacement: criterion 9


def replacement(opts: SuiteOptions) -> list[Row]:
    replicas = 1000 if opts.replicas is None else opts.replicas
    Ns = (8, 16, 32)
    means, ses = [], []
    for N in Ns:
        g = TorusGeometry(3, N)
        vals = replacement_ensemble(ParticleConfig.full(g), 0.1, 1.0, {2: 1.0, 3: 1.0}, theta_of(3, N),
                                    sub_seed(opts.seed, 9, N), replicas, workers=opts.workers)
        means.append(float(vals.mean()))
        ses.append(float(vals.std(ddof=1) / math.sqrt(vals.size)))
    mags = [abs(m) for m in means]
    rows = [
        Row("replacement", 9, "abs_mean_decreasing", mags[-1], "|mean| strictly decreasing in N",
            _strictly_decreasing(mags), f"means at N = {Ns}: {_fmt(means)}; se {_fmt(ses)}"),
        Row("replacement", 9, "mean_N32_near_zero", means[-1], f"|mean| <= {THRESHOLDS.n_se:g} SE",
            mags[-1] <= THRESHOLDS.n_se * ses[-1], f"se = {ses[-1]:.6g}"),
    ]
    return rows


# --------------------------------------------------------------------------
# martingale: criterion 10


def martingale(opts: SuiteOptions) -> list[Row]:
    n_paths = 10_000 if opts.replicas is None else opts.replicas
    rng = np.random.default_rng(sub_seed(opts.seed, 10))
    s, t = 0.5, 1.5
    paths = kingman.sample_paths(kingman.SValue.zero(), t, rng, n_paths)
    rows = []
    for f in kingman.martingale_test_functions():
        for name, B in kingman.BUILTIN_CONDITIONINGS.items():
            est, se = kingman.martingale_residual(paths, f, s, t, B)
            ok = abs(est) <= THRESHOLDS.n_se * se
            rows.append(Row("martingale", 10, f"residual[{f.name}|{name}]", est,
                            f"|estimate| <= {THRESHOLDS.n_se:g} SE", ok, f"se = {se:.6g}"))
    return rows


SUITES: dict[str, Callable[[SuiteOptions], list[Row]]] = {
    "exactness": exactness,
    "exponentiality": exponentiality,
    "kingman_limit": kingman_limit,
    "scales": scales,
    "replacement": replacement,
    "martingale": martingale,
}


def run_suite(name: str, opts: SuiteOptions | None = None) -> list[Row]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return SUITES[name](opts or SuiteOptions())


def write_csv(rows: list[Row], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([r.suite, r.criterion, r.check, repr(float(r.value)), r.condition,
                    "pass" if r.passed else "FAIL", r.detail])


def rows_to_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()
