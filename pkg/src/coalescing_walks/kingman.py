"""Kingman's block-counting process on S = {1, 1/2, 1/3, ..., 0}.

The block count ``n`` drops to ``n - 1`` at rate ``n(n-1)/2``. A state of
``S`` is stored as its block count, with 0 standing for infinitely many
blocks (the point 0 of S).

The generator and the carre du champ are evaluated in exact rational
arithmetic: test-function values are converted with ``Fraction(float)``,
which is exact, so identities such as ``Gamma(f, g)(0) == 0`` hold with no
rounding residue.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

Number = int | float | Fraction

INFINITE_BLOCKS = 0
DEFAULT_EPS_TAIL = 1e-4


def lam(n: int) -> int:
    """Kingman death rate ``C(n, 2)`` at ``n`` blocks."""
    if n < 1:
        raise ValueError(f"block count must be >= 1, got {n}")
    return n * (n - 1) // 2


def sample_T(n: int, rng: np.random.Generator) -> float:
    """Holding time at level ``n``: exponential with mean ``2 / (n (n - 1))``."""
    if n < 2:
        raise ValueError(f"holding times exist only for n >= 2, got {n}")
    return float(rng.exponential(1.0 / lam(n)))


def truncation_level(eps_tail: float) -> int:
    """``k`` with ``E[sum_{n > k} T_n] = 2 / k <= eps_tail``."""
    if not eps_tail > 0:
        raise ValueError("eps_tail must be positive")
    return math.ceil(2.0 / eps_tail)


@dataclass(frozen=True)
class SValue:
    """A point of S, stored as a block count (0 means infinitely many)."""

    blocks: int

    def __post_init__(self) -> None:
        if self.blocks < 0:
            raise ValueError("block count must be >= 0")

    @classmethod
    def zero(cls) -> "SValue":
        return cls(INFINITE_BLOCKS)

    @classmethod
    def inverse(cls, n: int) -> "SValue":
        return cls(n)

    @property
    def value(self) -> Fraction:
        return Fraction(0) if self.blocks == INFINITE_BLOCKS else Fraction(1, self.blocks)

    def __float__(self) -> float:
        return float(self.value)


def _exact(v: Number) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(v)


@dataclass(frozen=True)
class TestFunction:
    """A function on S together with its derivative at 0.

    ``fn`` receives the point of S as a ``Fraction``. ``cutoff`` declares
    membership of the core of functions constant near 0: ``f(1/n) = f(0)``
    for every ``n >= cutoff``.
    """

    __test__ = False

    name: str
    fn: Callable[[Fraction], Number]
    derivative_at_zero: Number
    cutoff: int | None = None

    def __call__(self, y: SValue | Number) -> Fraction:
        point = y.value if isinstance(y, SValue) else _exact(y)
        return _exact(self.fn(point))

    def at_blocks(self, n: int) -> Fraction:
        return self(SValue(n))

    def derivative_error(self, n: int = 10_000) -> float:
        """Gap between the declared ``f'(0)`` and a Richardson-extrapolated
        difference quotient along ``1/n``."""
        f0 = float(self(0))

        def quotient(m: int) -> float:
            return m * (float(self(Fraction(1, m))) - f0)

        estimate = 2.0 * quotient(2 * n) - quotient(n)
        return abs(estimate - float(self.derivative_at_zero))


def product(f: TestFunction, g: TestFunction) -> TestFunction:
    deriv = _exact(f.derivative_at_zero) * g(0) + f(0) * _exact(g.derivative_at_zero)
    cutoff = None if f.cutoff is None or g.cutoff is None else max(f.cutoff, g.cutoff)
    return TestFunction(f"({f.name})*({g.name})", lambda y: f(y) * g(y), deriv, cutoff)


def combination(a: Number, f: TestFunction, b: Number, g: TestFunction) -> TestFunction:
    a, b = _exact(a), _exact(b)
    deriv = a * _exact(f.derivative_at_zero) + b * _exact(g.derivative_at_zero)
    cutoff = None if f.cutoff is None or g.cutoff is None else max(f.cutoff, g.cutoff)
    return TestFunction(f"{a}*({f.name})+{b}*({g.name})", lambda y: a * f(y) + b * g(y), deriv, cutoff)


def constant_near_zero(base: TestFunction, cutoff: int) -> TestFunction:
    """``base`` on ``{1, ..., 1/(cutoff-1)}`` and ``base(1/cutoff)`` from there to 0."""
    if cutoff < 2:
        raise ValueError("cutoff must be >= 2")
    floor = Fraction(1, cutoff)

    def fn(y: Fraction) -> Fraction:
        return base(y) if y >= floor else base(floor)

    return TestFunction(f"{base.name}|cut{cutoff}", fn, 0, cutoff)


def builtin_test_functions() -> list[TestFunction]:
    """Ten functions: eight smooth on a neighbourhood of S and two constant near 0."""
    identity = TestFunction("x", lambda y: y, 1)
    smooth = [
        identity,
        TestFunction("x^2", lambda y: y * y, 0),
        TestFunction("x^3", lambda y: y**3, 0),
        TestFunction("exp(x)", lambda y: math.exp(y), 1),
        TestFunction("sin(3x)", lambda y: math.sin(3 * y), 3),
        TestFunction("cos(2x)", lambda y: math.cos(2 * y), 0),
        TestFunction("1/(1+x)", lambda y: 1 / (1 + y), -1),
        TestFunction("log(1+2x)", lambda y: math.log1p(2 * y), 2),
    ]
    cores = [
        constant_near_zero(identity, 5),
        constant_near_zero(TestFunction("exp(-x)", lambda y: math.exp(-y), -1), 10),
    ]
    return smooth + cores


def martingale_test_functions() -> list[TestFunction]:
    by_name = {f.name: f for f in builtin_test_functions()}
    return [by_name[k] for k in ("x", "x^2", "exp(x)", "sin(3x)", "x|cut5")]


def generator_L(f: TestFunction, y: SValue) -> Fraction:
    """The limit generator applied to ``f`` at ``y``."""
    n = y.blocks
    if n == INFINITE_BLOCKS:
        return _exact(f.derivative_at_zero) / 2
    if n == 1:
        return Fraction(0)
    return lam(n) * (f.at_blocks(n - 1) - f.at_blocks(n))


def carre_du_champ(f: TestFunction, g: TestFunction, y: SValue) -> Fraction:
    """``L(fg) - g L f - f L g`` at ``y``."""
    return generator_L(product(f, g), y) - g(y) * generator_L(f, y) - f(y) * generator_L(g, y)


# --------------------------------------------------------------------------
# paths


@dataclass
class KingmanPath:
    """Block-count path started at ``start_blocks``.

    ``jump_times[i]`` is when the count drops from ``start_blocks - i`` to
    ``start_blocks - i - 1``; only jumps up to ``horizon`` are kept. A path
    truncated from an entrance at infinity is reported only from ``t_min``
    on; earlier queries return the infinite-block sentinel.
    """

    start_blocks: int
    jump_times: np.ndarray
    horizon: float
    truncated: bool = False
    t_min: float = 0.0

    def levels_at(self, t: float | np.ndarray) -> np.ndarray:
        """Block count of the underlying finite chain, ignoring the burn-in."""
        t = np.asarray(t, dtype=float)
        if np.any(t > self.horizon):
            raise ValueError("query beyond the sampled horizon")
        return self.start_blocks - np.searchsorted(self.jump_times, t, side="right")

    def count_at(self, t: float | np.ndarray) -> np.ndarray:
        n = self.levels_at(t)
        if self.truncated:
            n = np.where(np.asarray(t) < self.t_min, INFINITE_BLOCKS, n)
        return n

    def x_at(self, t: float | np.ndarray) -> np.ndarray:
        n = np.asarray(self.count_at(t), dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(n == INFINITE_BLOCKS, 0.0, 1.0 / n)

    def to_json(self) -> list[list[float]]:
        """``[[level, time], ...]``: the start level at time 0, then each new level."""
        pairs = [[self.start_blocks, 0.0]]
        pairs += [[self.start_blocks - i - 1, float(t)] for i, t in enumerate(self.jump_times)]
        return pairs


def sample_path(
    start: SValue,
    horizon: float,
    rng: np.random.Generator,
    eps_tail: float = DEFAULT_EPS_TAIL,
) -> KingmanPath:
    """Sample the block count on ``[0, horizon]``.

    From ``1/k`` the path is the exact chain of holding times ``T_k, ..., T_2``.
    From 0 the chain starts at ``k_max = ceil(2/eps_tail)`` blocks, so the
    neglected tail has mean at most ``eps_tail``, and is reported from
    ``t_min = eps_tail`` on.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    truncated = start.blocks == INFINITE_BLOCKS
    k = truncation_level(eps_tail) if truncated else start.blocks
    if k > 1:
        levels = np.arange(k, 1, -1, dtype=np.float64)
        holds = rng.standard_exponential(k - 1) / (0.5 * levels * (levels - 1.0))
        jumps = np.cumsum(holds)
        jumps = jumps[: np.searchsorted(jumps, horizon, side="right")]
    else:
        jumps = np.empty(0)
    return KingmanPath(k, jumps, float(horizon), truncated, eps_tail if truncated else 0.0)


def sample_paths(
    start: SValue, horizon: float, rng: np.random.Generator, n_paths: int,
    eps_tail: float = DEFAULT_EPS_TAIL,
) -> list[KingmanPath]:
    return [sample_path(start, horizon, rng, eps_tail) for _ in range(n_paths)]


def sample_absorption_time(
    rng: np.random.Generator, size: int, eps_tail: float = DEFAULT_EPS_TAIL, chunk: int = 256,
) -> np.ndarray:
    """Samples of ``sum_{k=2}^{k_max} T_k``, the time from (truncated) infinity to one block."""
    k_max = truncation_level(eps_tail)
    levels = np.arange(2, k_max + 1, dtype=np.float64)
    scale = 1.0 / (0.5 * levels * (levels - 1.0))
    out = np.empty(size)
    for lo in range(0, size, chunk):
        hi = min(size, lo + chunk)
        out[lo:hi] = (rng.standard_exponential((hi - lo, k_max - 1)) * scale).sum(axis=1)
    return out


# --------------------------------------------------------------------------
# martingale checks

Conditioning = Callable[[KingmanPath, float], float]


def condition_one(path: KingmanPath, s: float) -> float:
    return 1.0


def condition_few_blocks(path: KingmanPath, s: float) -> float:
    """Indicator that at most 8 blocks remain at time ``s/2``."""
    return float(path.levels_at(s / 2) <= 8)


def condition_cosine(path: KingmanPath, s: float) -> float:
    """``cos(5 X_s)``, a bounded smooth function of the present state."""
    return float(math.cos(5.0 / path.levels_at(s)))


BUILTIN_CONDITIONINGS: dict[str, Conditioning] = {
    "one": condition_one,
    "few_blocks_at_half": condition_few_blocks,
    "cos_5x_at_s": condition_cosine,
}


def _tables(f: TestFunction, k: int) -> tuple[np.ndarray, np.ndarray]:
    fv = np.zeros(k + 1)
    lv = np.zeros(k + 1)
    for n in range(1, k + 1):
        fv[n] = float(f.at_blocks(n))
        lv[n] = float(generator_L(f, SValue(n)))
    return fv, lv


def martingale_increments(
    paths: Sequence[KingmanPath], f: TestFunction, s: float, t: float,
) -> np.ndarray:
    """Per-path ``M_t - M_s`` with ``M_t = f(X_t) - int_0^t (L f)(X_u) du``.

    The integral is summed exactly over the piecewise-constant path, using the
    block counts of the sampled chain.
    """
    if not paths:
        raise ValueError("need at least one path")
    if not 0 <= s < t:
        raise ValueError("need 0 <= s < t")
    k = max(p.start_blocks for p in paths)
    fv, lv = _tables(f, k)
    out = np.empty(len(paths))
    for m, p in enumerate(paths):
        if t > p.horizon:
            raise ValueError("t beyond path horizon")
        J = p.jump_times
        i_s = int(np.searchsorted(J, s, side="right"))
        i_t = int(np.searchsorted(J, t, side="right"))
        bounds = np.concatenate(([s], J[i_s:i_t], [t]))
        levels = p.start_blocks - np.arange(i_s, i_t + 1)
        integral = float(np.dot(np.diff(bounds), lv[levels]))
        out[m] = fv[p.start_blocks - i_t] - fv[p.start_blocks - i_s] - integral
    return out


def martingale_residual(
    paths: Sequence[KingmanPath],
    f: TestFunction,
    s: float,
    t: float,
    B: Conditioning = condition_one,
) -> tuple[float, float]:
    """Monte Carlo estimate and standard error of ``E[B (M_t - M_s)]``."""
    inc = martingale_increments(paths, f, s, t)
    weights = np.array([B(p, s) for p in paths])
    vals = weights * inc
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.inf
    return float(vals.mean()), se
