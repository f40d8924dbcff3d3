"""Geometry of the discrete torus and the nearest-neighbour walk on it.

Sites are linearised in row-major order, so ``index = sum(c[j] * N**(d-1-j))``.
All continuous-time quantities take an explicit ``speed``: the total jump
rate of a single walker. A particle of the coalescing system jumps at rate 1,
the difference of two independent particles at rate 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError

TorusPoint = tuple[int, ...]

#: Largest torus for which full transition rows are materialised.
MAX_DENSE_SITES = 10**6


@dataclass(frozen=True)
class TorusGeometry:
    """The torus ``{0, ..., N-1}^d`` with periodic boundary."""

    d: int
    N: int

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.d}")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"side length must be an integer >= 2, got {self.N}")

    @property
    def n_sites(self) -> int:
        return self.N**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def strides(self) -> np.ndarray:
        return np.array([self.N ** (self.d - 1 - j) for j in range(self.d)], dtype=np.int64)

    def point(self, coords: Sequence[int]) -> TorusPoint:
        if len(coords) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(coords)}")
        return tuple(int(c) % self.N for c in coords)

    def index(self, coords: Sequence[int]) -> int:
        idx = 0
        for c in self.point(coords):
            idx = idx * self.N + c
        return idx

    def coords(self, index: int) -> TorusPoint:
        if not 0 <= index < self.n_sites:
            raise ValueError(f"site index {index} outside torus of {self.n_sites} sites")
        out = []
        for _ in range(self.d):
            index, c = divmod(index, self.N)
            out.append(c)
        return tuple(reversed(out))

    def all_coords(self) -> np.ndarray:
        """``(n_sites, d)`` array of coordinates in index order."""
        grids = np.indices(self.shape).reshape(self.d, -1)
        return grids.T.copy()

    def unit(self, j: int, sign: int = 1) -> TorusPoint:
        return tuple((sign if k == j else 0) % self.N for k in range(self.d))

    def shift(self, index: int, j: int, sign: int) -> int:
        stride = self.N ** (self.d - 1 - j)
        c = (index // stride) % self.N
        return index + (((c + sign) % self.N) - c) * stride

    def neighbors(self, index: int) -> list[int]:
        """The ``2d`` kernel targets of ``index`` (with multiplicity when N = 2)."""
        return [self.shift(index, j, s) for j in range(self.d) for s in (1, -1)]


def jump_kernel(g: TorusGeometry, delta: Sequence[int], exact: bool = False) -> float | Fraction:
    """Probability that a single jump displaces a walker by ``delta``.

    The kernel puts mass ``1/(2d)`` on each of ``+-e_j``; displacements are read
    modulo ``N`` so on a torus with ``N = 2`` the two directions coincide and
    their masses add.
    """
    delta = g.point(delta)
    hits = 0
    for j in range(g.d):
        for s in (1, -1):
            if g.unit(j, s) == delta:
                hits += 1
    p = Fraction(hits, 2 * g.d)
    return p if exact else float(p)


def _one_dim_kernel(N: int, rate: float, t: float) -> np.ndarray:
    # continuous-time walk on Z_N jumping +-1 at total rate `rate`
    k = np.arange(N)
    decay = np.exp(-rate * t * (1.0 - np.cos(2.0 * np.pi * k / N)))
    z = np.arange(N)
    phase = np.cos(2.0 * np.pi * np.outer(z, k) / N)
    row = phase @ decay / N
    return np.clip(row, 0.0, 1.0)


def _check_time(t: float, speed: float) -> None:
    if not math.isfinite(t) or t < 0:
        raise ValueError(f"time must be finite and non-negative, got {t}")
    if not math.isfinite(speed) or speed <= 0:
        raise ValueError(f"speed must be positive, got {speed}")


def walk_transition_probability(
    g: TorusGeometry,
    x: Sequence[int],
    y: Sequence[int],
    t: float,
    speed: float = 1.0,
) -> float:
    """``P_x[x(t) = y]`` for the walk with total jump rate ``speed``.

    Each coordinate moves as an independent walk on ``Z_N`` with rate
    ``speed / d``, so the kernel factorises over coordinates and each factor is
    diagonalised by the discrete Fourier basis.
    """
    _check_time(t, speed)
    x, y = g.point(x), g.point(y)
    prob = 1.0
    for j in range(g.d):
        row = _one_dim_kernel(g.N, speed / g.d, t)
        prob *= row[(y[j] - x[j]) % g.N]
    return float(prob)


def transition_row(g: TorusGeometry, x: Sequence[int], t: float, speed: float = 1.0) -> np.ndarray:
    """Full distribution ``p_t(x, .)`` as an array over site indices."""
    _check_time(t, speed)
    if g.n_sites > MAX_DENSE_SITES:
        raise CapacityError(f"{g.n_sites} sites exceeds the cap of {MAX_DENSE_SITES}")
    x = g.point(x)
    row = _one_dim_kernel(g.N, speed / g.d, t)
    out = np.ones(1)
    for j in range(g.d):
        out = np.multiply.outer(out, np.roll(row, x[j]))
    return out.reshape(-1)


def tv_distance_from_uniform(g: TorusGeometry, x: Sequence[int], t: float, speed: float = 1.0) -> float:
    """Total-variation distance between ``p_t(x, .)`` and the uniform law."""
    row = transition_row(g, x, t, speed)
    return float(min(1.0, 0.5 * np.abs(row - 1.0 / g.n_sites).sum()))


def spectral_gap(g: TorusGeometry, speed: float = 1.0) -> float:
    return speed / g.d * (1.0 - math.cos(2.0 * math.pi / g.N))


def mixing_time(g: TorusGeometry, speed: float = 1.0, eps: float = 0.25) -> float:
    """Smallest ``t`` with ``tv_distance_from_uniform(g, 0, t) <= eps`` (bisection).

    By translation invariance the starting point does not matter.
    """
    origin = (0,) * g.d
    hi = 1.0
    while tv_distance_from_uniform(g, origin, hi, speed) > eps:
        hi *= 2.0
    lo = 0.0
    while hi - lo > 1e-6 * hi:
        mid = 0.5 * (lo + hi)
        if tv_distance_from_uniform(g, origin, mid, speed) > eps:
            lo = mid
        else:
            hi = mid
    return hi


def torus_distance(g: TorusGeometry, x: Sequence[int], y: Sequence[int]) -> float:
    """Euclidean distance between ``x`` and ``y`` with wrap-around."""
    x, y = g.point(x), g.point(y)
    sq = 0
    for a, b in zip(x, y):
        diff = abs(a - b)
        diff = min(diff, g.N - diff)
        sq += diff * diff
    return math.sqrt(sq)


def wrapped_norms(g: TorusGeometry) -> np.ndarray:
    """Torus distance from the origin to every site, in index order."""
    c = g.all_coords()
    c = np.minimum(c, g.N - c)
    return np.sqrt((c * c).sum(axis=1))


def walk_generator(g: TorusGeometry, speed: float = 1.0) -> sp.csr_matrix:
    """Sparse ``Q`` with ``Q[x, y]`` the jump rate from ``x`` to ``y``; rows sum to 0."""
    n = g.n_sites
    idx = np.arange(n, dtype=np.int64)
    coords = g.all_coords()
    rows, cols = [], []
    for j in range(g.d):
        for s in (1, -1):
            c = coords.copy()
            c[:, j] = (c[:, j] + s) % g.N
            rows.append(idx)
            cols.append(c @ g.strides)
    rows = np.concatenate(rows + [idx])
    cols = np.concatenate(cols + [idx])
    vals = np.concatenate([np.full(2 * g.d * n, speed / (2 * g.d)), np.full(n, -speed)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
