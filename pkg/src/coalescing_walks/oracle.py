"""Exact linear algebra on small continuous-time chains.

These routines are the ground truth against which the simulations are
checked: mean hitting times, occupation integrals, coalescence-time sums on
small tori, and survival probabilities by uniformization.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
from scipy.stats import poisson

from .errors import CapacityError, StructuralError
from .lattice import TorusGeometry, jump_kernel, walk_generator

DEFAULT_STATE_CAP = 20_000
POISSON_TAIL = 1e-12


@dataclass
class ChainSpec:
    """Finite chain given by its off-diagonal rate matrix.

    ``rates[a, b]`` is the jump rate from state ``a`` to state ``b``; the
    diagonal is ignored. ``pi`` is filled in from the null space of the
    generator when not supplied.
    """

    states: list[Hashable]
    rates: sp.csr_matrix
    pi: np.ndarray | None = None
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        self.rates = sp.csr_matrix(self.rates, dtype=float)
        self.rates.setdiag(0.0)
        self.rates.eliminate_zeros()
        if self.rates.shape != (len(self.states), len(self.states)):
            raise ValueError("rate matrix does not match the number of states")
        if (self.rates.data < 0).any():
            raise ValueError("rates must be non-negative")
        self._index = {s: i for i, s in enumerate(self.states)}

    @classmethod
    def from_rate_function(
        cls, states: Sequence[Hashable], rate: Callable[[Hashable, Hashable], float]
    ) -> "ChainSpec":
        n = len(states)
        dense = np.array([[rate(a, b) if i != j else 0.0 for j, b in enumerate(states)]
                          for i, a in enumerate(states)])
        return cls(list(states), sp.csr_matrix(dense.reshape(n, n)))

    def __len__(self) -> int:
        return len(self.states)

    def index(self, state: Hashable) -> int:
        return self._index[state]

    def generator(self) -> sp.csr_matrix:
        out = self.rates.tolil()
        out.setdiag(-np.asarray(self.rates.sum(axis=1)).ravel())
        return out.tocsr()

    def stationary(self) -> np.ndarray:
        if self.pi is None:
            L = self.generator().toarray()
            # solve pi L = 0 with sum(pi) = 1
            A = np.vstack([L.T, np.ones(len(self))])
            b = np.zeros(len(self) + 1)
            b[-1] = 1.0
            self.pi = np.linalg.lstsq(A, b, rcond=None)[0]
        return self.pi

    def is_reversible(self, tol: float = 1e-12) -> bool:
        pi = self.stationary()
        flow = sp.diags(pi) @ self.rates
        return bool(abs(flow - flow.T).max() <= tol) if flow.nnz else True


def random_reversible_chain(rng: np.random.Generator, n_states: int, edge_prob: float = 0.2) -> ChainSpec:
    """Irreducible reversible chain with random conductances and random ``pi``.

    A random Hamiltonian path guarantees irreducibility; extra edges are
    added independently with probability ``edge_prob``. Rates are
    ``c(a, b) / pi(a)`` for symmetric conductances ``c``.
    """
    if n_states < 2:
        raise ValueError("need at least two states")
    pi = rng.uniform(0.5, 2.0, n_states)
    pi /= pi.sum()
    C = np.zeros((n_states, n_states))
    order = rng.permutation(n_states)
    lo = np.minimum(order[:-1], order[1:])
    hi = np.maximum(order[:-1], order[1:])
    C[lo, hi] = rng.uniform(0.1, 1.0, n_states - 1)
    extra = np.triu(rng.random((n_states, n_states)) < edge_prob, 1)
    C[extra] += rng.uniform(0.1, 1.0, int(extra.sum()))
    C = C + C.T
    return ChainSpec(list(range(n_states)), sp.csr_matrix(C / pi[:, None]), pi)


def _indices(chain: ChainSpec, B) -> np.ndarray:
    idx = np.array(sorted({chain.index(b) for b in B}), dtype=np.int64)
    if idx.size == 0:
        raise ValueError("target set must be nonempty")
    return idx


def _reaches(chain: ChainSpec, target: np.ndarray) -> np.ndarray:
    """Mask of states from which ``target`` is reachable along positive rates."""
    n = len(chain)
    # reversed edges plus a virtual root (index n) pointing at every target
    rev = chain.rates.T.tocoo()
    rows = np.concatenate([rev.row, np.full(target.size, n)])
    cols = np.concatenate([rev.col, target])
    graph = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n + 1, n + 1))
    order = csgraph.breadth_first_order(graph, n, directed=True, return_predecessors=False)
    mask = np.zeros(n + 1, dtype=bool)
    mask[order] = True
    return mask[:n]


def _solve_off_target(chain: ChainSpec, B, rhs: np.ndarray, cap: int) -> tuple[np.ndarray, float]:
    """Solve ``-L u = rhs`` off ``B`` with ``u = 0`` on ``B``.

    Returns the full solution vector and the max-norm residual after one
    round of iterative refinement.
    """
    n = len(chain)
    if n > cap:
        raise CapacityError(f"{n} states exceeds the cap of {cap}")
    target = _indices(chain, B)
    free = np.setdiff1d(np.arange(n), target)
    out = np.zeros((n,) + rhs.shape[1:])
    if free.size == 0:
        return out, 0.0
    if not _reaches(chain, target)[free].all():
        raise StructuralError("target set is unreachable from some states")
    A = -chain.generator()[free][:, free].toarray()
    b = rhs[free]
    lu = sla.lu_factor(A, check_finite=False)
    u = sla.lu_solve(lu, b, check_finite=False)
    r = b - A @ u
    u = u + sla.lu_solve(lu, r, check_finite=False)
    residual = float(np.abs(b - A @ u).max())
    out[free] = u
    return out, residual


@dataclass
class HittingResult:
    values: np.ndarray
    residual: float

    def as_dict(self, chain: ChainSpec) -> dict:
        return dict(zip(chain.states, self.values.tolist()))


def expected_hitting_time(chain: ChainSpec, B, cap: int = DEFAULT_STATE_CAP) -> HittingResult:
    """``E_x[H_B]`` for every state, aligned with ``chain.states``."""
    h, res = _solve_off_target(chain, B, np.ones(len(chain)), cap)
    return HittingResult(h, res)


@dataclass(frozen=True)
class OccupationCheck:
    lhs: float
    rhs: float
    abs_diff: float


def occupation_identity_check(chain: ChainSpec, B, f: np.ndarray,
                              cap: int = DEFAULT_STATE_CAP) -> OccupationCheck:
    """Both sides of ``E_pi[int_0^{H_B} f(X_s) ds] = sum_x pi(x) f(x) E_x[H_B]``.

    The left side solves the occupation system ``-L u = f`` off ``B``; the
    right side solves the hitting-time system. The identity needs
    reversibility, which is checked first.
    """
    if not chain.is_reversible(1e-12):
        raise ValueError("occupation identity requires a reversible chain")
    f = np.asarray(f, dtype=float)
    pi = chain.stationary()
    both = np.column_stack([f, np.ones(len(chain))])
    sol, _ = _solve_off_target(chain, B, both, cap)
    lhs = float(pi @ sol[:, 0])
    rhs = float(np.sum(pi * f * sol[:, 1]))
    return OccupationCheck(lhs, rhs, abs(lhs - rhs))


# --------------------------------------------------------------------------
# chains built from the torus


def difference_walk(g: TorusGeometry, speed: float = 2.0) -> ChainSpec:
    """Walk on the torus sites with total jump rate ``speed`` (uniform stationary law)."""
    Q = walk_generator(g, speed)
    return ChainSpec(list(range(g.n_sites)), Q, np.full(g.n_sites, 1.0 / g.n_sites))


def meeting_times(g: TorusGeometry, speed: float = 2.0, cap: int = DEFAULT_STATE_CAP) -> HittingResult:
    """Mean hitting time of the origin for the speed-``speed`` walk, from every site."""
    return expected_hitting_time(difference_walk(g, speed), [0], cap)


def theta_exact(g: TorusGeometry, cap: int = DEFAULT_STATE_CAP) -> tuple[float, float]:
    """Meeting time of two independent rate-1 walks from uniform starts, and the solve residual."""
    h = meeting_times(g, 2.0, cap)
    return float(h.values.mean()), h.residual


def theta_spectral(g: TorusGeometry) -> float:
    """Same quantity via the eigenvalues of the speed-2 walk.

    ``E_pi[H_0] = sum_{k != 0} 1 / (2 (1 - phi(k)))`` with ``phi`` the Fourier
    transform of the jump kernel.
    """
    c = np.cos(2.0 * np.pi * np.arange(g.N) / g.N)
    phi = np.zeros(g.shape)
    for j in range(g.d):
        shape = [1] * g.d
        shape[j] = g.N
        phi = phi + c.reshape(shape)
    gaps = 2.0 * (1.0 - phi.reshape(-1) / g.d)
    return float(np.sum(1.0 / gaps[1:]))


def coalescing_chain(g: TorusGeometry, n: int, cap: int = DEFAULT_STATE_CAP) -> ChainSpec:
    """The coalescing system on ``n``-point sets, with every coalescence sent to one
    absorbing state ``"merged"``."""
    total = math.comb(g.n_sites, n)
    if total + 1 > cap:
        raise CapacityError(f"C({g.n_sites}, {n}) = {total} states exceeds the cap of {cap}")
    subsets = list(itertools.combinations(range(g.n_sites), n))
    index = {s: i for i, s in enumerate(subsets)}
    merged = len(subsets)
    rows, cols, vals = [], [], []
    w = 1.0 / (2 * g.d)
    for i, A in enumerate(subsets):
        occupied = set(A)
        for x in A:
            for y in g.neighbors(x):
                if y in occupied:
                    rows.append(i)
                    cols.append(merged)
                else:
                    B = tuple(sorted((occupied - {x}) | {y}))
                    rows.append(i)
                    cols.append(index[B])
                vals.append(w)
    m = merged + 1
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
    return ChainSpec(subsets + ["merged"], Q)


def rate_R_sites(g: TorusGeometry, sites: Sequence[int]) -> float:
    occ = set(sites)
    hits = sum(1 for x in sites for y in g.neighbors(x) if y in occ)
    return hits / (2 * g.d)


def lem9_sum(g: TorusGeometry, n: int, cap: int = DEFAULT_STATE_CAP) -> float:
    """``sum over n-point sets A, uniformly weighted, of E_A[tau_{n-1}] R(A)``.

    For ``n = 2`` the expectation depends only on the difference ``y - x``,
    which moves as the speed-2 walk, so one hitting-time solve on ``N^d``
    states suffices. For ``n = 3`` the coalescing chain on 3-point sets is
    solved directly.
    """
    if n == 2:
        h = meeting_times(g, 2.0, cap).values
        weights = np.array([jump_kernel(g, g.coords(i)) for i in range(g.n_sites)])
        # unordered pairs {x, x+delta}: sum_x sum_delta / 2, with R = 2 p(delta)
        return float(g.n_sites * np.dot(weights, h) / math.comb(g.n_sites, 2))
    if n == 3:
        chain = coalescing_chain(g, 3, cap)
        h = expected_hitting_time(chain, ["merged"], cap).values[:-1]
        R = np.array([rate_R_sites(g, A) for A in chain.states[:-1]])
        return float(np.mean(h * R))
    raise ValueError("exact sums are available for n = 2 and n = 3 only")


# --------------------------------------------------------------------------
# transient laws


def uniformized_survival(Q_killed: sp.csr_matrix, t_grid: Sequence[float]) -> np.ndarray:
    """``P_x[no killing by time t]`` for every state ``x`` and every ``t`` in ``t_grid``.

    ``Q_killed`` is a sub-generator (rows sum to minus the killing rate).
    Evaluated as ``sum_k Pois(k; Lambda t) P^k 1`` with ``P = I + Q/Lambda``,
    truncated where the Poisson tail drops below ``1e-12``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0):
        raise ValueError("times must be non-negative")
    n = Q_killed.shape[0]
    Lam = float(np.max(-Q_killed.diagonal()))
    if Lam == 0:
        return np.ones((len(t_grid), n))
    P = sp.identity(n, format="csr") + Q_killed / Lam
    t_max = float(t_grid.max())
    K = int(poisson.isf(POISSON_TAIL, Lam * t_max)) + 2 if t_max > 0 else 1
    ks = np.arange(K)
    weights = np.array([poisson.pmf(ks, Lam * t) for t in t_grid])
    out = np.zeros((len(t_grid), n))
    v = np.ones(n)
    for k in range(K):
        out += np.outer(weights[:, k], v)
        v = P @ v
    return np.clip(out, 0.0, 1.0)


def pair_survival_all(g: TorusGeometry, t_grid: Sequence[float], cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """``P[tau_1 > t]`` for the pair ``{0, delta}`` for every site ``delta`` (0 gives 0)."""
    if g.n_sites > cap:
        raise CapacityError(f"{g.n_sites} sites exceeds the cap of {cap}")
    Q = walk_generator(g, 2.0)
    keep = np.arange(1, g.n_sites)
    Qk = Q[keep][:, keep].tocsr()
    surv = uniformized_survival(Qk, t_grid)
    return np.hstack([np.zeros((len(surv), 1)), surv])


def pair_coalescence_law(
    g: TorusGeometry, pair: Sequence[Sequence[int]], t_grid: Sequence[float],
    cap: int = DEFAULT_STATE_CAP,
) -> np.ndarray:
    """Survival ``P[tau_1 > t]`` of the two-particle system started from ``pair``."""
    x, y = (g.point(p) for p in pair)
    if x == y:
        raise ValueError("a pair needs two distinct sites")
    delta = g.index(tuple(b - a for a, b in zip(x, y)))
    return pair_survival_all(g, t_grid, cap)[:, delta]
