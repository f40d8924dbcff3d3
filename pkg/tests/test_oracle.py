import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid
from scipy.sparse.linalg import expm_multiply

from coalescing_walks import oracle
from coalescing_walks.errors import CapacityError, StructuralError
from coalescing_walks.lattice import TorusGeometry, walk_generator

# Frozen meeting times E_uniform[H_0] for the speed-2 walk. The dense solve and
# the eigenvalue sum are independent routes; both reproduce these to 1e-12.
THETA = {(2, 4): 103 / 12, (2, 8): 48.549719887955185, (3, 4): 1517 / 40, (3, 6): 139.55660173160175}

# P[tau_1 > t] for the adjacent pair on T^3_6 at t = 10, 100; scipy expm_multiply
PAIR_SURVIVAL_D3_N6 = {10.0: 0.7116789294992577, 100.0: 0.3744241520832147}


def two_state(r):
    return oracle.ChainSpec(["a", "b"], sp.csr_matrix([[0.0, r], [r, 0.0]]))


def test_hitting_time_trivial_cases():
    res = oracle.expected_hitting_time(two_state(2.5), ["b"])
    h = res.as_dict(two_state(2.5))
    assert h["b"] == 0.0
    assert h["a"] == pytest.approx(1 / 2.5, abs=1e-15)
    assert res.residual <= 1e-10


def test_hitting_time_birth_death_closed_form():
    # path 0 - 1 - ... - 5 with unit rates; the k -> k+1 passage takes k + 1 on
    # average, so E_j[H_5] = sum_{j<=k<5} (k + 1) = 15 - j(j+1)/2
    n = 6
    rates = sp.diags([np.ones(n - 1), np.ones(n - 1)], [1, -1], shape=(n, n)).tocsr()
    chain = oracle.ChainSpec(list(range(n)), rates)
    h = oracle.expected_hitting_time(chain, [5]).values
    assert h[0] == pytest.approx(15.0, abs=1e-10)
    assert np.allclose(h, [15 - k * (k + 1) / 2 for k in range(n)])


def test_hitting_time_errors():
    rates = sp.csr_matrix(np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float))
    chain = oracle.ChainSpec([0, 1, 2], rates)
    with pytest.raises(StructuralError):
        oracle.expected_hitting_time(chain, [2])
    with pytest.raises(ValueError):
        oracle.expected_hitting_time(chain, [])
    with pytest.raises(CapacityError):
        oracle.expected_hitting_time(two_state(1.0), ["b"], cap=1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 10.0))
def test_hitting_time_rate_rescaling(seed, c):
    chain = oracle.random_reversible_chain(np.random.default_rng(seed), 12)
    faster = oracle.ChainSpec(chain.states, chain.rates * c, chain.pi)
    h = oracle.expected_hitting_time(chain, [0]).values
    hc = oracle.expected_hitting_time(faster, [0]).values
    assert np.allclose(hc * c, h, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("d, N", sorted(THETA))
def test_theta_exact_and_spectral(d, N):
    g = TorusGeometry(d, N)
    theta, residual = oracle.theta_exact(g)
    assert theta == pytest.approx(THETA[d, N], rel=1e-12)
    assert oracle.theta_spectral(g) == pytest.approx(THETA[d, N], rel=1e-12)
    assert residual <= 1e-10


def test_speed_convention_factor_two():
    g = TorusGeometry(2, 6)
    slow = oracle.meeting_times(g, speed=1.0).values.mean()
    fast = oracle.meeting_times(g, speed=2.0).values.mean()
    assert slow == pytest.approx(2 * fast, rel=1e-12)


def test_random_reversible_chain_properties():
    chain = oracle.random_reversible_chain(np.random.default_rng(3), 40)
    assert chain.is_reversible()
    pi = chain.stationary()
    assert np.abs(pi @ chain.generator().toarray()).max() < 1e-12


def test_occupation_identity_trivial_cases():
    chain = oracle.random_reversible_chain(np.random.default_rng(0), 20)
    zero = oracle.occupation_identity_check(chain, [0, 1], np.zeros(20))
    assert (zero.lhs, zero.rhs, zero.abs_diff) == (0.0, 0.0, 0.0)
    one = oracle.occupation_identity_check(chain, [0, 1], np.ones(20))
    mean_hit = float(chain.stationary() @ oracle.expected_hitting_time(chain, [0, 1]).values)
    assert one.lhs == pytest.approx(mean_hit, rel=1e-12)
    assert one.rhs == pytest.approx(mean_hit, rel=1e-12)


def test_occupation_identity_on_random_chains():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(3, 51))
        chain = oracle.random_reversible_chain(rng, n)
        B = rng.choice(n, size=int(rng.integers(1, n)), replace=False)
        res = oracle.occupation_identity_check(chain, B.tolist(), rng.normal(size=n))
        assert res.abs_diff <= 1e-9


def test_occupation_identity_needs_reversibility():
    # a directed 3-cycle is irreducible but not reversible
    rates = sp.csr_matrix(np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float))
    chain = oracle.ChainSpec([0, 1, 2], rates)
    with pytest.raises(ValueError):
        oracle.occupation_identity_check(chain, [0], np.ones(3))


def test_adjacency_sum_two_particles():
    values = [oracle.lem9_sum(TorusGeometry(2, N), 2) for N in (4, 8, 16)]
    gaps = [abs(v - 1) for v in values]
    assert all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 0.25


def test_adjacency_sum_two_particles_by_enumeration():
    # brute force over all unordered pairs on T^2_4 reproduces the reduced sum
    g = TorusGeometry(2, 4)
    chain = oracle.coalescing_chain(g, 2)
    h = oracle.expected_hitting_time(chain, ["merged"]).values[:-1]
    R = np.array([oracle.rate_R_sites(g, A) for A in chain.states[:-1]])
    assert float(np.mean(h * R)) == pytest.approx(oracle.lem9_sum(g, 2), rel=1e-12)
    # scattered pairs carry R = 0 and add nothing
    assert np.all(h[R == 0] * R[R == 0] == 0)


def test_adjacency_sum_three_particles():
    value = oracle.lem9_sum(TorusGeometry(2, 4), 3)
    assert math.isfinite(value)
    assert value == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        oracle.lem9_sum(TorusGeometry(2, 4), 4)
    with pytest.raises(CapacityError):
        oracle.lem9_sum(TorusGeometry(2, 8), 3)


def test_coalescing_chain_size():
    chain = oracle.coalescing_chain(TorusGeometry(2, 4), 3)
    assert len(chain) == math.comb(16, 3) + 1


def test_pair_law_against_expm():
    g = TorusGeometry(3, 6)
    surv = oracle.pair_coalescence_law(g, [(0, 0, 0), (1, 0, 0)], [0.0, 10.0, 100.0])
    assert surv[0] == 1.0
    for k, t in enumerate((10.0, 100.0), start=1):
        assert surv[k] == pytest.approx(PAIR_SURVIVAL_D3_N6[t], abs=1e-8)
    Q = walk_generator(g, 2.0)[1:, 1:]
    direct = expm_multiply(Q * 37.0, np.ones(g.n_sites - 1))[g.index((0, 2, 1)) - 1]
    assert oracle.pair_coalescence_law(g, [(0, 0, 0), (0, 2, 1)], [37.0])[0] == pytest.approx(direct, abs=1e-8)


def test_pair_law_monotone_and_bounded():
    g = TorusGeometry(2, 6)
    surv = oracle.pair_coalescence_law(g, [(0, 0), (3, 3)], np.linspace(0, 200, 41))
    assert np.all((surv >= 0) & (surv <= 1))
    assert np.all(np.diff(surv) <= 1e-12)
    with pytest.raises(ValueError):
        oracle.pair_coalescence_law(g, [(0, 0), (0, 0)], [1.0])


def test_pair_law_mean_is_meeting_time():
    # integral of the survival curve equals the exact mean hitting time
    g = TorusGeometry(2, 4)
    t = np.linspace(0, 300, 30_001)
    surv = oracle.pair_coalescence_law(g, [(0, 0), (1, 1)], t)
    h = oracle.meeting_times(g).values[g.index((1, 1))]
    assert trapezoid(surv, t) == pytest.approx(h, rel=1e-6)


def test_scattered_pair_survival_at_theta_near_e_inverse():
    g = TorusGeometry(3, 8)
    theta = oracle.theta_exact(g)[0]
    surv = oracle.pair_coalescence_law(g, [(0, 0, 0), (4, 4, 4)], [theta])[0]
    assert abs(surv - math.exp(-1)) / math.exp(-1) <= 0.10
