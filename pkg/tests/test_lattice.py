import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from coalescing_walks.errors import CapacityError
from coalescing_walks.lattice import (
    TorusGeometry,
    jump_kernel,
    mixing_time,
    spectral_gap,
    torus_distance,
    transition_row,
    tv_distance_from_uniform,
    walk_generator,
    walk_transition_probability,
)

# P[x(1) = e_1 | x(0) = 0] on T^2_3 from scipy's dense expm of the 9-state generator
P_N3_D2_E1_T1 = 0.11401180360490605


@st.composite
def geometry_and_points(draw, max_d=3, max_N=7, n_points=2):
    d = draw(st.integers(2, max_d))
    N = draw(st.integers(2, max_N))
    g = TorusGeometry(d, N)
    pts = [tuple(draw(st.integers(0, N - 1)) for _ in range(d)) for _ in range(n_points)]
    return g, pts


def test_geometry_validation():
    with pytest.raises(ValueError):
        TorusGeometry(1, 5)
    with pytest.raises(ValueError):
        TorusGeometry(2, 1)
    g = TorusGeometry(3, 5)
    assert g.n_sites == 125


def test_index_round_trip_and_row_major():
    g = TorusGeometry(3, 4)
    assert g.index((0, 0, 1)) == 1
    assert g.index((1, 0, 0)) == 16
    for i in range(g.n_sites):
        assert g.index(g.coords(i)) == i
    assert np.array_equal(g.all_coords() @ g.strides, np.arange(g.n_sites))


def test_points_reduce_modulo_N():
    g = TorusGeometry(2, 5)
    assert g.point((-1, 7)) == (4, 2)


@pytest.mark.parametrize(
    "d, delta, expected",
    [(2, (1, 0), 0.25), (3, (0, -1, 0), 1 / 6), (2, (0, 0), 0.0), (4, (0, 0, 0, 0), 0.0), (2, (1, 1), 0.0)],
)
def test_jump_kernel_examples(d, delta, expected):
    assert jump_kernel(TorusGeometry(d, 6), delta) == expected


@pytest.mark.parametrize("d, N", [(2, 2), (2, 3), (2, 5), (3, 2), (3, 4), (4, 3)])
def test_jump_kernel_normalised_exactly(d, N):
    g = TorusGeometry(d, N)
    total = sum(jump_kernel(g, g.coords(i), exact=True) for i in range(g.n_sites))
    assert total == Fraction(1)


@given(geometry_and_points(n_points=1))
def test_jump_kernel_symmetric(data):
    g, (delta,) = data
    assert jump_kernel(g, delta, exact=True) == jump_kernel(g, tuple(-c for c in delta), exact=True)


def test_transition_probability_matches_matrix_exponential():
    g = TorusGeometry(2, 3)
    assert walk_transition_probability(g, (0, 0), (1, 0), 1.0) == pytest.approx(P_N3_D2_E1_T1, abs=1e-10)
    P = sla.expm(walk_generator(g, 1.0).toarray() * 2.5)
    for x, y in itertools.product(range(g.n_sites), repeat=2):
        p = walk_transition_probability(g, g.coords(x), g.coords(y), 2.5)
        assert p == pytest.approx(P[x, y], abs=1e-10)


@pytest.mark.parametrize("speed", [0.5, 2.0])
def test_transition_probability_with_speed_matches_expm(speed):
    g = TorusGeometry(3, 3)
    P = sla.expm(walk_generator(g, speed).toarray() * 0.7)
    row = transition_row(g, (1, 2, 0), 0.7, speed)
    assert np.allclose(row, P[g.index((1, 2, 0))], atol=1e-10)


def test_transition_probability_limits():
    g = TorusGeometry(2, 4)
    assert walk_transition_probability(g, (1, 2), (1, 2), 0.0) == 1.0
    assert walk_transition_probability(g, (1, 2), (2, 2), 0.0) == 0.0
    assert walk_transition_probability(g, (0, 0), (3, 1), 1e6) == pytest.approx(1 / 16, abs=1e-9)


@pytest.mark.parametrize("t", [-1.0, math.inf, math.nan])
def test_transition_probability_rejects_bad_time(t):
    with pytest.raises(ValueError):
        walk_transition_probability(TorusGeometry(2, 4), (0, 0), (0, 0), t)


def test_chapman_kolmogorov():
    g = TorusGeometry(2, 3)
    s, t = 0.4, 1.3
    for x in range(g.n_sites):
        for y in range(g.n_sites):
            conv = sum(
                walk_transition_probability(g, g.coords(x), g.coords(z), s)
                * walk_transition_probability(g, g.coords(z), g.coords(y), t)
                for z in range(g.n_sites)
            )
            assert walk_transition_probability(g, g.coords(x), g.coords(y), s + t) == pytest.approx(conv, abs=1e-9)


@settings(max_examples=30)
@given(geometry_and_points(max_d=3, max_N=6), st.floats(0.0, 20.0))
def test_transition_probability_symmetric(data, t):
    g, (x, y) = data
    assert walk_transition_probability(g, x, y, t) == pytest.approx(walk_transition_probability(g, y, x, t), abs=1e-12)


def test_row_sums_to_one():
    g = TorusGeometry(3, 5)
    assert transition_row(g, (1, 1, 4), 3.3).sum() == pytest.approx(1.0, abs=1e-12)


def test_tv_distance_examples():
    g = TorusGeometry(2, 4)
    assert tv_distance_from_uniform(g, (0, 0), 0.0) == pytest.approx(1 - 1 / 16, abs=1e-15)
    assert tv_distance_from_uniform(g, (0, 0), 1e3) < 1e-6
    values = [tv_distance_from_uniform(g, (2, 1), t) for t in (0, 1, 2, 4, 8)]
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))


def test_tv_distance_cap():
    with pytest.raises(CapacityError):
        tv_distance_from_uniform(TorusGeometry(3, 101), (0, 0, 0), 1.0)


def test_mixing_time_scales_like_N_squared():
    # t_mix / N^2 settles to a constant; the spectral gap is ~ 2 pi^2 / (d N^2)
    r = [mixing_time(TorusGeometry(2, N)) / N**2 for N in (8, 16, 32)]
    assert max(r) / min(r) < 1.2
    g = TorusGeometry(2, 32)
    assert spectral_gap(g) == pytest.approx(2 * math.pi**2 / (2 * 32**2), rel=0.01)


def test_torus_distance_examples():
    g = TorusGeometry(2, 8)
    assert torus_distance(g, (3, 5), (3, 5)) == 0.0
    assert torus_distance(g, (0, 0), (7, 0)) == 1.0
    assert torus_distance(g, (0, 0), (4, 4)) == pytest.approx(math.sqrt(32))


@given(geometry_and_points(n_points=3))
def test_torus_distance_is_a_metric(data):
    g, (x, y, z) = data
    dxy = torus_distance(g, x, y)
    assert dxy == torus_distance(g, y, x)
    assert (dxy == 0) == (g.point(x) == g.point(y))
    assert dxy <= torus_distance(g, x, z) + torus_distance(g, z, y) + 1e-12


def test_generator_rows_sum_to_zero():
    Q = walk_generator(TorusGeometry(3, 4), 2.0)
    assert np.allclose(np.asarray(Q.sum(axis=1)).ravel(), 0.0)
    assert Q.diagonal().min() == -2.0
