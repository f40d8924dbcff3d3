import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coalescing_walks.engine import ParticleConfig, StopRule, TrajectoryRecord, run_replicas
from coalescing_walks.errors import InsufficientSamples
from coalescing_walks.lattice import TorusGeometry
from coalescing_walks.stats import (
    count_decay_check,
    empirical_moment,
    g_N,
    ks_exponential,
    ks_two_sample,
    moment_bound_check,
)


def test_ks_exponential_size_and_power():
    rng = np.random.default_rng(0)
    accept = reject = 0
    for _ in range(100):
        x = rng.exponential(1 / 3, 10_000)
        accept += ks_exponential(x, 3.0).p_value > 0.01
        reject += ks_exponential(x, 6.0).p_value < 0.01
    assert accept >= 98
    assert reject >= 99


def test_ks_exponential_degenerate_and_errors():
    assert ks_exponential(np.full(500, 1.0), 1.0).p_value < 1e-10
    with pytest.raises(InsufficientSamples):
        ks_exponential(np.ones(99), 1.0)
    with pytest.raises(ValueError):
        ks_exponential(-np.ones(200), 1.0)
    with pytest.raises(ValueError):
        ks_exponential(np.ones(200), 0.0)


@settings(max_examples=30)
@given(st.integers(0, 2**32), st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_ks_exponential_scale_consistent(seed, rate, c):
    x = np.random.default_rng(seed).exponential(1.0, 300)
    a = ks_exponential(x * c, rate / c)
    b = ks_exponential(x, rate)
    assert a.statistic == pytest.approx(b.statistic, rel=1e-12, abs=1e-15)
    assert 0 <= a.p_value <= 1 and 0 <= a.statistic <= 1


def test_ks_two_sample():
    rng = np.random.default_rng(1)
    a = rng.exponential(1.0, 1000)
    same = ks_two_sample(a, a)
    assert same.statistic == 0.0 and same.p_value == 1.0
    accept = reject = 0
    for _ in range(100):
        x, y, z = rng.exponential(1.0, 10_000), rng.exponential(1.0, 10_000), rng.exponential(0.5, 10_000)
        accept += ks_two_sample(x, y).p_value > 0.01
        reject += ks_two_sample(x, z).p_value < 0.01
    assert accept >= 98
    assert reject >= 99
    with pytest.raises(InsufficientSamples):
        ks_two_sample(a[:50], a)


def test_report_determinism_and_json():
    x = np.random.default_rng(5).exponential(1.0, 400)
    a, b = ks_exponential(x, 1.0), ks_exponential(x, 1.0)
    assert a == b
    raw = json.loads(a.to_json())
    assert raw["passed"] == (raw["p_value"] > raw["alpha"])


def test_moment_check_on_exponential_reference():
    rng = np.random.default_rng(2)
    lam = 3.0
    x = rng.exponential(1 / lam, 50_000)
    m2, se = empirical_moment(x, 2)
    assert abs(m2 - 2 / lam**2) <= 3 * se
    check = moment_bound_check({8: x[:25_000], 16: x[25_000:]}, 2)
    assert check.stable
    assert check.spread == pytest.approx(max(check.moments.values()) / min(check.moments.values()))
    with pytest.raises(ValueError):
        moment_bound_check({8: x}, 4)


def test_moment_check_flags_growth():
    x = np.ones(100)
    assert not moment_bound_check({8: x, 16: 3 * x}, 1).stable


def test_g_N_shapes():
    assert g_N(TorusGeometry(3, 10), np.array([10.0]))[0] == pytest.approx(100.0)
    assert g_N(TorusGeometry(2, 10), np.array([9.0]))[0] == pytest.approx(100 * math.log(10) / 9)


def test_count_decay_table():
    g = TorusGeometry(3, 8)
    recs = run_replicas(ParticleConfig.full(g), StopRule.full_coalescence(), 3, 30)
    t = np.array([0.0, 64.0, 128.0, 256.0])
    table = count_decay_check(recs, g, t, (64.0, 256.0))
    assert table.mean[0] == g.n_sites
    assert table.scaled[1] == pytest.approx(table.mean[1] * 64.0 / g.n_sites)
    assert table.fitted_constant == pytest.approx(np.nanmax(table.scaled[1:]))
    assert len(table.rows()) == 4
    with pytest.raises(ValueError):
        count_decay_check(recs, g, t, (1e6, 2e6)).spread


def test_count_decay_requires_full_start():
    g = TorusGeometry(2, 4)
    rec = TrajectoryRecord({2: 0.0, 1: 1.0}, 1.0, 5, 0, 4, 2, 2, 1)
    with pytest.raises(ValueError):
        count_decay_check([rec], g, [0.0, 1.0], (0.5, 1.0))
    with pytest.raises(ValueError):
        count_decay_check([], g, [0.0], (0.0, 1.0))
