from __future__ import annotations

import numpy as np
import pytest

from moran_asg import generators as gen
from moran_asg import haldane as hal
from moran_asg.ctmc import absorption_probs


def test_strong_selection_fixes():
    assert hal.fixation_prob_exact(100, 1e3, 1, 0.0) >= 0.999


def test_small_N_against_generator():
    N = 4
    p = hal.haldane_params(N, 1.0, 1, 0.0)
    h = absorption_probs(gen.build_Q_Y_ftw(p), 0)
    assert abs(hal.fixation_prob_exact(N, 1.0, 1, 0.0) - h[N - 1]) <= 1e-12


@pytest.mark.parametrize("m", [1, 2, 3])
def test_generator_oracle_various_orders(m):
    N = 30
    p = hal.haldane_params(N, 2.0, m, 0.5)
    h = absorption_probs(gen.build_Q_Y_ftw(p), 0)
    assert hal.fixation_prob_exact(N, 2.0, m, 0.5) == pytest.approx(h[N - 1], rel=1e-10)


def test_N_one_million_order_two():
    p = hal.fixation_prob_exact(10**6, 1.0, 2, 0.5)
    assert abs(p / 2e-3 - 1) <= 0.05


def test_scan_ratio_approaches_one():
    rows = hal.haldane_scan(1.0, 2, 0.5, [10**3, 10**4, 10**5])
    assert abs(rows[-1].ratio - 1) < abs(rows[0].ratio - 1)
    assert rows[0].haldane_prediction == pytest.approx(2 / 10**1.5)


def test_scan_alpha_09_converges_slower():
    rows = hal.haldane_scan(1.0, 1, 0.9, [10**3, 10**6])
    assert abs(rows[-1].ratio - 1) < abs(rows[0].ratio - 1)


def test_scan_requires_increasing():
    with pytest.raises(ValueError):
        hal.haldane_scan(1.0, 1, 0.5, [100, 10])


def test_genic_specialisation():
    # m = 1: q_k is constant, so the nested sum is geometric.
    N, s = 50, 0.3
    q = 1 / (1 + s / N**0.5)
    assert hal.fixation_prob_exact(N, s, 1, 0.5) == pytest.approx((1 - q) / (1 - q**N), rel=1e-12)


def test_log_domain_matches_direct():
    for N in (2, 10, 100, 1000):
        for m in (1, 3):
            a = hal.fixation_prob_exact(N, 0.8, m, 0.5)
            b = hal.fixation_prob_direct(N, 0.8, m, 0.5)
            assert a == pytest.approx(b, rel=1e-12)


def test_strictly_inside_and_monotone():
    sigmas = [0.1, 0.5, 1.0, 2.0, 5.0]
    for m in (1, 2, 3):
        vals = [hal.fixation_prob_exact(200, s, m, 0.5) for s in sigmas]
        assert all(0 < v < 1 for v in vals)
        assert np.all(np.diff(vals) > 0)
    for s in sigmas:
        vals = [hal.fixation_prob_exact(200, s, m, 0.5) for m in (1, 2, 3, 4)]
        assert np.all(np.diff(vals) > 0)


@pytest.mark.parametrize("N", [3, 20, 100])
def test_expected_R_inf_routes_agree(N):
    a = hal.expected_R_inf(N, 1.0, 2, 0.5)
    b = hal.expected_R_inf_direct(N, 1.0, 2, 0.5)
    assert abs(a - b) <= 1e-8


def test_expected_R_inf_asymptotic():
    N = 10**6
    assert abs(hal.expected_R_inf(N, 1.0, 2, 0.5) / 2000 - 1) <= 0.05


def test_expected_R_inf_tends_to_N_under_strong_selection():
    N = 50
    vals = [hal.expected_R_inf(N, s, 1, 0.0) for s in (1.0, 10.0, 1e3)]
    assert np.all(np.diff(vals) > 0) and vals[-1] == pytest.approx(N, rel=1e-3)
