from __future__ import annotations

import math

import numpy as np
import pytest

from moran_asg import ancestral as anc
from moran_asg import diffusion as dif
from moran_asg.ctmc import absorption_probs
from moran_asg.generators import DELTA
from moran_asg.params import DiffusionParams

DP = DiffusionParams(1.0, 0.3, {1: 1.0})


def test_Rcal_rates():
    tc = dif.build_Q_Rcal(DiffusionParams(1.0, 0.3, {1: 0.8}), 50)
    Q = tc.chain.Q
    assert Q[1, 2] == pytest.approx(0.8)
    assert Q[1, 0] == pytest.approx(1.0 * 0.7)
    assert Q[5, 4] == pytest.approx(20 + 5 * 0.7)
    assert Q[5, tc.chain.index(DELTA)] == pytest.approx(5 * 0.3)


def test_Rcal_without_mutation_has_no_kill():
    tc = dif.build_Q_Rcal(DiffusionParams(0.0, 0.3, {1: 1.0}), 40)
    d = tc.chain.index(DELTA)
    assert tc.chain.Q[:, d].sum() == 0


def test_Rcal_doubling_self_consistency():
    a = dif.absorption_at_zero(dif.build_Q_Rcal(DP, 200))[3]
    b = dif.absorption_at_zero(dif.build_Q_Rcal(DP, 400))[3]
    assert abs(a - b) <= 1e-8
    assert dif.build_Q_Rcal(DP, 200).leaked_mass_bound <= 1e-6


def test_n_max_guard():
    with pytest.raises(ValueError):
        dif.build_Q_Rcal(DiffusionParams(1.0, 0.3, {5: 1.0}), 6)


def test_Lcal_examples():
    tc = dif.build_Q_Lcal(DP, 200)
    Q = tc.chain.Q.toarray()
    assert Q[0, 1] == pytest.approx(1.0) and np.count_nonzero(Q[0]) == 2
    pi = dif.stationary(tc.chain).p
    assert pi[100:].sum() <= 1e-10
    assert tc.leaked_mass_bound <= 1e-10


def test_Lcal_equals_Rcal_without_mutation():
    dp = DiffusionParams(0.0, 0.3, {1: 1.0, 2: 0.5})
    R = dif.build_Q_Rcal(dp, 60).chain.Q.toarray()[1:61, 1:61]
    L = dif.build_Q_Lcal(dp, 60).chain.Q.toarray()
    assert np.abs(R - L).max() == 0.0


def test_absorb_policy_makes_top_absorbing():
    tc = dif.build_Q_Rcal(DP, 50, dif.ABSORB_REPORT)
    assert tc.chain.Q.getrow(50).nnz == 0


def test_pi_Y_moments_examples():
    assert dif.pi_Y_moments(DP, 0) == 1.0
    neutral = DiffusionParams(2.0, 0.3, {})
    a, b = 2.0 * 0.7, 2.0 * 0.3
    assert dif.pi_Y_moments(neutral, 1) == pytest.approx(0.7, abs=1e-12)
    assert dif.pi_Y_moments(neutral, 2) == pytest.approx(a * (a + 1) / ((a + b) * (a + b + 1)), abs=1e-12)
    with pytest.raises(ValueError):
        dif.pi_Y_moments(DiffusionParams(0.0, 0.3, {1: 1.0}), 1)


@pytest.mark.parametrize("sigma", [{1: 1.0}, {3: 2.0}, {1: 0.5, 3: 1.5}])
def test_pi_Y_moments_against_finite_N(sigma):
    dp = DiffusionParams(1.0, 0.3, sigma)
    for n in (1, 2, 5):
        assert abs(dif.pi_Y_moments(dp, n) - dif.finite_N_moment(dp, 2000, n)) <= 5e-3


def test_factorial_exponent_is_falsified():
    dp = DiffusionParams(1.0, 0.3, {3: 2.0})
    worst = max(abs(dif.pi_Y_moments(dp, n, dif.FACTORIAL) - dif.finite_N_moment(dp, 2000, n)) for n in (1, 2, 3))
    assert worst > 5e-3


def test_forms_coincide_up_to_order_two():
    dp = DiffusionParams(1.0, 0.3, {1: 0.7, 2: 0.4})
    assert dif.pi_Y_moments(dp, 2, dif.HARMONIC) == pytest.approx(dif.pi_Y_moments(dp, 2, dif.FACTORIAL), rel=1e-12)


def test_diffusion_duality():
    rep = dif.check_diffusion_duality(DP, 200)
    assert rep.max_abs_residual <= 2e-3
    assert rep.extra["leaked_mass_bound"] <= 1e-6
    assert rep.extra["rows"][0][1:] == [1.0, 1.0]


def test_h_inf_diffusion_boundaries_and_finite_N():
    y = [0.0, 0.2, 0.5, 0.8, 1.0]
    h = dif.h_inf_diffusion(DP, y)
    assert h[0] == 0.0 and h[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(h) > 0)
    N = 4000
    fin = anc.h_inf_via_recursion(DP.moran(N)).h
    assert np.abs(h - fin[[math.floor(v * N) for v in y]]).max() <= 5e-3


def test_h_r_diffusion_monotone():
    y = np.linspace(0, 1, 11)
    for r in (0.0, 0.5, 2.0):
        h = dif.h_r_diffusion(DP, y, r)
        assert np.all(np.diff(h) >= -1e-14)
    assert dif.h_r_diffusion(DP, y, 0.0) == pytest.approx(y)


def test_self_consistent_doubling():
    val, n_max, diff = dif.self_consistent(lambda n: dif.h_inf_diffusion(DP, [0.3, 0.7], n), 25, 1e-9)
    assert diff <= 1e-9 and n_max >= 25


def test_self_consistent_cap():
    with pytest.raises(ArithmeticError):
        dif.self_consistent(lambda n: np.array([1.0 / n]), 200, 0.0, cap=800)


def test_finite_time_moment_duality():
    # Rescaled Moran at N = 1000 stands in for the diffusion; its O(1/N) bias is about 3e-4 here.
    lhs = dif.moran_moments(DP, 1000, 0.5, 0.5, [1, 2, 3])
    rhs = dif.moment_dual_rhs(DP, 0.5, [1, 2, 3], 0.5)
    assert np.abs(lhs - rhs).max() <= 5e-3


def test_convergence_diagnostic():
    rows = dif.convergence_diagnostic(DP, [50, 100, 200, 400], 0.3)
    assert rows[-1].moment_distance == 0.0
    assert rows[-2].moment_distance <= rows[0].moment_distance
    same = dif.convergence_diagnostic(DP, [80, 80], 0.3)
    assert all(r.moment_distance == 0.0 for r in same)


def test_absorption_converges_without_mutation():
    from moran_asg import generators as gen

    dp = DiffusionParams(0.0, 0.3, {1: 1.0})
    fix = [absorption_probs(gen.build_Q_Y_ftw(dp.moran(N)), N)[N // 2] for N in (100, 200, 400)]
    # Scale function of y(1−y)f'' − σy(1−y)f' gives (e^{σy} − 1)/(e^σ − 1).
    exact = (math.exp(0.5) - 1) / (math.e - 1)
    errs = [abs(f - exact) for f in fix]
    assert errs[-1] < errs[0] and errs[-1] <= 5e-3
