import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfmde.dynamics import (
    FcnSpec,
    Trajectory,
    build_homogenized_langevin,
    build_multiscale_langevin,
    euler_maruyama,
    rk4_fcn,
)
from cfmde.estimator import (
    DistanceEvaluator,
    EstimateResult,
    Problem,
    WeightKernel,
    constraint_values,
    distance_closed_form,
    distance_fft,
    empirical_cf,
    estimate,
    minimize_matrix_constrained,
    minimize_scalar,
)
from cfmde.gibbs import char_fn, gibbs_density, quadratic, quadratic_form, sine

from conftest import bessel_series

THETA0, SIGMA_BAR = 1.24772, 0.62386
K1, K2 = 1 / bessel_series(2 / 3) ** 2, 1 / bessel_series(1 / 3) ** 2
M0 = np.array([[4.0, 2.0], [2.0, 3.0]])
THETA0_2D = np.diag([K1, K2]) @ M0
SIGMA_2D = 1.5 * np.diag([K1, K2])


def _const(c, n=11, dim=1):
    return Trajectory(0.1, np.tile(np.atleast_1d(np.asarray(c, dtype=float)), (n, 1)), dim)


def _ou_path(seed, T=200.0):
    return euler_maruyama(build_homogenized_langevin(THETA0, SIGMA_BAR, quadratic()), 0.0, T, 1e-3,
                          seed=seed, obs_dt=0.01)


def test_empirical_cf_at_zero():
    assert empirical_cf(_ou_path(0, 10.0), 0.0) == 1 + 0j


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_empirical_cf_constant_path(c, u):
    assert abs(empirical_cf(_const(c), u) - np.exp(1j * u * c)) < 1e-12


def test_empirical_cf_two_point_path():
    tr = Trajectory(0.1, np.array([1.0, -1.0] * 5).reshape(-1, 1))
    assert abs(empirical_cf(tr, math.pi / 2)) < 1e-12


def test_empirical_cf_2d_constant():
    c, u = np.array([0.3, -1.2]), np.array([2.0, 0.5])
    assert abs(empirical_cf(_const(c, dim=2), u) - np.exp(1j * u @ c)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-20, 20))
def test_empirical_cf_modulus(seed, u):
    tr = Trajectory(0.01, np.random.default_rng(seed).normal(size=(301, 1)) * 3)
    assert abs(empirical_cf(tr, u)) <= 1 + 1e-12


def test_closed_form_hand_value():
    ev = DistanceEvaluator(_const(0.0), WeightKernel(1.0), 0.624)
    assert distance_closed_form(ev, 1.248) == pytest.approx(-2 / math.sqrt(1.5) + 1 / math.sqrt(2), abs=1e-12)
    assert distance_closed_form(ev, 1.248) == pytest.approx(-0.92588, abs=1e-5)


@pytest.mark.parametrize("theta", [0.3, 1.248, 7.0])
def test_closed_form_small_beta(theta):
    ev = DistanceEvaluator(_ou_path(1, 20.0), WeightKernel(1e-6), 0.624)
    assert distance_closed_form(ev, theta) == pytest.approx(-1.0, abs=1e-6)


def test_closed_form_2d_matrix_identity():
    theta = np.array([[3.222, 1.611], [1.893, 2.839]])
    Sigma = np.diag([1.208, 1.419])
    assert np.allclose(np.linalg.solve(theta, Sigma), 1.5 * np.linalg.inv(M0), atol=1e-3)
    ev = DistanceEvaluator(_const([0.0, 0.0], dim=2), WeightKernel(1.0), SIGMA_2D)
    cov = np.linalg.solve(THETA0_2D, SIGMA_2D)
    expected = -2 / math.sqrt(np.linalg.det(np.eye(2) + cov)) + 1 / math.sqrt(np.linalg.det(np.eye(2) + 2 * cov))
    assert distance_closed_form(ev, THETA0_2D) == pytest.approx(expected, abs=1e-12)


def test_closed_form_rejects_indefinite_covariance():
    ev = DistanceEvaluator(_const([0.0, 0.0], dim=2), WeightKernel(1.0), SIGMA_2D)
    with pytest.raises(ValueError):
        distance_closed_form(ev, np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_fft_third_term():
    d = gibbs_density(0.8, 0.8, quadratic())
    ev = DistanceEvaluator(_const(1e6), WeightKernel(1.0), 0.8, mode="fft_convolution")
    assert distance_fft(ev, 0.8, d) == pytest.approx(1 / math.sqrt(3), abs=1e-5)


@pytest.mark.parametrize("theta", [0.5, 1.248, 2.0, 5.0])
def test_fft_matches_closed_form(theta):
    tr = euler_maruyama(build_multiscale_langevin(2.0, 1.0, 0.25, quadratic(), sine()), 10.0, 50.0,
                        seed=3, obs_dt=0.01)
    ev = DistanceEvaluator(tr, WeightKernel(1.0), SIGMA_BAR)
    ref = distance_closed_form(ev, theta)
    assert abs(distance_fft(ev, theta) - ref) < 1e-4 * (1 + abs(ref))


def test_minimize_scalar_bowl():
    res = minimize_scalar(lambda t: (t - 2) ** 2, 10.0, 0.0)
    assert res.converged
    assert res.theta_hat == pytest.approx(2.0, abs=1e-6)


def test_minimize_scalar_active_bound():
    res = minimize_scalar(lambda t: (t - 2) ** 2, 10.0, 3.0)
    assert res.theta_hat == pytest.approx(3.0 + 1e-8, abs=1e-9)


def test_minimize_scalar_reports_nonconvergence():
    res = minimize_scalar(lambda t: -t, 1.0, 0.0, max_iter=5)
    assert isinstance(res, EstimateResult)
    assert not res.converged


@settings(max_examples=15, deadline=None)
@given(st.floats(-1e3, 1e3))
def test_argmin_invariance(c):
    ev = DistanceEvaluator(_ou_path(4, 50.0), WeightKernel(1.0), SIGMA_BAR)
    a = minimize_scalar(ev, 10.0)
    b = minimize_scalar(lambda t: ev(t) + c, 10.0)
    assert b.theta_hat == pytest.approx(a.theta_hat, rel=1e-6)


def test_identifiability():
    # weighted L2 distance between characteristic functions, by quadrature over u
    u = np.linspace(-8, 8, 801)
    w = WeightKernel(1.0).weight(u) * (u[1] - u[0])
    ref = char_fn(gibbs_density(THETA0, SIGMA_BAR, quadratic()), u)
    gaps = []
    for theta in np.linspace(0.1, 10, 67):
        if abs(theta - THETA0) > 0.5:
            c = char_fn(gibbs_density(theta, SIGMA_BAR, quadratic()), u)
            gaps.append(math.sqrt(np.sum(np.abs(c - ref) ** 2 * w)))
    assert min(gaps) > 1e-3


def test_gradient_at_truth_shrinks_with_T():
    spec = build_homogenized_langevin(THETA0, SIGMA_BAR, quadratic())
    medians = []
    for T in (250.0, 1000.0, 4000.0):
        g = []
        for seed in range(20):
            tr = euler_maruyama(spec, 0.0, T, 1e-3, seed=seed, obs_dt=0.05)
            ev = DistanceEvaluator(tr, WeightKernel(1.0), SIGMA_BAR)
            g.append(abs(ev(THETA0 + 1e-5) - ev(THETA0 - 1e-5)) / 2e-5)
        medians.append(np.median(g))
    assert medians[0] > medians[1] > medians[2]


def test_constraint_values_at_default_init():
    init = np.array([[3.0, SIGMA_2D[0, 0] / 2], [SIGMA_2D[1, 1] / 2, 6.0]])
    c1, c2, c3 = constraint_values(init, SIGMA_2D)
    assert c1 == pytest.approx(3.0)
    assert c2 > 0
    assert c3 == pytest.approx(0.0, abs=1e-15)


def test_matrix_recovers_target():
    init = np.array([[3.0, SIGMA_2D[0, 0] / 2], [SIGMA_2D[1, 1] / 2, 6.0]])
    res = minimize_matrix_constrained(lambda A: float(np.sum((A - THETA0_2D) ** 2)), SIGMA_2D, init)
    assert res.converged
    assert np.max(np.abs(res.theta_hat - THETA0_2D)) < 1e-5
    rounded = np.array([[3.222, 1.611], [1.893, 2.839]])
    assert np.max(np.abs(THETA0_2D - rounded)) < 1e-3


def test_matrix_constant_objective():
    init = np.array([[3.0, SIGMA_2D[0, 0] / 2], [SIGMA_2D[1, 1] / 2, 6.0]])
    res = minimize_matrix_constrained(lambda A: 1.0, SIGMA_2D, init)
    assert res.converged
    assert np.allclose(res.theta_hat, init)


def test_matrix_rejects_infeasible_init():
    with pytest.raises(ValueError):
        minimize_matrix_constrained(lambda A: 0.0, SIGMA_2D, np.array([[-1.0, 0.0], [0.0, 1.0]]))


def test_estimate_rejects_inconsistent_problem():
    with pytest.raises(ValueError):
        Problem("langevin1d_drift")
    with pytest.raises(ValueError):
        Problem("fcn_diffusion")
    with pytest.raises(ValueError):
        estimate(Problem("langevin2d_drift", sigma_bar=SIGMA_2D), _const(0.0))


def test_estimate_specified_model_sanity():
    prob = Problem("langevin1d_drift", sigma_bar=SIGMA_BAR)
    spec = build_homogenized_langevin(THETA0, SIGMA_BAR, quadratic())
    est = [estimate(prob, euler_maruyama(spec, 10.0, 2000.0, 1e-3, seed=s, obs_dt=0.01)).theta_hat for s in range(50)]
    assert abs(np.mean(est) - THETA0) < 0.05 * THETA0


def test_estimate_result_serializes():
    res = estimate(Problem("langevin1d_drift", sigma_bar=SIGMA_BAR), _ou_path(7, 20.0))
    d = res.to_dict()
    assert d["seed"] == 7
    assert set(d) >= {"theta_hat", "objective", "iterations", "converged", "wall_time"}


def test_estimate_fcn_diffusion():
    tr = rk4_fcn(FcnSpec(-1.0, 0.0, 2 / 45, 10 ** -1.5), [1.0, 1.0, 1.0, 1.0], 500.0, obs_dt=0.01)
    res = estimate(Problem("fcn_diffusion", A=-1.0, B=0.0), tr)
    assert res.theta_hat == pytest.approx(0.118, abs=0.03)


@pytest.mark.slow
def test_estimate_2d_replication_mean():
    p = (sine(1.0, 2 * math.pi), sine(0.5, 2 * math.pi))
    spec = build_multiscale_langevin(1.0, 1.5, 0.1, quadratic_form(M0), p)
    prob = Problem("langevin2d_drift", sigma_bar=SIGMA_2D)
    est = [estimate(prob, euler_maruyama(spec, [10.0, 10.0], 1000.0, seed=s, obs_dt=0.01)).theta_hat
           for s in range(20)]
    mean = np.mean(est, axis=0)
    assert np.all(np.abs(mean - THETA0_2D) < 0.15 * np.abs(THETA0_2D))
