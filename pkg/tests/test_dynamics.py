import math

import numpy as np
import pytest

from cfmde.dynamics import (
    BlowUpError,
    FcnSpec,
    SdeSpec,
    Trajectory,
    build_homogenized_langevin,
    build_multiscale_langevin,
    default_dt,
    euler_maruyama,
    rk4_fcn,
)
from cfmde.gibbs import quadratic, quadratic_form, sine, zero

THETA0, SIGMA_BAR = 1.24772, 0.62386


def test_constant_trajectory():
    spec = SdeSpec(lambda x: 0 * x, np.zeros((1, 1)))
    tr = euler_maruyama(spec, 10.0, 5.0, 0.01)
    assert np.all(tr.x == 10.0)


def test_deterministic_decay():
    spec = SdeSpec(lambda x: -x, np.zeros((1, 1)))
    tr = euler_maruyama(spec, 1.0, 1.0, 1e-4)
    assert tr.x[-1] == pytest.approx(math.exp(-1), abs=1e-3)
    assert tr.T == pytest.approx(1.0)


def test_compiled_and_python_paths_agree():
    fast = build_homogenized_langevin(THETA0, SIGMA_BAR, quadratic())
    slow = SdeSpec(fast.drift, fast.noise_scale)
    a = euler_maruyama(fast, 1.0, 2.0, 1e-3, seed=5)
    b = euler_maruyama(slow, 1.0, 2.0, 1e-3, seed=5)
    assert np.allclose(a.x, b.x, atol=1e-12)


def test_ou_mean_monte_carlo():
    spec = build_homogenized_langevin(1.248, 0.624, quadratic())
    ends = np.array([euler_maruyama(spec, 10.0, 10.0, 1e-3, seed=s, obs_dt=10.0).x[-1] for s in range(2000)])
    stderr = ends.std(ddof=1) / math.sqrt(ends.size)
    assert abs(ends.mean() - 10 * math.exp(-12.48)) < 3 * stderr


def test_ou_stationary_variance():
    spec = build_homogenized_langevin(1.248, 0.624, quadratic())
    tr = euler_maruyama(spec, 0.0, 1000.0, 1e-3, seed=1, obs_dt=0.01)
    assert np.var(tr.x) == pytest.approx(0.5, rel=0.05)


def test_ergodic_cosine_average():
    spec = build_homogenized_langevin(THETA0, SIGMA_BAR, quadratic())
    tr = euler_maruyama(spec, 0.0, 2000.0, 1e-3, seed=2, obs_dt=0.01)
    avg = float(np.sum(tr.weights() * np.cos(tr.x)))
    assert avg == pytest.approx(math.exp(-SIGMA_BAR / (2 * THETA0)), rel=0.02)


def test_determinism_and_seed_dependence():
    spec = build_multiscale_langevin(2.0, 1.0, 0.25, quadratic(), sine())
    a = euler_maruyama(spec, 1.0, 5.0, seed=11, obs_dt=0.01)
    b = euler_maruyama(spec, 1.0, 5.0, seed=11, obs_dt=0.01)
    c = euler_maruyama(spec, 1.0, 5.0, seed=12, obs_dt=0.01)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


def test_multiscale_drift_at_origin():
    spec = build_multiscale_langevin(2.0, 1.0, 0.1, quadratic(), sine())
    assert float(spec.drift(0.0)) == pytest.approx(-62.832, abs=1e-3)


def test_multiscale_without_perturbation_is_homogenized():
    a = build_multiscale_langevin(2.0, 1.0, 0.1, quadratic(), zero())
    b = build_homogenized_langevin(2.0, 1.0, quadratic())
    x = np.linspace(-3, 3, 13)
    assert np.allclose(a.drift(x), b.drift(x))
    assert np.allclose(a.noise_scale, b.noise_scale)


def test_multiscale_2d_drift():
    p = (sine(1.0, 2 * math.pi), sine(0.5, 2 * math.pi))
    spec = build_multiscale_langevin(1.0, 1.5, 0.1, quadratic_form([[4, 2], [2, 3]]), p)
    expected = -np.array([4.0, 2.0]) - 10 * np.array([math.cos(10.0), 0.5])
    assert np.allclose(spec.drift(np.array([1.0, 0.0])), expected)


def test_2d_compiled_path_matches_python():
    p = (sine(1.0, 2 * math.pi), sine(0.5, 2 * math.pi))
    fast = build_multiscale_langevin(1.0, 1.5, 0.1, quadratic_form([[4, 2], [2, 3]]), p)
    slow = SdeSpec(fast.drift, fast.noise_scale, 2, fast.eps)
    a = euler_maruyama(fast, [1.0, 1.0], 0.5, 2e-4, seed=3)
    b = euler_maruyama(slow, [1.0, 1.0], 0.5, 2e-4, seed=3)
    assert np.allclose(a.states, b.states, atol=1e-10)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        build_multiscale_langevin(1.0, 1.0, 0.1, quadratic_form([[4, 2], [2, 3]]), sine())
    with pytest.raises(ValueError):
        build_multiscale_langevin(1.0, 1.0, 0.1, quadratic(), (sine(), sine()))


def test_step_rule_enforced():
    spec = build_multiscale_langevin(2.0, 1.0, 0.1, quadratic(), sine())
    with pytest.raises(ValueError, match="eps"):
        euler_maruyama(spec, 0.0, 1.0, 2e-3)
    assert default_dt(spec) < 0.1 ** 3


def test_blow_up_reports_step():
    spec = SdeSpec(lambda x: x * x, np.zeros((1, 1)))
    with np.errstate(over="ignore"), pytest.raises(BlowUpError) as err:
        euler_maruyama(spec, 1.0, 10.0, 0.1)
    assert err.value.step > 0


def test_rk4_decoupled_slow_equation():
    tr = rk4_fcn(FcnSpec(-1.0, 0.0, 0.0, 0.1), [1.0, 1.0, 1.0, 1.0], 1.0)
    assert tr.x[-1] == pytest.approx(math.exp(-1), abs=1e-8)


def test_rk4_full_system_bounded():
    tr = rk4_fcn(FcnSpec(-1.0, 0.0, 2 / 45, 0.1), [1.0, 1.0, 1.0, 1.0], 100.0, obs_dt=0.01)
    assert np.max(np.abs(tr.x)) < 5
    ref = rk4_fcn(FcnSpec(-1.0, 0.0, 2 / 45, 0.1), [1.0, 1.0, 1.0, 1.0], 100.0, dt=1e-4, obs_dt=0.01)
    assert np.max(np.abs(ref.x)) < 5


def test_rk4_step_halving():
    # one fast time unit; larger steps leave the asymptotic regime of the Lorenz block
    spec = FcnSpec(-1.0, 0.0, 2 / 45, 0.1)
    ends = [rk4_fcn(spec, [1.0, 1.0, 1.0, 1.0], 0.01, dt=h).x[-1] for h in (2.5e-5, 1.25e-5, 6.25e-6)]
    ratio = abs(ends[0] - ends[1]) / abs(ends[1] - ends[2])
    assert ratio == pytest.approx(16, rel=0.3)


def test_rk4_step_bound():
    with pytest.raises(ValueError):
        rk4_fcn(FcnSpec(-1.0, 0.0, 2 / 45, 0.1), [1, 1, 1, 1], 1.0, dt=2e-3)


def test_trajectory_round_trips(tmp_path):
    spec = build_multiscale_langevin(2.0, 1.0, 0.25, quadratic(), sine())
    tr = euler_maruyama(spec, 1.0, 2.0, seed=4, obs_dt=0.01)
    tr.to_binary(tmp_path / "t.bin")
    tr.to_csv(tmp_path / "t.csv")
    for back in (Trajectory.from_binary(tmp_path / "t.bin"), Trajectory.from_csv(tmp_path / "t.csv")):
        assert np.array_equal(back.states, tr.states)
        assert back.dt == tr.dt
