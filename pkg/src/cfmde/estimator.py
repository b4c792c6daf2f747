"""Characteristic-function minimum distance estimation.

The distance between the empirical characteristic function of a path and the
model characteristic function, weighted by a centred Gaussian ``N(0, beta^2 I)``,
reduces to kernel form with ``k(x) = exp(-beta^2 |x|^2 / 2)``::

    D(theta, X) = (1/T^2) int int k(X(t) - X(s)) dt ds
                  - (2/T) int (mu_theta * k)(X(t)) dt
                  + int (mu_theta * k)(x) mu_theta(x) dx

The first term does not depend on ``theta`` and is never evaluated; every
objective value returned here is ``D`` minus that constant.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .dynamics import Trajectory
from .gibbs import PotentialModel, fcn_potential, gibbs_density, quadratic
from .numerics import DEFAULT_N, Grid1D, fft_convolve, integrate, linear_interp, tail_half_width

MODES = ("gaussian_closed_form", "fft_convolution")
PROBLEMS = ("langevin1d_drift", "langevin2d_drift", "fcn_diffusion")


@dataclass(frozen=True)
class WeightKernel:
    """Gaussian weight ``N(0, beta^2 I)`` and its Fourier transform ``k``."""

    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = x * x if x.ndim <= 1 else np.sum(x * x, axis=-1)
        return np.exp(-0.5 * self.beta ** 2 * r2)

    def weight(self, u) -> np.ndarray:
        """One-dimensional weight density ``phi(u)``."""
        u = np.asarray(u, dtype=float)
        return np.exp(-0.5 * (u / self.beta) ** 2) / (math.sqrt(2 * math.pi) * self.beta)

    def half_width(self) -> float:
        return tail_half_width(lambda x: -0.5 * self.beta ** 2 * np.square(x))


@dataclass
class EstimateResult:
    theta_hat: Union[float, np.ndarray]
    objective: float
    iterations: int
    converged: bool
    seed: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        th = np.asarray(self.theta_hat)
        d["theta_hat"] = th.tolist() if th.ndim else float(th)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def empirical_cf(traj: Trajectory, u):
    """Time average of ``exp(i u^T X(t))`` along the path (trapezoid in time).

    ``u`` is a scalar (1D paths), a ``d``-vector, or an array of ``d``-vectors.
    """
    w = traj.weights()
    u = np.asarray(u, dtype=float)
    if traj.dim == 1:
        single = u.ndim == 0 or u.shape == (1,)
        uu = u.reshape(-1)
        phase = np.outer(uu, traj.states[:, 0])
    else:
        single = u.ndim == 1
        uu = np.atleast_2d(u)
        if uu.shape[-1] != traj.dim:
            raise ValueError(f"u must have {traj.dim} components")
        phase = uu @ traj.states.T
    # total mass through the same product as the cosine part, so u = 0 gives exactly 1
    total = (np.ones((1, w.size)) @ w)[0]
    out = (np.cos(phase) @ w + 1j * (np.sin(phase) @ w)) / total
    return complex(out[0]) if single else out


# --- distance evaluation ------------------------------------------------------------

@dataclass(frozen=True)
class DistanceEvaluator:
    """Precomputed path statistics for repeated evaluation of ``D``.

    ``sigma_bar`` is the known homogenized diffusion (a scalar in 1D, the 2x2
    matrix ``Sigma`` in 2D). ``potential`` fixes the density family used on the
    FFT path; the closed form requires a quadratic potential.
    """

    traj: Trajectory
    kernel: WeightKernel = WeightKernel()
    sigma_bar: Union[float, np.ndarray] = 1.0
    mode: str = "gaussian_closed_form"
    potential: PotentialModel = field(default_factory=quadratic)
    grid_n: int = DEFAULT_N

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown distance mode {self.mode!r}")
        if self.mode == "gaussian_closed_form" and not self.potential.is_gaussian and self.traj.dim == 1:
            raise ValueError("closed-form distance needs a Gaussian invariant density")
        if self.traj.dim == 2:
            if self.mode != "gaussian_closed_form":
                raise ValueError("2D distances use the closed form only")
            S = np.asarray(self.sigma_bar, dtype=float)
            if S.shape != (2, 2):
                raise ValueError("2D evaluator needs a 2x2 Sigma")
            object.__setattr__(self, "sigma_bar", S)
        w = self.traj.weights()
        object.__setattr__(self, "_w", w / w.sum())

    @property
    def weights(self) -> np.ndarray:
        return self._w

    def covariance(self, theta) -> Union[float, np.ndarray]:
        """Covariance ``Sigma(theta)`` of the Gaussian model density."""
        if self.traj.dim == 1:
            theta = float(theta)
            if not theta > 0:
                raise ValueError("theta must be positive")
            return float(self.sigma_bar) / (theta * self.potential.curvature)
        A = np.asarray(theta, dtype=float)
        return np.linalg.solve(A, self.sigma_bar)

    def __call__(self, theta) -> float:
        if self.mode == "gaussian_closed_form":
            return distance_closed_form(self, theta)
        return distance_fft(self, theta)


def gaussian_distance(traj_states: np.ndarray, weights: np.ndarray, beta: float, cov) -> float:
    """Closed form of the theta-dependent part of ``D`` for a centred Gaussian model."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = cov.shape[0]
    if d == 1:
        var = float(cov[0, 0])
        if not var > 0:
            raise ValueError("model variance must be positive")
        a = 1.0 + beta ** 2 * var
        x = traj_states[:, 0]
        cross = weights @ np.exp(-0.5 * beta ** 2 * x * x / a) / math.sqrt(a)
        return float(-2.0 * cross + 1.0 / math.sqrt(1.0 + 2.0 * beta ** 2 * var))
    asym = np.max(np.abs(cov - cov.T))
    if asym > 1e-8 * max(1.0, np.max(np.abs(cov))):
        raise ValueError("model covariance is not symmetric")
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise ValueError("model covariance is not positive definite")
    eye = np.eye(d)
    S = eye + beta ** 2 * cov
    S_inv = np.linalg.inv(S)
    quad = np.einsum("ti,ij,tj->t", traj_states, S_inv, traj_states)
    cross = weights @ np.exp(-0.5 * beta ** 2 * quad) / math.sqrt(np.linalg.det(S))
    return float(-2.0 * cross + 1.0 / math.sqrt(np.linalg.det(eye + 2.0 * beta ** 2 * cov)))


def distance_closed_form(ev: DistanceEvaluator, theta) -> float:
    """``D(theta) - const`` for Gaussian model densities.

    ``Sigma(theta) = sigma_bar / theta`` in 1D and ``theta^{-1} Sigma`` in 2D.
    """
    return gaussian_distance(ev.traj.states, ev.weights, ev.kernel.beta, ev.covariance(theta))


def model_density(ev: DistanceEvaluator, theta: float, sigma_bar: float | None = None):
    """Gibbs density on a grid wide enough to hold its convolution with ``k``."""
    sb = float(ev.sigma_bar) if sigma_bar is None else sigma_bar
    return gibbs_density(theta, sb, ev.potential, n=ev.grid_n, pad=ev.kernel.half_width())


def distance_fft(ev: DistanceEvaluator, theta: float, density=None) -> float:
    """``D(theta) - const`` by FFT convolution of ``mu_theta`` with ``k``.

    ``mu_theta * k`` is computed on the density grid and interpolated
    linearly at the path points (zero outside the grid).
    """
    if ev.traj.dim != 1:
        raise ValueError("distance_fft is one-dimensional")
    if density is None:
        density = model_density(ev, theta)
    grid = density.grid
    k = grid.with_values(ev.kernel(grid.x))
    conv = fft_convolve(grid, k)
    cross = ev.weights @ linear_interp(conv, ev.traj.states[:, 0])
    self_term = integrate(conv.with_values(conv.values * grid.values))
    return float(-2.0 * cross + self_term)


# --- optimizers -------------------------------------------------------------------------

def _safe_eval(objective: Callable, theta) -> float:
    # a trial point the model cannot represent (e.g. an unresolvable density) is just a bad step
    try:
        return float(objective(theta))
    except (ValueError, FloatingPointError, OverflowError, np.linalg.LinAlgError):
        return math.inf


def _fd_grad(objective: Callable, theta: float, lower: float, f0: float):
    h = 1e-6 * max(1.0, abs(theta))
    if theta - h > lower:
        return (objective(theta + h) - objective(theta - h)) / (2 * h)
    f1 = objective(theta + h)
    f2 = objective(theta + 2 * h)
    return (-3 * f0 + 4 * f1 - f2) / (2 * h)


def minimize_scalar(objective: Callable, init: float, lower: float = 0.0, max_iter: int = 500,
                    gtol: float = 1e-8, xtol: float = 1e-10) -> EstimateResult:
    """Projected one-dimensional quasi-Newton descent on ``theta >= lower``.

    Gradients are central differences with step ``1e-6 max(1, theta)``; the
    curvature estimate is the secant (scalar BFGS) update and steps are
    backtracked until the Armijo condition holds. Trial points are projected
    to ``theta >= lower + 1e-8``.

    Convergence: projected gradient below ``gtol`` or a relative step below
    ``xtol``. Running out of iterations returns ``converged=False``.
    """
    t0 = time.perf_counter()
    floor = lower + 1e-8

    def proj(t):
        return max(t, floor)

    theta = proj(float(init))
    f = objective(theta)
    if not math.isfinite(f):
        raise ValueError(f"objective is not finite at the initial point {theta}")
    g = _fd_grad(objective, theta, lower, f)
    curv = max(abs(g) / max(1.0, abs(theta)), 1e-12)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pg = 0.0 if (theta <= floor and g > 0) else g
        if abs(pg) < gtol:
            converged = True
            it -= 1
            break
        direction = -g / curv
        step = 1.0
        accepted = False
        for _ in range(60):
            trial = proj(theta + step * direction)
            if trial == theta:
                break
            ft = _safe_eval(objective, trial)
            if math.isfinite(ft) and ft <= f + 1e-4 * g * (trial - theta):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True  # no descent possible along the projected path
            break
        g_new = _fd_grad(objective, trial, lower, ft)
        s, y = trial - theta, g_new - g
        if s * y > 0:
            curv = y / s
        move = abs(s) / max(1.0, abs(trial))
        theta, f, g = trial, ft, g_new
        if move < xtol:
            converged = True
            break
    return EstimateResult(theta, float(f), it, converged, 0, time.perf_counter() - t0)


def _constraints(z, ratio):
    a11, a22, a12 = z
    a21 = a12 * ratio
    return a11, a11 * a22 - a21 * a12


def matrix_from_params(z, Sigma) -> np.ndarray:
    a11, a22, a12 = z
    return np.array([[a11, a12], [a12 * Sigma[1, 1] / Sigma[0, 0], a22]])


def constraint_values(A, Sigma):
    """``(c1, c2, c3)`` of a candidate drift matrix: positivity and symmetry of ``A^{-1} Sigma``."""
    A = np.asarray(A, dtype=float)
    return (A[0, 0], A[0, 0] * A[1, 1] - A[1, 0] * A[0, 1],
            A[0, 1] / Sigma[0, 0] - A[1, 0] / Sigma[1, 1])


def _fd_grad_hess(fun, z, h):
    n = z.size
    f0 = fun(z)
    g = np.zeros(n)
    H = np.zeros((n, n))
    e = np.eye(n) * h
    fp = np.array([fun(z + e[i]) for i in range(n)])
    fm = np.array([fun(z - e[i]) for i in range(n)])
    g = (fp - fm) / (2 * h)
    for i in range(n):
        H[i, i] = (fp[i] - 2 * f0 + fm[i]) / h ** 2
        for j in range(i + 1, n):
            fpp = fun(z + e[i] + e[j])
            fpm = fun(z + e[i] - e[j])
            fmp = fun(z - e[i] + e[j])
            fmm = fun(z - e[i] - e[j])
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * h * h)
    return f0, g, H


def minimize_matrix_constrained(objective: Callable, Sigma, init, barrier_weights=None,
                                max_newton: int = 100, gtol: float = 1e-8,
                                xtol: float = 1e-10, fd_step: float = 1e-5) -> EstimateResult:
    """Minimize ``objective(A)`` over 2x2 drift matrices with ``A^{-1} Sigma`` positive definite.

    The equality ``A12/Sigma11 = A21/Sigma22`` is eliminated exactly, leaving
    the free coordinates ``(A11, A22, A12)``. The inequalities ``c = A11 > 0``
    and ``c = det A > 0`` enter through the barrier ``-mu log(c / (1 + c))``,
    weighted by ``|objective(init)|`` and lowered through ``mu = 1e-1 ... 1e-6``.
    The plain ``-mu log c`` is unbounded below as ``A`` grows, and the distance
    objective flattens out there, so its early stages have no minimizer; the
    bounded form keeps the same behaviour at ``c -> 0``.

    Each stage runs damped Newton steps with a finite-difference Hessian
    (eigenvalues flipped and floored when it is not positive definite). A
    strictly feasible point where the objective's own gradient vanishes is
    returned immediately as a KKT point.
    """
    t0 = time.perf_counter()
    Sigma = np.asarray(Sigma, dtype=float)
    init = np.asarray(init, dtype=float)
    c1, c2, c3 = constraint_values(init, Sigma)
    if not (c1 > 0 and c2 > 0 and abs(c3) <= 1e-10 * max(1.0, abs(init[0, 1] / Sigma[0, 0]))):
        raise ValueError(f"infeasible initial matrix: c1={c1}, c2={c2}, c3={c3}")
    if barrier_weights is None:
        barrier_weights = [10.0 ** (-k) for k in range(1, 7)]
    ratio = Sigma[1, 1] / Sigma[0, 0]
    z = np.array([init[0, 0], init[1, 1], init[0, 1]])

    def f_plain(v):
        return objective(matrix_from_params(v, Sigma))

    def feasible(v):
        a, b = _constraints(v, ratio)
        return a > 0 and b > 0

    def step_size(v):
        return fd_step * max(1.0, float(np.max(np.abs(v))))

    scale = abs(f_plain(z))
    if not math.isfinite(scale):
        raise ValueError("objective is not finite at the initial matrix")
    scale = max(scale, 1e-12)

    def barrier(c):
        return math.log(c) - math.log1p(c)

    iterations = 0
    all_converged = True
    for mu_b in barrier_weights:
        def phi(v, mu_b=mu_b * scale):
            a, b = _constraints(v, ratio)
            if a <= 0 or b <= 0:
                return math.inf
            return _safe_eval(f_plain, v) - mu_b * (barrier(a) + barrier(b))

        # stationary point of the plain objective: nothing for the barrier to do
        h = step_size(z)
        if all(feasible(z + s) for s in np.vstack([np.eye(3), -np.eye(3)]) * h):
            g_plain = np.array([(f_plain(z + h * e) - f_plain(z - h * e)) / (2 * h) for e in np.eye(3)])
            if np.linalg.norm(g_plain) < gtol:
                return EstimateResult(matrix_from_params(z, Sigma), float(f_plain(z)), iterations, True, 0,
                                      time.perf_counter() - t0)

        stage_ok = False
        for _ in range(max_newton):
            iterations += 1
            h = min(step_size(z), 0.25 * min(_constraints(z, ratio)[0], abs(z[0]) + 1.0))
            f0, g, H = _fd_grad_hess(phi, z, h)
            if not np.all(np.isfinite(g)) or not np.all(np.isfinite(H)):
                h *= 1e-2
                f0, g, H = _fd_grad_hess(phi, z, h)
            if np.linalg.norm(g) < gtol:
                stage_ok = True
                break
            w, U = np.linalg.eigh(0.5 * (H + H.T))
            w = np.maximum(np.abs(w), 1e-8 * max(1.0, np.max(np.abs(w))))
            direction = -(U @ ((U.T @ g) / w))
            t = 1.0
            accepted = False
            for _ in range(60):
                trial = z + t * direction
                if feasible(trial):
                    ft = phi(trial)
                    if ft <= f0 + 1e-4 * t * (g @ direction):
                        accepted = True
                        break
                t *= 0.5
            if not accepted:
                stage_ok = True
                break
            move = np.linalg.norm(trial - z) / max(1.0, np.linalg.norm(z))
            z = trial
            if move < xtol:
                stage_ok = True
                break
        all_converged = all_converged and stage_ok
    return EstimateResult(matrix_from_params(z, Sigma), float(f_plain(z)), iterations, all_converged, 0,
                          time.perf_counter() - t0)


# --- problem dispatch -----------------------------------------------------------------------

@dataclass(frozen=True)
class Problem:
    """What to estimate from a path.

    * ``langevin1d_drift``: drift ``theta`` of ``-theta V'`` with known ``sigma_bar``.
    * ``langevin2d_drift``: drift matrix with known diagonal ``Sigma`` (``sigma_bar``).
    * ``fcn_diffusion``: diffusion ``sigma_bar`` of ``(A x - B x^3) dt + ...`` with known ``A, B``.
    """

    kind: str
    sigma_bar: Union[float, np.ndarray, None] = None
    potential: Optional[PotentialModel] = None
    beta: float = 1.0
    init: Union[float, np.ndarray, None] = None
    mode: str = "auto"
    A: Optional[float] = None
    B: Optional[float] = None
    multistart: bool = True

    def __post_init__(self):
        if self.kind not in PROBLEMS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.mode not in ("auto",) + MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.kind == "fcn_diffusion":
            if self.A is None or self.B is None:
                raise ValueError("fcn_diffusion needs the drift coefficients A and B")
        elif self.sigma_bar is None:
            raise ValueError(f"{self.kind} needs the known diffusion sigma_bar")
        if self.kind == "langevin2d_drift" and np.shape(self.sigma_bar) != (2, 2):
            raise ValueError("langevin2d_drift needs a 2x2 Sigma")


def _resolve_mode(mode: str, potential: PotentialModel) -> str:
    if mode == "auto":
        return "gaussian_closed_form" if potential.is_gaussian else "fft_convolution"
    if mode == "gaussian_closed_form" and not potential.is_gaussian:
        raise ValueError("closed-form mode needs a quadratic potential")
    return mode


def _scalar_with_fallback(objective, init, multistart: bool) -> EstimateResult:
    res = minimize_scalar(objective, init)
    if res.converged or not multistart:
        return res
    tries = [res] + [minimize_scalar(objective, s) for s in (init / 4.0, init * 4.0)]
    ok = [r for r in tries if r.converged] or tries
    best = min(ok, key=lambda r: r.objective)
    best.iterations = sum(r.iterations for r in tries)
    return best


def estimate(problem: Problem, traj: Trajectory) -> EstimateResult:
    """Minimum distance estimate for ``problem`` from one trajectory."""
    t0 = time.perf_counter()
    kernel = WeightKernel(problem.beta)
    if problem.kind == "langevin2d_drift":
        if traj.dim != 2:
            raise ValueError("langevin2d_drift needs a 2D trajectory")
        Sigma = np.asarray(problem.sigma_bar, dtype=float)
        ev = DistanceEvaluator(traj, kernel, Sigma)
        init = problem.init
        if init is None:
            init = np.array([[3.0, Sigma[0, 0] / 2], [Sigma[1, 1] / 2, 6.0]])
        res = minimize_matrix_constrained(lambda A: distance_closed_form(ev, A), Sigma, init)
    else:
        if traj.dim != 1:
            raise ValueError(f"{problem.kind} needs a 1D trajectory")
        if problem.kind == "langevin1d_drift":
            potential = problem.potential or quadratic()
            mode = _resolve_mode(problem.mode, potential)
            ev = DistanceEvaluator(traj, kernel, float(problem.sigma_bar), mode, potential)
            objective = ev
            init = 10.0 if problem.init is None else float(problem.init)
        else:
            potential = fcn_potential(problem.A, problem.B)
            mode = _resolve_mode(problem.mode, potential)
            ev = DistanceEvaluator(traj, kernel, 1.0, mode, potential)
            init = 0.8 if problem.init is None else float(problem.init)
            if mode == "gaussian_closed_form":
                def objective(s):
                    return gaussian_distance(traj.states, ev.weights, kernel.beta, s / potential.curvature)
            else:
                def objective(s):
                    return distance_fft(ev, 1.0, model_density(ev, 1.0, sigma_bar=s))
        res = _scalar_with_fallback(objective, init, problem.multistart and not potential.is_gaussian)
    res.seed = traj.seed
    res.wall_time = time.perf_counter() - t0
    return res
