"""Potentials, periodic perturbations and the Gibbs densities they induce.

The homogenized Langevin model has the invariant density
``mu(theta, x) = exp(-theta V(x) / sigma_bar) / Z(theta)``; its multiscale
counterpart carries the extra factor ``exp(-p(x/eps) / sigma)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .numerics import DEFAULT_N, TAIL_RATIO, Grid1D, integrate, tail_half_width, trapezoid_weights

KINDS = ("quadratic", "quartic", "quadratic_form", "custom")


@dataclass(frozen=True)
class PotentialModel:
    """Confining potential ``V`` with ``V(0) = 0`` and its gradient.

    ``dv_coeffs`` (1D polynomial potentials only) lists the coefficients of
    ``V'`` in increasing powers and enables the compiled simulation kernels.
    ``matrix`` is set for the 2D quadratic form ``V(x) = x^T M x / 2``.
    """

    V: Callable
    dV: Callable
    kind: str = "custom"
    dim: int = 1
    dv_coeffs: Optional[tuple] = None
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    curvature: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        origin = 0.0 if self.dim == 1 else np.zeros(self.dim)
        v0 = float(self.V(origin))
        if abs(v0) > 1e-12:
            raise ValueError(f"potential must satisfy V(0) = 0, got {v0}")

    @property
    def is_gaussian(self) -> bool:
        return self.kind in ("quadratic", "quadratic_form")


def quadratic(curvature: float = 1.0) -> PotentialModel:
    """``V(x) = c x^2 / 2``; ``c = 1`` is the QdP1 potential."""
    c = float(curvature)
    if c <= 0:
        raise ValueError("curvature must be positive")
    return PotentialModel(lambda x: 0.5 * c * np.square(x), lambda x: c * np.asarray(x),
                          kind="quadratic", dv_coeffs=(0.0, c), curvature=c)


def quartic() -> PotentialModel:
    """Double-well ``V(x) = x^4/4 - x^2/2`` (QrP)."""
    return PotentialModel(lambda x: 0.25 * np.asarray(x) ** 4 - 0.5 * np.square(x),
                          lambda x: np.asarray(x) ** 3 - np.asarray(x),
                          kind="quartic", dv_coeffs=(0.0, -1.0, 0.0, 1.0))


def polynomial(v_coeffs) -> PotentialModel:
    """Polynomial potential from coefficients of ``V`` in increasing powers.

    The constant coefficient must be zero.
    """
    v = np.polynomial.Polynomial(np.asarray(v_coeffs, dtype=float))
    dv = v.deriv()
    coeffs = tuple(float(c) for c in dv.coef)
    return PotentialModel(lambda x: v(np.asarray(x)), lambda x: dv(np.asarray(x)),
                          kind="custom", dv_coeffs=coeffs)


def fcn_potential(A: float, B: float) -> PotentialModel:
    """Potential ``V(x) = B x^4/4 - A x^2/2`` of the drift ``A x - B x^3``."""
    if B == 0:
        if A >= 0:
            raise ValueError("drift A x - B x^3 is not confining for B = 0, A >= 0")
        return quadratic(-A)
    if B < 0:
        raise ValueError("drift A x - B x^3 is not confining for B < 0")
    if A == 1 and B == 1:
        return quartic()
    return polynomial([0.0, 0.0, -0.5 * A, 0.0, 0.25 * B])


def quadratic_form(M) -> PotentialModel:
    """2D quadratic form ``V(x) = x^T M x / 2`` (QrP2), ``M`` symmetric positive definite."""
    M = np.array(M, dtype=float)
    if M.shape != (2, 2):
        raise ValueError("quadratic_form needs a 2x2 matrix")
    if not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() <= 0:
        raise ValueError("M must be symmetric positive definite")
    M.setflags(write=False)

    def V(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, M, x)

    def dV(x):
        return np.asarray(x, dtype=float) @ M.T

    return PotentialModel(V, dV, kind="quadratic_form", dim=2, matrix=M)


def dissipativity(potential: PotentialModel, radius: float = 20.0, n: int = 4001):
    """Fit ``a, b > 0`` with ``-V'(x) x <= a - b x^2`` on ``[-radius, radius]``.

    ``b`` is half the smallest ratio ``V'(x) x / x^2`` on the outer half of the
    test interval. Raises ``ValueError`` if no positive ``b`` exists there.
    """
    if potential.dim != 1:
        raise ValueError("dissipativity diagnostic is implemented for 1D potentials")
    x = np.linspace(-radius, radius, n)
    push = np.asarray(potential.dV(x)) * x
    outer = np.abs(x) >= 0.5 * radius
    b = 0.5 * float(np.min(push[outer] / x[outer] ** 2))
    if b <= 0:
        raise ValueError("potential is not dissipative on the test interval")
    a = float(np.max(-push + b * x * x))
    return max(a, 0.0) + 1e-12, b


@dataclass(frozen=True)
class PeriodicPerturbation:
    """``L``-periodic function ``p`` with derivative ``dp``.

    When ``amplitude`` is set, ``p(y) = amplitude * sin(2 pi y / L)``.
    """

    p: Callable
    dp: Callable
    period: float = 1.0
    amplitude: Optional[float] = None

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be positive")
        y = np.linspace(-3.0, 3.0, 97) * self.period + 0.1234
        shift = np.asarray(self.p(y + self.period)) - np.asarray(self.p(y))
        if np.max(np.abs(shift)) > 1e-12 * max(1.0, np.max(np.abs(self.p(y)))):
            raise ValueError("p is not periodic with the given period")


def sine(amplitude: float = 1.0, period: float = 1.0) -> PeriodicPerturbation:
    w = 2.0 * math.pi / period
    a = float(amplitude)
    return PeriodicPerturbation(lambda y: a * np.sin(w * np.asarray(y)),
                                lambda y: a * w * np.cos(w * np.asarray(y)),
                                period=period, amplitude=a)


def constant(c: float = 0.0, period: float = 1.0) -> PeriodicPerturbation:
    return PeriodicPerturbation(lambda y: np.full(np.shape(y), float(c)),
                                lambda y: np.zeros(np.shape(y)),
                                period=period, amplitude=0.0 if c == 0 else None)


def zero(period: float = 1.0) -> PeriodicPerturbation:
    return constant(0.0, period)


def homogenization_factor(p: PeriodicPerturbation, sigma: float, n: int = 4096) -> float:
    """Cell-problem constant ``K = 1 / (Z+ Z-)``.

    ``Z+-`` are period averages of ``exp(+-p/sigma)``, taken with the periodic
    trapezoid rule (equal weights on ``n`` nodes of one period). ``p`` is shifted
    by its value at 0 first, which leaves ``K`` unchanged.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    y = np.arange(n) * (p.period / n)
    vals = np.asarray(p.p(y), dtype=float)
    vals = vals - vals[0]
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("perturbation produced non-finite samples")
    z_plus = np.mean(np.exp(vals / sigma))
    z_minus = np.mean(np.exp(-vals / sigma))
    return float(1.0 / (z_plus * z_minus))


@dataclass(frozen=True)
class GibbsDensity:
    """Normalized ``mu(theta, .)`` sampled on a grid, with ``Z(theta)``."""

    theta: float
    sigma_bar: float
    potential: PotentialModel
    Z: float
    grid: Grid1D = field(repr=False)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def values(self) -> np.ndarray:
        return self.grid.values

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(-self.theta * np.asarray(self.potential.V(x)) / self.sigma_bar) / self.Z


def _check_tails(values: np.ndarray, what: str) -> None:
    top = values.max()
    edge = max(values[0], values[-1])
    if edge > 1e-10 * top:
        raise ValueError(f"{what}: truncation window misses mass (edge/max = {edge / top:.3g})")


def gibbs_density(theta: float, sigma_bar: float, potential: PotentialModel, n: int = DEFAULT_N,
                  pad: float = 0.0, half_width: float | None = None) -> GibbsDensity:
    """Build ``mu(theta, .)`` on a symmetric grid through the origin.

    The window is the tail-truncation half-width of ``exp(-theta V/sigma_bar)``
    plus ``pad`` unless ``half_width`` is given explicitly.
    """
    if theta <= 0 or sigma_bar <= 0:
        raise ValueError("theta and sigma_bar must be positive")
    if potential.dim != 1:
        raise ValueError("gibbs_density is one-dimensional")
    scale = theta / sigma_bar

    def log_w(x):
        return -scale * np.asarray(potential.V(x))

    if half_width is None:
        half_width = tail_half_width(log_w) + pad
    grid = Grid1D.symmetric(half_width, n)
    lw = log_w(grid.x)
    top = float(np.max(lw))  # V < 0 somewhere (double well) would overflow exp
    w = np.exp(lw - top)
    _check_tails(w, "normalization")
    mass = float(integrate(grid.with_values(w)))
    with np.errstate(over="ignore"):
        Z = float(mass * np.exp(top))
    return GibbsDensity(theta, sigma_bar, potential, Z, grid.with_values(w / mass))


def normalization(theta: float, sigma_bar: float, potential: PotentialModel, n: int = DEFAULT_N) -> float:
    """``Z(theta) = int exp(-(theta/sigma_bar) V(x)) dx`` over the truncated window."""
    return gibbs_density(theta, sigma_bar, potential, n=n).Z


def multiscale_density(eps: float, alpha: float, sigma: float, potential: PotentialModel,
                       p: PeriodicPerturbation, n: int | None = None) -> Grid1D:
    """Normalized ``mu_eps`` proportional to ``exp(-(alpha/sigma) V(x) - p(x/eps)/sigma)``.

    The grid spacing must resolve the oscillation: ``dx <= eps * L / 64``.
    """
    if eps <= 0 or alpha <= 0 or sigma <= 0:
        raise ValueError("eps, alpha and sigma must be positive")
    y = np.linspace(0.0, p.period, 513)
    p_range = float(np.ptp(np.asarray(p.p(y))) / sigma)

    def log_w(x):
        return -(alpha / sigma) * np.asarray(potential.V(x))

    half = tail_half_width(log_w, ratio=TAIL_RATIO * math.exp(-p_range))
    dx_max = eps * p.period / 64.0
    needed = int(math.ceil(2.0 * half / dx_max)) + 2
    if n is None:
        n = max(DEFAULT_N, needed)
    grid = Grid1D.symmetric(half, n)
    if grid.dx > dx_max * (1 + 1e-12):
        raise ValueError(f"grid too coarse for eps={eps}: dx={grid.dx:.3g} > eps*L/64={dx_max:.3g}")
    x = grid.x
    w = np.exp(log_w(x) - np.asarray(p.p(x / eps)) / sigma)
    _check_tails(w, "multiscale density")
    return grid.with_values(w / integrate(grid.with_values(w)))


def _fourier_moments(x: np.ndarray, weights: np.ndarray, u: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty(u.size, dtype=complex)
    for s in range(0, u.size, chunk):
        uu = u[s:s + chunk, None]
        out[s:s + chunk] = np.exp(1j * uu * x[None, :]) @ weights
    return out


def grid_char_fn(grid: Grid1D, u):
    """Characteristic function of a density given on a grid (trapezoid rule)."""
    scalar = np.ndim(u) == 0
    u_arr = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
    w = trapezoid_weights(grid.n, grid.dx) * grid.values
    out = _fourier_moments(grid.x, w, u_arr) / w.sum()
    out[u_arr == 0.0] = 1.0  # normalization, not subject to summation order
    return complex(out[0]) if scalar else out.reshape(np.shape(u))


def char_fn(density: GibbsDensity, u):
    """``C_theta(u) = int exp(iux) mu(theta, x) dx``. Vectorised in ``u``."""
    return grid_char_fn(density.grid, u)


def char_fn_grad(density: GibbsDensity, u):
    """``d/dtheta C_theta(u)``.

    Uses ``d mu/d theta = -mu (V/sigma_bar + Z'/Z)`` with
    ``Z'/Z = -E[V]/sigma_bar``, so the result is
    ``-(E[V e^{iuX}] - E[V] C_theta(u)) / sigma_bar``.
    """
    scalar = np.ndim(u) == 0
    u_arr = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
    g = density.grid
    w = trapezoid_weights(g.n, g.dx) * g.values
    mass = w.sum()
    v = np.asarray(density.potential.V(g.x))
    mean_v = (w @ v) / mass
    cf = _fourier_moments(g.x, w, u_arr) / mass
    v_cf = _fourier_moments(g.x, w * v, u_arr) / mass
    out = -(v_cf - mean_v * cf) / density.sigma_bar
    return complex(out[0]) if scalar else out.reshape(np.shape(u))
