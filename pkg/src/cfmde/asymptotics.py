"""Asymptotic variance of the estimator and convergence-rate checks.

For the homogenized Langevin model the centred, scaled estimate
``sqrt(T) (theta_hat - theta0)`` is asymptotically ``N(0, tau^2 / J^2)``, with

* ``J = int |d_theta C(u)|^2 phi(u) du``
* ``h(x) = Re int (exp(iux) - C(u)) conj(d_theta C(u)) phi(u) du``
* ``Phi`` solving ``theta0 V' Phi' - sigma_bar Phi'' = h``
* ``tau^2 = 2 sigma_bar int Phi'^2 mu``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .gibbs import (
    GibbsDensity,
    PeriodicPerturbation,
    PotentialModel,
    char_fn,
    char_fn_grad,
    gibbs_density,
    grid_char_fn,
    homogenization_factor,
    multiscale_density,
    quadratic,
    sine,
)
from .numerics import Grid1D, cumulative_trapezoid, integrate, tail_half_width

#: Node count of the default grid for the Poisson solve: 8192 intervals, odd so
#: the grid is mirror-symmetric about its node at 0.
PHI_NODES = 8193
#: Where the inner integral is below this fraction of its peak, Phi' is set to 0 (roundoff there).
PHI_CAP = 1e-14
CENTERING_TOL = 1e-6


@dataclass(frozen=True)
class AsymptoticStats:
    J: float
    tau_sq: float
    ratio: float
    sigma1_sq: float
    sigma2_sq: float


def sigma_scales(theta0: float, sigma_bar: float, beta: float):
    """``(sigma1^2, sigma2^2)`` of the Gaussian model."""
    b2 = beta * beta
    return b2 * theta0 / (theta0 + sigma_bar * b2), b2 * theta0 / (theta0 + 2 * sigma_bar * b2)


def _check_positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ValueError(f"{k} must be positive, got {v}")


def j_scalar(theta0: float, sigma_bar: float, beta: float) -> float:
    """Closed form of ``J`` for the quadratic potential."""
    _check_positive(theta0=theta0, sigma_bar=sigma_bar, beta=beta)
    _, s2 = sigma_scales(theta0, sigma_bar, beta)
    return 0.75 / beta * (sigma_bar / theta0 ** 2) ** 2 * s2 ** 2.5


def _u_grid(beta: float, n: int = 2001, width: float = 12.0):
    u = np.linspace(-width * beta, width * beta, n)
    phi = np.exp(-0.5 * (u / beta) ** 2) / (math.sqrt(2 * math.pi) * beta)
    return u, phi


def j_quadrature(theta0: float, sigma_bar: float, beta: float,
                 potential: Optional[PotentialModel] = None) -> float:
    """``int |d_theta C(u)|^2 phi(u) du`` by quadrature in ``u`` and ``x``."""
    _check_positive(theta0=theta0, sigma_bar=sigma_bar, beta=beta)
    dens = gibbs_density(theta0, sigma_bar, potential or quadratic())
    u, phi = _u_grid(beta)
    g = char_fn_grad(dens, u)
    return float(integrate(Grid1D(u[0], u[-1], u.size, np.abs(g) ** 2 * phi)))


def h_closed_form(z, theta0: float, sigma_bar: float, beta: float):
    """``h`` for the quadratic potential, vectorised in ``z``."""
    _check_positive(theta0=theta0, sigma_bar=sigma_bar, beta=beta)
    s1, s2 = sigma_scales(theta0, sigma_bar, beta)
    z = np.asarray(z, dtype=float)
    pre = sigma_bar / (2 * theta0 ** 2 * beta)
    return pre * (s1 ** 1.5 * (1 - s1 * z * z) * np.exp(-0.5 * s1 * z * z) - s2 ** 1.5)


def h_quadrature(z, theta0: float, sigma_bar: float, beta: float,
                 potential: Optional[PotentialModel] = None, density: Optional[GibbsDensity] = None):
    """General ``h(z) = Re int (exp(iuz) - C(u)) conj(d_theta C(u)) phi(u) du``."""
    dens = density or gibbs_density(theta0, sigma_bar, potential or quadratic())
    u, phi = _u_grid(beta)
    cf = char_fn(dens, u)
    w = np.conj(char_fn_grad(dens, u)) * phi
    w = w * (np.full(u.size, u[1] - u[0]))
    w[0] *= 0.5
    w[-1] *= 0.5
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    out = (np.exp(1j * np.outer(z_arr, u)) - cf) @ w
    out = out.real
    return float(out[0]) if np.ndim(z) == 0 else out.reshape(np.shape(z))


@dataclass(frozen=True)
class PoissonSolution:
    """``Phi`` and ``Phi'`` on a grid, with the ``mu`` and ``h`` they were built from."""

    phi: Grid1D
    dphi: Grid1D
    mu: Grid1D
    h: Grid1D

    def residual(self, theta0: float, sigma_bar: float, potential: Optional[PotentialModel] = None) -> np.ndarray:
        """``theta0 V' Phi' - sigma_bar Phi'' - h`` at interior nodes (central differences)."""
        x, dx = self.phi.x, self.phi.dx
        dV = (potential or quadratic()).dV
        p = self.phi.values
        d2 = (p[2:] - 2 * p[1:-1] + p[:-2]) / dx ** 2
        return theta0 * np.asarray(dV(x[1:-1])) * self.dphi.values[1:-1] - sigma_bar * d2 - self.h.values[1:-1]


def default_phi_grid(theta0: float, sigma_bar: float, potential: Optional[PotentialModel] = None,
                     n: int = PHI_NODES) -> Grid1D:
    """Symmetric grid ending where ``mu(theta0)`` drops below ``1e-12`` of its maximum.

    No widening: beyond that point ``1/mu`` only amplifies roundoff in ``Phi'``.
    """
    pot = potential or quadratic()
    R = tail_half_width(lambda x: -theta0 * np.asarray(pot.V(x)) / sigma_bar, widen=0.0)
    return Grid1D.symmetric(R, n)


def phi_solve(theta0: float, sigma_bar: float, beta: float, grid: Optional[Grid1D] = None,
              h: Optional[Callable] = None, potential: Optional[PotentialModel] = None) -> PoissonSolution:
    """Solve for ``Phi`` with ``Phi(0) = 0`` by nested cumulative trapezoid sums.

    ``Phi'(y) = -F(y) / (sigma_bar mu(y))`` with ``F(y) = int_{-inf}^y h mu``.
    ``F`` is accumulated from the left for ``y <= 0`` and as minus the integral
    from the right for ``y > 0``, so that both tails are computed where ``F`` is
    small in absolute terms rather than as a difference of large numbers. The
    mass outside the grid enters as ``h mu / |(log mu)'|`` at each end.
    ``h`` defaults to the closed form for a quadratic potential and the general
    quadrature otherwise. Raises ``ValueError`` when ``int h mu`` is not zero
    to ``1e-6``.
    """
    _check_positive(theta0=theta0, sigma_bar=sigma_bar, beta=beta)
    pot = potential or quadratic()
    if grid is None:
        grid = default_phi_grid(theta0, sigma_bar, pot)
    x, dx = grid.x, grid.dx
    if h is None:
        if pot.kind == "quadratic" and pot.curvature == 1.0:
            h = lambda z: h_closed_form(z, theta0, sigma_bar, beta)  # noqa: E731
        else:
            dens = gibbs_density(theta0, sigma_bar, pot)
            h = lambda z: h_quadrature(z, theta0, sigma_bar, beta, density=dens)  # noqa: E731
    log_w = -theta0 * np.asarray(pot.V(x)) / sigma_bar
    w = np.exp(log_w - log_w.max())
    mu = w / integrate(grid.with_values(w))
    hv = np.asarray(h(x), dtype=float) * np.ones_like(x)
    hm = hv * mu

    total = float(integrate(grid.with_values(hm)))
    if abs(total) > CENTERING_TOL:
        raise ValueError(f"h is not centred under mu: int h mu = {total:.3g}")
    # mass of h mu beyond each end, to leading order in the decay rate of mu
    rate = theta0 * np.abs(np.asarray(pot.dV(x[[0, -1]]), dtype=float)) / sigma_bar
    left = cumulative_trapezoid(hm, dx) + hm[0] / rate[0]
    right = cumulative_trapezoid(hm[::-1], dx)[::-1] + hm[-1] / rate[1]
    zero = int(round(-grid.lo / dx))
    F = np.where(np.arange(x.size) <= zero, left, -right)
    dphi = np.zeros_like(x)
    keep = np.abs(F) >= PHI_CAP * np.max(np.abs(F))
    dphi[keep] = -F[keep] / (sigma_bar * mu[keep])
    phi = cumulative_trapezoid(dphi, dx)
    phi = phi - phi[zero]
    phi[zero] = 0.0
    return PoissonSolution(grid.with_values(phi), grid.with_values(dphi), grid.with_values(mu),
                           grid.with_values(hv))


def tau_squared(theta0: float, sigma_bar: float, beta: float, h: Optional[Callable] = None,
                potential: Optional[PotentialModel] = None,
                grid: Optional[Grid1D] = None) -> AsymptoticStats:
    """``tau^2 = 2 sigma_bar int Phi'^2 mu`` together with ``J`` and ``tau^2 / J^2``."""
    pot = potential or quadratic()
    sol = phi_solve(theta0, sigma_bar, beta, grid, h, pot)
    tau = 2 * sigma_bar * float(integrate(sol.dphi.with_values(sol.dphi.values ** 2 * sol.mu.values)))
    if pot.kind == "quadratic" and pot.curvature == 1.0:
        J = j_scalar(theta0, sigma_bar, beta)
    else:
        J = j_quadrature(theta0, sigma_bar, beta, pot)
    s1, s2 = sigma_scales(theta0, sigma_bar, beta)
    return AsymptoticStats(J, tau, tau / J ** 2, s1, s2)


# --- convergence rates -------------------------------------------------------------------

@dataclass(frozen=True)
class MultiscaleModel:
    """Parameters of the 1D multiscale Langevin model used by :func:`cf_gap`."""

    alpha: float = 2.0
    sigma: float = 1.0
    potential: PotentialModel = quadratic()
    p: PeriodicPerturbation = sine()

    @property
    def K(self) -> float:
        return homogenization_factor(self.p, self.sigma)

    @property
    def theta0(self) -> float:
        return self.alpha * self.K

    @property
    def sigma_bar(self) -> float:
        return self.sigma * self.K


def cf_gap(eps: float, u: float, model: MultiscaleModel = MultiscaleModel()) -> float:
    """``|int exp(iux) mu_eps(x) dx - C_theta0(u)|``."""
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 0.5]")
    ms = multiscale_density(eps, model.alpha, model.sigma, model.potential, model.p)
    limit = gibbs_density(model.theta0, model.sigma_bar, model.potential)
    return float(abs(grid_char_fn(ms, u) - char_fn(limit, u)))


@dataclass(frozen=True)
class FunctionSpec:
    """Test function ``f`` for the oscillatory-integral bound, supported in ``[-half_width, half_width]``."""

    f: Callable
    half_width: float
    name: str = "custom"


def gaussian_function(scale: float = 1.0) -> FunctionSpec:
    """``N(0, scale^2)`` density; the standard normal is the default test function."""
    return FunctionSpec(lambda x: np.exp(-0.5 * np.square(x / scale)) / (math.sqrt(2 * math.pi) * scale),
                        12.0 * scale, "gaussian")


def bump_function(power: int = 2) -> FunctionSpec:
    """``(1 - x^2)_+^power``: only ``power - 1`` weak derivatives are integrable."""
    return FunctionSpec(lambda x: np.clip(1 - np.square(x), 0.0, None) ** power, 1.0, f"bump{power}")


def _oscillation_grid(f_spec: FunctionSpec, p: PeriodicPerturbation, eps: float, min_n: int = 4097):
    # dx <= eps L / 64, odd node count so the grid is symmetric with a node at 0
    n = max(min_n, int(math.ceil(2 * f_spec.half_width / (eps * p.period / 64))) + 1)
    n += 1 - n % 2
    return Grid1D.sample(f_spec.f, -f_spec.half_width, f_spec.half_width, n)


def periodic_mean(g: Callable, period: float, n: int = 4096) -> float:
    y = np.arange(n) * (period / n)
    return float(np.mean(np.asarray(g(y), dtype=float)))


def oscillatory_gap(f_spec: FunctionSpec, p: PeriodicPerturbation, eps: float) -> float:
    """``|int f(x) [exp(p(x/eps)) - <exp p>] dx|`` with ``<.>`` the period average."""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    g = _oscillation_grid(f_spec, p, eps)
    mean = periodic_mean(lambda y: np.exp(p.p(y)), p.period)
    bracket = np.exp(np.asarray(p.p(g.x / eps))) - mean
    return float(abs(integrate(g.with_values(g.values * bracket))))


def fourier_l1(p: PeriodicPerturbation, n: int = 4096) -> float:
    """``sum_l |p_hat(l)|`` over the nonzero Fourier modes of ``p`` (coefficients below 1e-12 dropped)."""
    y = np.arange(n) * (p.period / n)
    c = np.abs(np.fft.rfft(np.asarray(p.p(y), dtype=float))) / n
    c = c[1:]
    c = c[c > 1e-12]
    # rfft keeps l >= 0; the l < 0 modes mirror them (the Nyquist bin has no mirror, but is dropped for smooth p)
    return float(2 * c.sum())


def sobolev_norm(f_spec: FunctionSpec, k: int, n: int = 200001) -> float:
    """``||f||_{W^{k,1}} = sum_{j <= k} int |f^(j)|`` with derivatives by central differences."""
    g = Grid1D.sample(f_spec.f, -f_spec.half_width, f_spec.half_width, n)
    total = 0.0
    vals = np.asarray(g.values, dtype=float)
    for _ in range(k + 1):
        total += float(integrate(g.with_values(np.abs(vals))))
        vals = np.gradient(vals, g.dx)
    return total


def oscillatory_bound(f_spec: FunctionSpec, p: PeriodicPerturbation, eps: float, k: int = 1) -> float:
    """``(eps / 2 pi)^k exp(sum |p_hat|) ||f||_{W^{k,1}}``."""
    return (eps / (2 * math.pi)) ** k * math.exp(fourier_l1(p)) * sobolev_norm(f_spec, k)


def fit_decay_order(eps: Sequence[float], gaps: Sequence[float], log_gaps: bool = False) -> float:
    """Least-squares slope of ``log(gap)`` against ``log(1/eps)``.

    A gap shrinking like ``eps^r`` gives slope ``-r``. With ``log_gaps`` the
    second argument already holds natural logarithms.
    """
    e = -np.log(np.asarray(eps, dtype=float))
    g = np.asarray(gaps, dtype=float)
    if not log_gaps:
        if np.any(g <= 0):
            raise ValueError("gaps must be positive to fit a log-log slope")
        g = np.log(g)
    return float(np.polyfit(e, g, 1)[0])


def meets_order(slope: float, order: float) -> bool:
    """``order >= r`` in the fitted sense: slope at most ``-r + 0.2``."""
    return slope <= -order + 0.2


@dataclass(frozen=True)
class RateReport:
    kind: str
    eps: tuple
    gaps: tuple
    slope: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "gap", "fitted_slope"])
            for e, g in zip(self.eps, self.gaps):
                w.writerow([repr(float(e)), repr(float(g)), repr(self.slope)])


EPS_LADDER = (0.4, 0.2, 0.1, 0.05)


def cf_gap_ladder(eps: Sequence[float] = EPS_LADDER, u: float = 1.0,
                  model: MultiscaleModel = MultiscaleModel()) -> RateReport:
    gaps = tuple(cf_gap(e, u, model) for e in eps)
    return RateReport("cf_gap", tuple(eps), gaps, fit_decay_order(eps, np.maximum(gaps, 1e-300)))


def oscillatory_ladder(eps: Sequence[float] = EPS_LADDER, f_spec: Optional[FunctionSpec] = None,
                       p: Optional[PeriodicPerturbation] = None) -> RateReport:
    f_spec = f_spec or gaussian_function()
    p = p or sine()
    gaps = tuple(oscillatory_gap(f_spec, p, e) for e in eps)
    return RateReport("oscillatory_gap", tuple(eps), gaps, fit_decay_order(eps, np.maximum(gaps, 1e-300)))


# --- gaps below double-precision roundoff --------------------------------------------------
#
# For analytic p and Gaussian weights both gaps are exponentially small in
# 1/eps^2, so quadrature returns roundoff. Expanding the periodic factor in
# its Fourier series turns each gap into a sum of Gaussian Fourier transforms
# at the frequencies 2 pi l / (eps L), which is evaluated here in log space.

def _fourier_coefficients(g: Callable, period: float, n: int = 256):
    """``(l, c_l)`` for ``l = 1 .. n/2 - 1`` and ``c_0`` of ``g`` on one period."""
    y = np.arange(n) * (period / n)
    c = np.fft.fft(np.asarray(g(y), dtype=float)) / n
    l = np.arange(1, n // 2)
    return l, c[0].real, c[1:n // 2], np.conj(c[1:n // 2])


def _log_abs_sum(log_mag: np.ndarray, phase: np.ndarray) -> float:
    """``log |sum exp(log_mag) * phase|`` without under- or overflow."""
    top = np.max(log_mag)
    total = np.sum(np.exp(log_mag - top) * phase)
    return float(top + np.log(np.abs(total))) if total != 0 else -math.inf


def log_cf_gap_series(eps: float, u: float, model: MultiscaleModel = MultiscaleModel()) -> float:
    """Natural log of :func:`cf_gap` from the Fourier series of ``exp(-p/sigma)``.

    Only for the quadratic potential, where ``mu_eps`` is a Gaussian of
    variance ``s = sigma/alpha`` times the periodic factor and
    ``C_eps(u) - C(u) = sum_l r_l F(l w) F(u) (exp(-s u l w) - 1) / (1 + b)``
    with ``F(w) = exp(-s w^2/2)``, ``w = 2 pi / (eps L)``,
    ``r_l = g_l / g_0`` and ``b = sum_l r_l F(l w)``.
    """
    pot = model.potential
    if pot.kind != "quadratic":
        raise ValueError("series form needs a quadratic potential")
    s = model.sigma / (model.alpha * pot.curvature)
    w = 2 * math.pi / (eps * model.p.period)
    l, g0, gp, gm = _fourier_coefficients(lambda y: np.exp(-np.asarray(model.p.p(y)) / model.sigma),
                                          model.p.period)
    keep = np.abs(gp) > 1e-15 * abs(g0)
    l, gp, gm = l[keep], gp[keep] / g0, gm[keep] / g0
    ll = np.concatenate([l, -l])
    r = np.concatenate([gp, gm])
    log_f = -0.5 * s * (ll * w) ** 2 - 0.5 * s * u * u
    # exp(-s u l w) - 1 spans many orders of magnitude; keep it in log form too
    x = -s * u * ll * w
    log_bracket = np.where(x > 0, x + np.log(-np.expm1(-np.abs(x))), np.log(-np.expm1(-np.abs(x))))
    sign = np.where(x > 0, 1.0, -1.0)
    with np.errstate(divide="ignore"):
        log_num = _log_abs_sum(log_f + log_bracket, r * sign)
    log_b = -0.5 * s * (ll * w) ** 2
    b = float(np.sum(np.exp(log_b) * r).real) if np.max(log_b) > -700 else 0.0
    return log_num - math.log1p(b)


def log_oscillatory_gap_series(eps: float, p: PeriodicPerturbation, scale: float = 1.0) -> float:
    """Natural log of :func:`oscillatory_gap` for ``f = N(0, scale^2)``.

    ``int f(x) [exp(p(x/eps)) - <exp p>] dx = sum_{l != 0} c_l exp(-(scale l w)^2 / 2)``
    with ``c_l`` the Fourier coefficients of ``exp(p)`` and ``w = 2 pi / (eps L)``.
    """
    w = 2 * math.pi / (eps * p.period)
    l, c0, cp, cm = _fourier_coefficients(lambda y: np.exp(np.asarray(p.p(y))), p.period)
    keep = np.abs(cp) > 1e-15 * abs(c0)
    if not keep.any():
        return -math.inf
    l, cp, cm = l[keep], cp[keep], cm[keep]
    ll = np.concatenate([l, -l])
    c = np.concatenate([cp, cm])
    return _log_abs_sum(-0.5 * (scale * ll * w) ** 2, c)


def series_ladder(kind: str, eps: Sequence[float] = EPS_LADDER, u: float = 1.0,
                  model: MultiscaleModel = MultiscaleModel(), p: Optional[PeriodicPerturbation] = None):
    """``(log_gaps, slope)`` of the series forms over an eps ladder."""
    if kind == "cf_gap":
        logs = [log_cf_gap_series(e, u, model) for e in eps]
    elif kind == "oscillatory_gap":
        logs = [log_oscillatory_gap_series(e, p or sine()) for e in eps]
    else:
        raise ValueError(f"unknown gap kind {kind!r}")
    return tuple(logs), fit_decay_order(eps, logs, log_gaps=True)
