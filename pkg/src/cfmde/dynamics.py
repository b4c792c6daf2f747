"""Trajectory generation.

Euler-Maruyama for the multiscale and homogenized overdamped Langevin SDEs in
one and two dimensions, and classical RK4 for the slow-fast system driven by
a Lorenz block. Polynomial potentials with sinusoidal perturbations run in
compiled numba kernels; anything else falls back to a Python step loop.

Random numbers come from a Philox counter-based generator seeded with the
replication seed. Draws are taken in fixed-size chunks, so a given seed always
produces the same path.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numba
import numpy as np

from .gibbs import PeriodicPerturbation, PotentialModel

_CHUNK = 1 << 18
_HEADER = struct.Struct("<IQdQ")


class BlowUpError(FloatingPointError):
    """A simulated state became non-finite."""

    def __init__(self, step: int):
        super().__init__(f"non-finite state at integration step {step}")
        self.step = step


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled path ``X(0), X(dt), ..., X(m dt)``."""

    dt: float
    states: np.ndarray = field(repr=False)
    dim: int = 1
    seed: int = 0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[1] != self.dim:
            raise ValueError(f"states must have shape (m+1, {self.dim}), got {states.shape}")
        if states.shape[0] < 1:
            raise ValueError("trajectory is empty")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory contains non-finite states")
        object.__setattr__(self, "states", states)

    @property
    def m(self) -> int:
        return self.states.shape[0] - 1

    @property
    def T(self) -> float:
        return self.m * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.m + 1)

    @property
    def x(self) -> np.ndarray:
        """The path as a flat array (1D trajectories only)."""
        if self.dim != 1:
            raise ValueError("x is only defined for one-dimensional trajectories")
        return self.states[:, 0]

    def weights(self) -> np.ndarray:
        """Time-average weights: trapezoid rule on the stored spacing, summing to 1."""
        if self.m == 0:
            return np.ones(1)
        w = np.full(self.m + 1, 1.0 / self.m)
        w[0] = w[-1] = 0.5 / self.m
        return w

    def tail(self, burn_in: float) -> "Trajectory":
        """Drop the first ``burn_in`` time units."""
        k = int(round(burn_in / self.dt))
        return Trajectory(self.dt, self.states[k:], self.dim, self.seed)

    # --- export -------------------------------------------------------------
    def to_binary(self, path) -> None:
        """Little-endian header ``(dim u32, m u64, dt f64, seed u64)`` then the states."""
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(self.dim, self.m, self.dt, self.seed))
            fh.write(np.ascontiguousarray(self.states, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "Trajectory":
        with open(path, "rb") as fh:
            dim, m, dt, seed = _HEADER.unpack(fh.read(_HEADER.size))
            data = np.frombuffer(fh.read(), dtype="<f8")
        if data.size != (m + 1) * dim:
            raise ValueError(f"{path}: expected {(m + 1) * dim} values, found {data.size}")
        return cls(dt, data.reshape(m + 1, dim).astype(float), dim, seed)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x{i + 1}" for i in range(self.dim)])
            for t, row in zip(self.times, self.states):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, seed: int = 0) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, states = data[:, 0], data[:, 1:]
        dt = (t[-1] - t[0]) / (len(t) - 1)
        return cls(dt, states, states.shape[1], seed)


@dataclass(frozen=True)
class SdeSpec:
    """``dX = drift(X) dt + noise_scale dW`` with constant diffusion.

    ``eps`` marks a multiscale drift and triggers the ``dt < eps^3`` step rule.
    ``kernel`` optionally names a compiled fast path and its parameters.
    ``stiffness`` bounds ``|d drift / dx|`` of the fast part, ``max|p''| / eps^2``.
    """

    drift: Callable
    noise_scale: np.ndarray
    dim: int = 1
    eps: Optional[float] = None
    kernel: Optional[tuple] = field(default=None, repr=False)
    stiffness: Optional[float] = None

    def __post_init__(self):
        noise = np.atleast_2d(np.asarray(self.noise_scale, dtype=float))
        if noise.shape != (self.dim, self.dim):
            raise ValueError(f"noise_scale must be {self.dim}x{self.dim}")
        if not np.all(np.isfinite(noise)):
            raise ValueError("noise_scale has non-finite entries")
        object.__setattr__(self, "noise_scale", noise)


@dataclass(frozen=True)
class FcnSpec:
    """Slow variable ``x' = A x - B x^3 + (lambda/eps) y2`` driven by a Lorenz block on time scale ``eps^2``."""

    A: float
    B: float
    lam: float
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


# --- compiled kernels ----------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _em1d_chunk(x, normals, dt, stride, step0, theta, coeffs, inv_eps, amp, omega, noise, out):
    sq = math.sqrt(dt) * noise
    for j in range(normals.shape[0]):
        # Horner evaluation of V'(x)
        dv = 0.0
        for c in range(coeffs.shape[0] - 1, -1, -1):
            dv = dv * x + coeffs[c]
        f = -theta * dv
        if amp != 0.0:
            f -= inv_eps * amp * omega * math.cos(omega * x * inv_eps)
        x = x + f * dt + sq * normals[j, 0]
        step = step0 + j + 1
        if not math.isfinite(x):
            return x, step
        if step % stride == 0:
            out[step // stride, 0] = x
    return x, -1


@numba.njit(cache=True, nogil=True)
def _em2d_chunk(x, normals, dt, stride, step0, drift_mat, inv_eps, amps, omegas, noise, out):
    sq = math.sqrt(dt)
    x0 = x[0]
    x1 = x[1]
    for j in range(normals.shape[0]):
        f0 = -(drift_mat[0, 0] * x0 + drift_mat[0, 1] * x1)
        f1 = -(drift_mat[1, 0] * x0 + drift_mat[1, 1] * x1)
        if amps[0] != 0.0:
            f0 -= inv_eps * amps[0] * omegas[0] * math.cos(omegas[0] * x0 * inv_eps)
        if amps[1] != 0.0:
            f1 -= inv_eps * amps[1] * omegas[1] * math.cos(omegas[1] * x1 * inv_eps)
        n0 = normals[j, 0]
        n1 = normals[j, 1]
        y0 = x0 + f0 * dt + sq * (noise[0, 0] * n0 + noise[0, 1] * n1)
        y1 = x1 + f1 * dt + sq * (noise[1, 0] * n0 + noise[1, 1] * n1)
        x0 = y0
        x1 = y1
        step = step0 + j + 1
        if not (math.isfinite(x0) and math.isfinite(x1)):
            x[0] = x0
            x[1] = x1
            return step
        if step % stride == 0:
            out[step // stride, 0] = x0
            out[step // stride, 1] = x1
    x[0] = x0
    x[1] = x1
    return -1


@numba.njit(cache=True, nogil=True)
def _fcn_rhs(s, A, B, lam, eps, out):
    e2 = eps * eps
    out[0] = A * s[0] - B * s[0] ** 3 + lam / eps * s[2]
    out[1] = 10.0 * (s[2] - s[1]) / e2
    out[2] = (28.0 * s[1] - s[2] - s[1] * s[3]) / e2
    out[3] = (s[1] * s[2] - 8.0 / 3.0 * s[3]) / e2


@numba.njit(cache=True, nogil=True)
def _rk4_fcn(s, A, B, lam, eps, dt, nsteps, stride, out):
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    out[0] = s[0]
    for step in range(1, nsteps + 1):
        _fcn_rhs(s, A, B, lam, eps, k1)
        for i in range(4):
            tmp[i] = s[i] + 0.5 * dt * k1[i]
        _fcn_rhs(tmp, A, B, lam, eps, k2)
        for i in range(4):
            tmp[i] = s[i] + 0.5 * dt * k2[i]
        _fcn_rhs(tmp, A, B, lam, eps, k3)
        for i in range(4):
            tmp[i] = s[i] + dt * k3[i]
        _fcn_rhs(tmp, A, B, lam, eps, k4)
        ok = True
        for i in range(4):
            s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not math.isfinite(s[i]):
                ok = False
        if not ok:
            return step
        if step % stride == 0:
            out[step // stride] = s[0]
    return -1


# --- SDE construction -----------------------------------------------------------

def _curvature_bound(p: PeriodicPerturbation, n: int = 1024) -> float:
    """``max |p''|`` over one period, by differencing ``p'``."""
    y = np.arange(n + 1) * (p.period / n)
    return float(np.max(np.abs(np.diff(np.asarray(p.dp(y), dtype=float))))) * n / p.period


def build_multiscale_langevin(alpha: float, sigma: float, eps: float, potential: PotentialModel,
                              p: Union[PeriodicPerturbation, Sequence[PeriodicPerturbation]]) -> SdeSpec:
    """``dX = (-alpha grad V(X) - (1/eps) grad p(X/eps)) dt + sqrt(2 sigma) dW``.

    In 2D, ``p`` is a pair of perturbations acting componentwise and
    ``potential`` must be a quadratic form.
    """
    if min(alpha, sigma, eps) <= 0:
        raise ValueError("alpha, sigma and eps must be positive")
    if potential.dim == 1:
        if not isinstance(p, PeriodicPerturbation):
            raise ValueError("a 1D potential takes a single periodic perturbation")
        dV, dp = potential.dV, p.dp

        def drift(x):
            x = np.asarray(x, dtype=float)
            return -alpha * np.asarray(dV(x)) - np.asarray(dp(x / eps)) / eps

        kernel = None
        if potential.dv_coeffs is not None and p.amplitude is not None:
            kernel = ("em1d", dict(theta=alpha, coeffs=np.array(potential.dv_coeffs, dtype=float),
                                   inv_eps=1.0 / eps, amp=p.amplitude, omega=2 * math.pi / p.period))
        return SdeSpec(drift, math.sqrt(2 * sigma) * np.eye(1), 1, eps, kernel,
                       _curvature_bound(p) / eps ** 2)

    if potential.dim != 2 or isinstance(p, PeriodicPerturbation) or len(p) != 2:
        raise ValueError("2D multiscale Langevin needs a 2D potential and a pair of perturbations")
    p1, p2 = p
    M = potential.matrix

    def drift(x):
        x = np.asarray(x, dtype=float)
        fast = np.stack([np.asarray(p1.dp(x[..., 0] / eps)), np.asarray(p2.dp(x[..., 1] / eps))], axis=-1)
        return -alpha * np.asarray(potential.dV(x)) - fast / eps

    kernel = None
    if M is not None and p1.amplitude is not None and p2.amplitude is not None:
        kernel = ("em2d", dict(drift_mat=alpha * np.asarray(M, dtype=float), inv_eps=1.0 / eps,
                               amps=np.array([p1.amplitude, p2.amplitude], dtype=float),
                               omegas=np.array([2 * math.pi / p1.period, 2 * math.pi / p2.period])))
    stiff = max(_curvature_bound(p1), _curvature_bound(p2)) / eps ** 2
    return SdeSpec(drift, math.sqrt(2 * sigma) * np.eye(2), 2, eps, kernel, stiff)


def build_homogenized_langevin(theta, sigma_bar, potential: PotentialModel | None = None) -> SdeSpec:
    """Limit equation ``dX = -theta grad V(X) dt + sqrt(2 sigma_bar) dW``.

    In 2D ``theta`` is the drift matrix (acting on ``X`` directly) and
    ``sigma_bar`` the diagonal diffusion matrix.
    """
    theta_arr = np.asarray(theta, dtype=float)
    if theta_arr.ndim == 0:
        if potential is None or potential.dim != 1:
            raise ValueError("scalar theta needs a 1D potential")
        th = float(theta_arr)
        dV = potential.dV

        def drift(x):
            return -th * np.asarray(dV(np.asarray(x, dtype=float)))

        kernel = None
        if potential.dv_coeffs is not None:
            kernel = ("em1d", dict(theta=th, coeffs=np.array(potential.dv_coeffs, dtype=float),
                                   inv_eps=0.0, amp=0.0, omega=0.0))
        return SdeSpec(drift, math.sqrt(2 * float(sigma_bar)) * np.eye(1), 1, None, kernel)

    S = np.asarray(sigma_bar, dtype=float)
    if theta_arr.shape != (2, 2) or S.shape != (2, 2):
        raise ValueError("matrix theta and sigma_bar must both be 2x2")
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    if w.min() <= 0:
        raise ValueError("sigma_bar matrix must be positive definite")
    noise = U @ np.diag(np.sqrt(2 * w)) @ U.T

    def drift(x):
        return -np.asarray(x, dtype=float) @ theta_arr.T

    kernel = ("em2d", dict(drift_mat=theta_arr.copy(), inv_eps=0.0, amps=np.zeros(2), omegas=np.zeros(2)))
    return SdeSpec(drift, noise, 2, None, kernel)


#: Largest ``dt * stiffness`` the automatic step allows.
STIFF_STEP = 0.1


def default_dt(spec: SdeSpec) -> float:
    """Automatic step: ``min(eps^3/2, STIFF_STEP / stiffness)`` for multiscale drifts, else ``1e-3``.

    ``eps^3/2`` alone puts ``dt * max|p''| / eps^2`` near 2 for ``p = sin(2 pi y)``,
    where Euler-Maruyama is barely stable and its stationary law is visibly
    too wide. Bounding the product by 0.1 removes that bias.
    """
    if spec.eps is None:
        return 1e-3
    dt = 0.5 * spec.eps ** 3
    if spec.stiffness:
        dt = min(dt, STIFF_STEP / spec.stiffness)
    return dt


def _step_plan(T: float, dt: float, obs_dt: Optional[float]):
    if not T > 0 or not dt > 0:
        raise ValueError("T and dt must be positive")
    if dt > T:
        raise ValueError("dt must not exceed T")
    if obs_dt is None or obs_dt <= dt:
        m = int(math.ceil(T / dt - 1e-9))
        return m, 1, T / m
    m = max(1, int(round(T / obs_dt)))
    stride = int(math.ceil((T / m) / dt - 1e-9))
    return m, stride, T / (m * stride)


def euler_maruyama(spec: SdeSpec, x0, T: float, dt: Union[float, str] = "auto", seed: int = 0,
                   obs_dt: Optional[float] = None) -> Trajectory:
    """Euler-Maruyama path of ``spec`` from ``x0`` over ``[0, T]``.

    The integration step is ``dt`` (``"auto"`` picks :func:`default_dt`), rounded
    down so that it divides the storage spacing. With ``obs_dt`` set, only every
    k-th state is kept so that stored points are ``~obs_dt`` apart.

    Raises :class:`BlowUpError` if the state becomes non-finite.
    """
    if isinstance(dt, str):
        if dt != "auto":
            raise ValueError(f"dt must be a number or 'auto', got {dt!r}")
        dt = default_dt(spec)
    dt = float(dt)
    if spec.eps is not None and not dt < spec.eps ** 3:
        raise ValueError(f"multiscale step rule violated: dt={dt} must be < eps^3={spec.eps ** 3}")
    m, stride, h = _step_plan(T, dt, obs_dt)
    d = spec.dim
    x = np.array(x0, dtype=float).reshape(d)
    out = np.empty((m + 1, d))
    out[0] = x
    total = m * stride
    rng = np.random.Generator(np.random.Philox(int(seed)))
    noise = spec.noise_scale
    kind, params = spec.kernel if spec.kernel is not None else (None, None)

    step0 = 0
    while step0 < total:
        count = min(_CHUNK, total - step0)
        normals = rng.standard_normal((count, d))
        if kind == "em1d":
            xs, bad = _em1d_chunk(float(x[0]), normals, h, stride, step0, params["theta"], params["coeffs"],
                                  params["inv_eps"], params["amp"], params["omega"], float(noise[0, 0]), out)
            x[0] = xs
        elif kind == "em2d":
            bad = _em2d_chunk(x, normals, h, stride, step0, params["drift_mat"], params["inv_eps"],
                              params["amps"], params["omegas"], noise, out)
        else:
            bad = _python_chunk(spec, x, normals, h, stride, step0, out)
        if bad >= 0:
            raise BlowUpError(int(bad))
        step0 += count
    return Trajectory(h * stride, out, d, int(seed))


def _python_chunk(spec: SdeSpec, x, normals, dt, stride, step0, out) -> int:
    sq = math.sqrt(dt)
    noise = spec.noise_scale
    for j in range(normals.shape[0]):
        x += np.asarray(spec.drift(x), dtype=float).reshape(x.shape) * dt + sq * (noise @ normals[j])
        step = step0 + j + 1
        if not np.all(np.isfinite(x)):
            return step
        if step % stride == 0:
            out[step // stride] = x
    return -1


def default_fcn_dt(eps: float) -> float:
    return min(1e-3, eps * eps / 10.0)


def rk4_fcn(spec: FcnSpec, x0, T: float, dt: Optional[float] = None,
            obs_dt: Optional[float] = None) -> Trajectory:
    """Classical RK4 on the 4D slow-fast system; returns the slow component only.

    ``dt`` defaults to ``min(1e-3, eps^2/10)`` and may not exceed ``eps^2/10``.
    """
    if dt is None:
        dt = default_fcn_dt(spec.eps)
    limit = spec.eps ** 2 / 10.0
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"RK4 step {dt} exceeds the stability bound eps^2/10 = {limit}")
    m, stride, h = _step_plan(T, dt, obs_dt)
    s = np.array(x0, dtype=float).reshape(4)
    out = np.empty(m + 1)
    bad = _rk4_fcn(s, float(spec.A), float(spec.B), float(spec.lam), float(spec.eps), h, m * stride, stride, out)
    if bad >= 0:
        raise BlowUpError(int(bad))
    return Trajectory(h * stride, out, 1, 0)
