"""Quadrature, grids, FFT convolution and a few special functions.

Everything here is a pure function of its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

#: Default node count for density and convolution grids.
DEFAULT_N = 4096

#: A density is cut off where it drops below this fraction of its maximum.
TAIL_RATIO = 1e-12
TAIL_WIDEN = 0.2


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on ``[lo, hi]`` with ``n`` nodes and attached samples."""

    lo: float
    hi: float
    n: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"grid needs n >= 2 nodes, got {self.n}")
        if not self.hi > self.lo:
            raise ValueError(f"grid needs hi > lo, got [{self.lo}, {self.hi}]")
        values = np.asarray(self.values)
        if values.shape != (self.n,):
            raise ValueError(f"values has shape {values.shape}, expected ({self.n},)")
        object.__setattr__(self, "values", values)

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return self.lo + self.dx * np.arange(self.n)

    def with_values(self, values) -> "Grid1D":
        return Grid1D(self.lo, self.hi, self.n, values)

    def same_nodes(self, other: "Grid1D", rtol: float = 1e-12) -> bool:
        scale = max(abs(self.lo), abs(self.hi), 1.0)
        return (
            self.n == other.n
            and abs(self.lo - other.lo) <= rtol * scale
            and abs(self.hi - other.hi) <= rtol * scale
        )

    @classmethod
    def sample(cls, f: Callable, lo: float, hi: float, n: int) -> "Grid1D":
        x = np.linspace(lo, hi, n)
        return cls(lo, hi, n, np.asarray(f(x)))

    @classmethod
    def symmetric(cls, half_width: float, n: int = DEFAULT_N, f: Callable | None = None) -> "Grid1D":
        """Grid covering ``[-half_width, half_width]`` that has a node at 0.

        For even ``n`` the left side carries one extra node, so ``lo/dx`` is
        always an integer. FFT convolutions on such grids need no sub-node shift.
        """
        if half_width <= 0:
            raise ValueError("half_width must be positive")
        right = (n - 1) - n // 2
        dx = half_width / right
        lo = -(n // 2) * dx
        hi = right * dx
        x = lo + dx * np.arange(n)
        values = np.zeros(n) if f is None else np.asarray(f(x))
        return cls(lo, hi, n, values)


def trapezoid_weights(n: int, dx: float) -> np.ndarray:
    w = np.full(n, dx)
    w[0] = w[-1] = 0.5 * dx
    return w


def _check_finite(values: np.ndarray, x: np.ndarray) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise FloatingPointError(f"non-finite integrand value {values[i]!r} at node {i} (x={x[i]!r})")


def integrate(f: Union[Callable, Grid1D], lo: float | None = None, hi: float | None = None,
              n: int | None = None):
    """Composite trapezoid rule.

    ``f`` is either a vectorised callable sampled on ``n`` uniform nodes of
    ``[lo, hi]``, or a :class:`Grid1D` whose samples are used directly.
    Complex integrands are supported.
    """
    if isinstance(f, Grid1D):
        x, y, dx = f.x, f.values, f.dx
    else:
        if lo is None or hi is None or n is None:
            raise TypeError("integrate(f, lo, hi, n) requires bounds and node count for callables")
        if n < 2:
            raise ValueError("n must be >= 2")
        if not hi > lo:
            raise ValueError("hi must exceed lo")
        x = np.linspace(lo, hi, n)
        dx = (hi - lo) / (n - 1)
        y = np.asarray(f(x))
        if y.shape == ():
            y = np.full(n, y)
    _check_finite(np.asarray(y), x)
    return dx * (y.sum() - 0.5 * (y[0] + y[-1]))


def cumulative_trapezoid(y: np.ndarray, dx: float) -> np.ndarray:
    """Running trapezoid integral, starting at 0 on the first node."""
    out = np.empty_like(y)
    out[0] = 0.0
    np.cumsum(0.5 * dx * (y[1:] + y[:-1]), out=out[1:])
    return out


def _next_pow2(m: int) -> int:
    return 1 << (m - 1).bit_length()


def fft_convolve(f: Grid1D, g: Grid1D) -> Grid1D:
    """Continuous convolution ``(f*g)(x) = int f(x-y) g(y) dy`` on the shared grid.

    Both inputs are zero-padded to the next power of two ``>= 2n-1``. The full
    linear convolution lives on nodes ``2*lo + k*dx``; the window aligned with
    the input grid is cut out. When ``-lo/dx`` is not an integer the window is
    shifted by the fractional remainder with a spectral phase factor.
    """
    if not f.same_nodes(g):
        raise ValueError("fft_convolve needs both inputs on the same grid")
    n = f.n
    if n < 8:
        raise ValueError(f"fft_convolve needs at least 8 nodes, got {n}")
    dx = f.dx
    size = _next_pow2(2 * n - 1)
    offset = -f.lo / dx
    whole = math.floor(offset + 1e-9)
    frac = offset - whole
    if abs(frac) < 1e-9 or abs(frac - 1) < 1e-9:
        frac = 0.0
    is_complex = np.iscomplexobj(f.values) or np.iscomplexobj(g.values)

    if is_complex:
        spec = np.fft.fft(f.values, size) * np.fft.fft(g.values, size)
        if frac:
            nu = np.fft.fftfreq(size) * size
            spec = spec * np.exp(2j * np.pi * nu * frac / size)
        full = np.fft.ifft(spec)
    else:
        spec = np.fft.rfft(f.values, size) * np.fft.rfft(g.values, size)
        if frac:
            nu = np.arange(spec.size)
            spec = spec * np.exp(2j * np.pi * nu * frac / size)
        full = np.fft.irfft(spec, size)
    if whole < 0 or whole + n > size:
        raise ValueError("grid does not overlap its own convolution window")
    return f.with_values(full[whole:whole + n] * dx)


def direct_convolve(f: Grid1D, g: Grid1D) -> Grid1D:
    """O(n^2) reference convolution for grids with a node at the origin offset."""
    if not f.same_nodes(g):
        raise ValueError("direct_convolve needs both inputs on the same grid")
    offset = -f.lo / f.dx
    off = int(round(offset))
    if abs(offset - off) > 1e-9:
        raise ValueError("direct_convolve needs -lo/dx to be an integer")
    n = f.n
    out = np.zeros(n, dtype=np.result_type(f.values, g.values))
    for i in range(n):
        acc = 0.0
        for j in range(n):
            m = i - j + off
            if 0 <= m < n:
                acc += f.values[m] * g.values[j]
        out[i] = acc * f.dx
    return f.with_values(out)


def linear_interp(g: Grid1D, x) -> np.ndarray:
    """Piecewise-linear interpolation of grid samples; zero outside ``[lo, hi]``."""
    x = np.asarray(x, dtype=float)
    nodes = g.x
    if np.iscomplexobj(g.values):
        re = np.interp(x, nodes, g.values.real, left=0.0, right=0.0)
        im = np.interp(x, nodes, g.values.imag, left=0.0, right=0.0)
        return re + 1j * im
    return np.interp(x, nodes, g.values, left=0.0, right=0.0)


def bessel_i0(x: float) -> float:
    """Modified Bessel function I0 by its power series, for ``|x| <= 50``."""
    if abs(x) > 50:
        raise ValueError(f"bessel_i0 series is only used for |x| <= 50, got {x}")
    q = 0.25 * x * x
    term = 1.0
    total = 1.0
    m = 0
    while True:
        m += 1
        term *= q / (m * m)
        total += term
        if term < 1e-16 * total:
            return total


def tail_half_width(log_weight: Callable, ratio: float = TAIL_RATIO, widen: float = TAIL_WIDEN,
                    start: float = 1.0, max_width: float = 1e6) -> float:
    """Symmetric half-width ``R`` outside of which ``exp(log_weight)`` is negligible.

    The support is where the weight is at least ``ratio`` times its maximum;
    the outermost such point is located on a coarse scan and widened by
    ``widen`` (20% by default).
    """
    drop = -math.log(ratio)
    width = start
    while width <= max_width:
        xs = np.linspace(-width, width, 4001)
        lw = np.asarray(log_weight(xs), dtype=float)
        top = np.max(lw)
        inside = lw >= top - drop
        if not inside[0] and not inside[-1]:
            idx = np.flatnonzero(inside)
            edge = max(abs(xs[idx[0] - 1]), abs(xs[idx[-1] + 1]))
            return edge * (1.0 + widen)
        width *= 2.0
    raise ValueError("weight does not decay within the search window; is the potential confining?")
