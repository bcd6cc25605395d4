"""Periodic grids, Fourier transforms, Littlewood-Paley projectors and norms.

Conventions
-----------
The torus is ``T_L = R / (2 pi L Z)`` with fundamental domain ``[-pi L, pi L)``
and nodes ``x_j = -pi L + j dx``.  Spectral coefficients are

    u_hat(n) = (2 pi L)^{-1} \\int u(x) exp(-i n x) dx,   n in L^{-1} Z,

approximated by the node sum, so that ``u(x) = sum_n u_hat(n) exp(i n x)`` and
``||u||^2_{L^2(T_L)} = 2 pi L sum_n |u_hat(n)|^2``.  Coefficient arrays are
stored in numpy FFT order (integer wavenumber ``k = n L`` from ``fftfreq``).

Every array-level function accepts batches: the last axis is the spatial axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "TorusGrid",
    "TorusField",
    "make_grid",
    "to_spectral",
    "from_spectral",
    "evaluate",
    "lp_symbol",
    "lp_piece",
    "smooth_cutoff",
    "is_dyadic",
    "lowpass",
    "apply_projector",
    "laplacian",
    "sigma_weight",
    "japanese",
    "norm",
    "lp_norm",
    "lp_loc_norm",
    "c0_norm",
    "calpha_norm",
    "ce_norm",
    "commutator_apply",
    "embed_offset",
]


@dataclass(frozen=True)
class TorusGrid:
    circumference_L: float
    n_points: int

    @property
    def L(self) -> float:
        return self.circumference_L

    @property
    def length(self) -> float:
        return 2.0 * math.pi * self.circumference_L

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @cached_property
    def nodes(self) -> np.ndarray:
        x = -math.pi * self.L + np.arange(self.n_points) * self.dx
        x.flags.writeable = False
        return x

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        k = np.fft.fftfreq(self.n_points, d=1.0 / self.n_points).astype(np.int64)
        k.flags.writeable = False
        return k

    @cached_property
    def freqs(self) -> np.ndarray:
        """Frequencies ``n = k / L`` in FFT order."""
        n = self.wavenumbers / self.L
        n.flags.writeable = False
        return n

    @cached_property
    def _phase(self) -> np.ndarray:
        # exp(i n pi L) = (-1)^k accounts for the nodes starting at -pi L
        ph = np.where(self.wavenumbers % 2 == 0, 1.0, -1.0)
        ph.flags.writeable = False
        return ph

    @property
    def nyquist(self) -> float:
        """Largest representable frequency ``M / (2L)``."""
        return self.n_points / (2.0 * self.L)

    def contains(self, a: float, b: float) -> bool:
        half = math.pi * self.L
        tol = 1e-12 * max(1.0, half)
        return -half - tol <= a <= b <= half + tol


def make_grid(L: float, n_points: int) -> TorusGrid:
    if not (isinstance(n_points, (int, np.integer)) and n_points >= 8 and n_points % 2 == 0):
        raise ValueError(f"n_points must be an even integer >= 8, got {n_points!r}")
    if not L > 0:
        raise ValueError(f"circumference parameter L must be positive, got {L!r}")
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L!r}")
    return TorusGrid(float(L), int(n_points))


def to_spectral(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return np.fft.fft(values, axis=-1) * (grid._phase / grid.n_points)


def from_spectral(coeffs: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return np.fft.ifft(coeffs * grid._phase, axis=-1) * grid.n_points


@dataclass(frozen=True, eq=False)
class TorusField:
    """Complex field sampled on the nodes of a torus grid (immutable)."""

    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128, copy=True)
        if v.shape != (self.grid.n_points,):
            raise ValueError(f"expected {self.grid.n_points} values, got shape {v.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: TorusGrid, func) -> "TorusField":
        return cls(grid, func(grid.nodes))

    @classmethod
    def from_coefficients(cls, grid: TorusGrid, coeffs: np.ndarray) -> "TorusField":
        return cls(grid, from_spectral(np.asarray(coeffs, dtype=np.complex128), grid))

    @cached_property
    def coefficients(self) -> np.ndarray:
        c = to_spectral(self.values, self.grid)
        c.flags.writeable = False
        return c

    def __call__(self, x) -> np.ndarray:
        return evaluate(self.values, self.grid, x)

    def __sub__(self, other: "TorusField") -> "TorusField":
        _check_same_grid(self.grid, other.grid)
        return TorusField(self.grid, self.values - other.values)

    def __add__(self, other: "TorusField") -> "TorusField":
        _check_same_grid(self.grid, other.grid)
        return TorusField(self.grid, self.values + other.values)

    def conj(self) -> "TorusField":
        return TorusField(self.grid, np.conj(self.values))

    def l2_mass(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.dx)


def _check_same_grid(a: TorusGrid, b: TorusGrid) -> None:
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


def evaluate(values: np.ndarray, grid: TorusGrid, x) -> np.ndarray:
    """Trigonometric interpolation of node values at arbitrary points ``x``.

    Exact for fields band-limited to the grid's representable frequencies.
    The Nyquist mode is split symmetrically so real inputs stay real.
    """
    x = np.asarray(x, dtype=float)
    c = to_spectral(np.asarray(values, dtype=np.complex128), grid)
    M = grid.n_points
    k = grid.wavenumbers.astype(float)
    nyq = np.flatnonzero(np.abs(grid.wavenumbers) == M // 2)
    basis = np.exp(1j * np.outer(k / grid.L, x.ravel()))
    j = nyq[0]
    basis[j] = np.cos((M // 2) / grid.L * x.ravel())
    out = c @ basis
    return out.reshape(c.shape[:-1] + x.shape)


def embed_offset(small: TorusGrid, big: TorusGrid) -> int:
    """Index of ``small``'s first node inside ``big``'s node array.

    Raises if the small grid's nodes are not a subset of the big grid's nodes.
    """
    if not math.isclose(small.dx, big.dx, rel_tol=1e-12):
        raise ValueError("grids do not embed: spacings differ")
    shift = (math.pi * big.L - math.pi * small.L) / big.dx
    off = round(shift)
    if abs(shift - off) > 1e-8 or off < 0 or off + small.n_points > big.n_points:
        raise ValueError("grids do not embed: node sets are not nested")
    return int(off)


# ---------------------------------------------------------------------------
# Littlewood-Paley symbols


def _smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    out = np.zeros_like(s)
    inner = (s > 0) & (s < 1)
    si = s[inner]
    a = np.exp(-1.0 / si)
    b = np.exp(-1.0 / (1.0 - si))
    out[inner] = a / (a + b)
    out[s >= 1] = 1.0
    return out


def smooth_cutoff(xi) -> np.ndarray:
    """Base bump: 1 on [-1, 1], 0 outside [-9/8, 9/8], C-infinity in between."""
    a = np.abs(np.asarray(xi, dtype=float))
    return _smoothstep((9.0 / 8.0 - a) / (1.0 / 8.0))


def is_dyadic(N) -> bool:
    try:
        n = float(N)
    except (TypeError, ValueError):
        return False
    if n < 1 or n != int(n):
        return False
    n = int(n)
    return n & (n - 1) == 0


def _require_dyadic(N) -> int:
    if not is_dyadic(N):
        raise ValueError(f"N must be a dyadic integer 1, 2, 4, ..., got {N!r}")
    return int(N)


def lp_symbol(xi, N) -> np.ndarray:
    """``rho_{<=N}(xi) = rho(xi / N)`` for dyadic ``N``."""
    N = _require_dyadic(N)
    return smooth_cutoff(np.asarray(xi, dtype=float) / N)


def lp_piece(xi, N) -> np.ndarray:
    """Dyadic piece ``rho_N``; ``rho_1 = rho_{<=1}``."""
    N = _require_dyadic(N)
    if N == 1:
        return lp_symbol(xi, 1)
    return lp_symbol(xi, N) - lp_symbol(xi, N // 2)


def lowpass(values: np.ndarray, grid: TorusGrid, R: float) -> np.ndarray:
    """``P_{<=R}`` for any real cutoff ``R >= 1`` (the symbol ``rho(. / R)``).

    Cutoffs past the band act as the identity since the symbol is exactly one
    on every representable frequency.
    """
    if not R >= 1:
        raise ValueError(f"cutoff must be >= 1, got {R}")
    if R >= grid.nyquist:
        return np.array(values, dtype=np.complex128, copy=True)
    sym = smooth_cutoff(grid.freqs / R)
    return from_spectral(to_spectral(values, grid) * sym, grid)


def apply_projector(u: TorusField, kind: str, N) -> TorusField:
    """Littlewood-Paley projector ``P_{<=N}`` (``kind='leq'``) or ``P_N`` (``'eq'``)."""
    N = _require_dyadic(N)
    if N > u.grid.nyquist:
        raise ValueError(f"N={N} exceeds the grid's Nyquist frequency {u.grid.nyquist}")
    if kind == "leq":
        sym = lp_symbol(u.grid.freqs, N)
    elif kind == "eq":
        sym = lp_piece(u.grid.freqs, N)
    else:
        raise ValueError(f"unknown projector kind {kind!r}")
    return TorusField(u.grid, from_spectral(u.coefficients * sym, u.grid))


def laplacian(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return from_spectral(-(grid.freqs**2) * to_spectral(values, grid), grid)


# ---------------------------------------------------------------------------
# weights and norms


def japanese(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return np.sqrt(1.0 + y * y)


def sigma_weight(x, R: float) -> np.ndarray:
    """``sigma_R(x) = exp(-<x/R>)``."""
    if not R > 0:
        raise ValueError("R must be positive")
    return np.exp(-japanese(np.asarray(x, dtype=float) / R))


def _interval_mask(grid: TorusGrid, a: float, b: float) -> np.ndarray:
    if not grid.contains(a, b):
        raise ValueError(f"interval [{a}, {b}] is outside the fundamental domain")
    x = grid.nodes
    tol = 1e-9 * grid.dx
    return (x >= a - tol) & (x <= b + tol)


def _node_values_on(values, grid, a, b):
    """Node values on [a, b] plus linearly interpolated endpoint values."""
    x = grid.nodes
    m = _interval_mask(grid, a, b)
    idx = np.flatnonzero(m)
    M = grid.n_points
    xs = [x[idx]]
    vs = [values[..., idx]]

    def lin(pt):
        j = int(math.floor((pt - x[0]) / grid.dx)) % M
        t = (pt - x[0]) / grid.dx - math.floor((pt - x[0]) / grid.dx)
        return (1 - t) * values[..., j] + t * values[..., (j + 1) % M]

    if idx.size == 0 or x[idx[0]] > a + 1e-12 * grid.dx:
        xs.insert(0, np.array([a]))
        vs.insert(0, lin(a)[..., None])
    if idx.size == 0 or x[idx[-1]] < b - 1e-12 * grid.dx:
        xs.append(np.array([b]))
        vs.append(lin(b)[..., None])
    return np.concatenate(xs), np.concatenate(vs, axis=-1)


def lp_norm(values: np.ndarray, grid: TorusGrid, p: float, interval=None) -> np.ndarray:
    """Trapezoidal ``L^p`` norm on an interval (whole torus if ``None``)."""
    values = np.asarray(values)
    if interval is None:
        return (np.sum(np.abs(values) ** p, axis=-1) * grid.dx) ** (1.0 / p)
    a, b = interval
    xs, vs = _node_values_on(values, grid, a, b)
    return np.trapezoid(np.abs(vs) ** p, xs, axis=-1) ** (1.0 / p)


def lp_loc_norm(values: np.ndarray, grid: TorusGrid, p: float, interval) -> np.ndarray:
    """Sup over node-centred unit windows of the ``L^p(I cap [x0-1, x0+1])`` norm."""
    values = np.asarray(values)
    a, b = interval
    x = grid.nodes
    m = _interval_mask(grid, a, b)
    idx = np.flatnonzero(m)
    f = np.abs(values[..., idx]) ** p
    xi = x[idx]
    # cumulative trapezoid over the nodes inside the interval
    seg = 0.5 * (f[..., 1:] + f[..., :-1]) * np.diff(xi)
    cum = np.concatenate([np.zeros(f.shape[:-1] + (1,)), np.cumsum(seg, axis=-1)], axis=-1)
    hi = np.searchsorted(xi, xi + 1.0 + 1e-9 * grid.dx, side="right") - 1
    lo = np.searchsorted(xi, xi - 1.0 - 1e-9 * grid.dx, side="left")
    vals = cum[..., hi] - cum[..., lo]
    return np.max(vals, axis=-1) ** (1.0 / p)


def c0_norm(values: np.ndarray, grid: TorusGrid, interval=None) -> np.ndarray:
    values = np.asarray(values)
    if interval is None:
        return np.max(np.abs(values), axis=-1)
    m = _interval_mask(grid, *interval)
    return np.max(np.abs(values[..., m]), axis=-1)


MAX_PAIR_OFFSETS = 4096


def calpha_norm(values: np.ndarray, grid: TorusGrid, alpha: float, interval) -> np.ndarray:
    """``C^alpha`` norm: grid sup plus max difference quotient over node pairs
    with ``0 < |x - y| <= 1``.

    When more than ``MAX_PAIR_OFFSETS`` offsets fit in a unit distance, offsets
    are subsampled geometrically (all small offsets kept).
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    values = np.asarray(values)
    m = _interval_mask(grid, *interval)
    v = values[..., m]
    n_off = int(math.floor((1.0 + 1e-9) / grid.dx))
    n_off = min(n_off, v.shape[-1] - 1)
    if n_off > MAX_PAIR_OFFSETS:
        offsets = np.unique(np.geomspace(1, n_off, MAX_PAIR_OFFSETS).astype(int))
    else:
        offsets = np.arange(1, n_off + 1)
    best = np.zeros(v.shape[:-1])
    for s in offsets:
        q = np.abs(v[..., s:] - v[..., :-s]) / (s * grid.dx) ** alpha
        best = np.maximum(best, np.max(q, axis=-1))
    return np.max(np.abs(v), axis=-1) + best


def ce_norm(values: np.ndarray, grid: TorusGrid, theta: float) -> np.ndarray:
    """``sup_x exp(-theta |x|) |u(x)|`` over the fundamental domain."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    w = np.exp(-theta * np.abs(grid.nodes))
    return np.max(w * np.abs(values), axis=-1)


def norm(u: TorusField, which: str, *, p: float = 2.0, interval=None, alpha: float = 1.0,
         theta: float = 0.25) -> float:
    """Dispatch over the supported norms: ``Lp``, ``Lp_loc``, ``C0``, ``Calpha``, ``CEtheta``."""
    v, g = u.values, u.grid
    if interval is None and which in ("Lp_loc", "Calpha"):
        interval = (-math.pi * g.L, math.pi * g.L - g.dx)
    if which == "Lp":
        return float(lp_norm(v, g, p, interval))
    if which == "Lp_loc":
        return float(lp_loc_norm(v, g, p, interval))
    if which == "C0":
        return float(c0_norm(v, g, interval))
    if which == "Calpha":
        return float(calpha_norm(v, g, alpha, interval))
    if which == "CEtheta":
        return float(ce_norm(v, g, theta))
    raise ValueError(f"unknown norm {which!r}")


def commutator_apply(Q: TorusField, u: TorusField, R) -> TorusField:
    """``[P_{<=R}, Q] u = P_{<=R}(Q u) - Q P_{<=R} u``."""
    _check_same_grid(Q.grid, u.grid)
    g = u.grid
    R = float(R)
    a = lowpass(Q.values * u.values, g, R)
    b = Q.values * lowpass(u.values, g, R)
    return TorusField(g, a - b)


def dyadic_range(n_max: float) -> Sequence[int]:
    """Dyadic integers ``1, 2, 4, ... <= n_max``."""
    out, N = [], 1
    while N <= n_max:
        out.append(N)
        N *= 2
    return out
