"""Differences of solutions living on two volumes, ``w = u_L - u_{L/2}``.

The two fields live on different tori, so every comparison happens on a
window inside the smaller fundamental domain.  Projections ``P_{<=R}`` are taken
on each torus in its own Fourier basis before differencing.

Arrays may carry leading axes (ensemble members, time slices); the last axis is
always space.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .spectral import (
    TorusGrid,
    evaluate,
    from_spectral,
    lowpass,
    sigma_weight,
    smooth_cutoff,
    to_spectral,
)

__all__ = [
    "WindowPair",
    "make_window_pair",
    "q_coefficients",
    "q_coefficients_values",
    "q_coefficients_quadrature",
    "factorization_residual",
    "I0_CONSTANT",
    "mr_window",
    "MassValue",
    "mass_MR",
    "MassTrace",
    "gronwall_exponent",
    "gronwall_envelope",
    "minimal_A2",
    "IterationSchedule",
    "iterated_schedule",
    "GoodEventParams",
    "good_event_check",
    "residual_check",
]


# 2 K_1(1): the integral of exp(-<y>) over the real line
I0_CONSTANT = 1.2016708618

TRUNCATION_TOL = 1e-6


@dataclass(frozen=True)
class WindowPair:
    """``u_big`` on ``T_L`` and ``u_small`` on ``T_{L/2}``, compared on ``window``."""

    u_big: np.ndarray
    u_small: np.ndarray
    grid_big: TorusGrid
    grid_small: TorusGrid
    window: tuple[float, float]

    @property
    def points(self) -> np.ndarray:
        """Common evaluation points: nodes of the smaller torus inside the window."""
        x = self.grid_small.nodes
        a, b = self.window
        return x[(x >= a - 1e-9) & (x <= b + 1e-9)]

    @property
    def big_on_window(self) -> np.ndarray:
        return _eval_on(self.u_big, self.grid_big, self.points)

    @property
    def small_on_window(self) -> np.ndarray:
        return _eval_on(self.u_small, self.grid_small, self.points)

    @property
    def w(self) -> np.ndarray:
        return self.big_on_window - self.small_on_window

    def slice(self, index) -> "WindowPair":
        return WindowPair(self.u_big[index], self.u_small[index], self.grid_big, self.grid_small, self.window)


def _node_indices(grid: TorusGrid, x: np.ndarray) -> np.ndarray | None:
    """Indices of ``x`` among the grid nodes, or ``None`` if some point is off-grid."""
    j = (x - grid.nodes[0]) / grid.dx
    jr = np.rint(j)
    if np.all(np.abs(j - jr) < 1e-8) and np.all((jr >= 0) & (jr < grid.n_points)):
        return jr.astype(int)
    return None


def _eval_on(values: np.ndarray, grid: TorusGrid, x: np.ndarray) -> np.ndarray:
    idx = _node_indices(grid, x)
    if idx is not None:
        return np.asarray(values)[..., idx]
    return evaluate(values, grid, x)


def make_window_pair(u_L: np.ndarray, u_half: np.ndarray, grid_L: TorusGrid, grid_half: TorusGrid,
                     window: tuple[float, float]) -> WindowPair:
    if not math.isclose(grid_half.L * 2, grid_L.L, rel_tol=1e-12):
        raise ValueError("the smaller torus must have half the circumference")
    a, b = window
    half = math.pi * grid_half.L
    if a > b or a < -half - 1e-12 or b > half + 1e-12:
        raise ValueError(f"window {window} exceeds the smaller fundamental domain [-{half}, {half}]")
    return WindowPair(np.asarray(u_L, dtype=np.complex128), np.asarray(u_half, dtype=np.complex128),
                      grid_L, grid_half, (float(a), float(b)))


# ---------------------------------------------------------------------------
# Q coefficients


def _poly_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of polynomials in theta stored along the first axis (ascending powers)."""
    out = np.zeros((a.shape[0] + b.shape[0] - 1,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]),
                   dtype=np.result_type(a, b))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i + j] = out[i + j] + a[i] * b[j]
    return out


def _poly_pow(a: np.ndarray, k: int) -> np.ndarray:
    out = np.ones((1,) + a.shape[1:], dtype=a.dtype)
    for _ in range(k):
        out = _poly_mul(out, a)
    return out


def _poly_integral01(c: np.ndarray) -> np.ndarray:
    w = 1.0 / np.arange(1, c.shape[0] + 1)
    return np.tensordot(w, c, axes=(0, 0))


def _dF(z: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Wirtinger derivatives of ``F(z, zbar) = |z|^{p-1} z``."""
    a2 = z.real**2 + z.imag**2
    h = (p - 1) / 2
    dz = (p + 1) / 2 * np.where(a2 > 0, a2, 0.0) ** h
    with np.errstate(divide="ignore", invalid="ignore"):
        # |z|^{p-3} z^2 = |z|^{p-1} (z / |z|)^2, continuous with value 0 at z = 0
        phase2 = np.where(a2 > 0, z * z / np.where(a2 > 0, a2, 1.0), 0.0)
    dzbar = h * np.where(a2 > 0, a2, 0.0) ** h * phase2
    return dz, dzbar


def q_coefficients_quadrature(u_big: np.ndarray, u_small: np.ndarray, p: float,
                              n_nodes: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre evaluation of the theta-integrals defining ``Q^+`` and ``Q^-``."""
    x, wts = np.polynomial.legendre.leggauss(n_nodes)
    th = 0.5 * (x + 1.0)
    wts = 0.5 * wts
    w = u_big - u_small
    qp = np.zeros(np.shape(w), dtype=np.complex128)
    qm = np.zeros(np.shape(w), dtype=np.complex128)
    for t, c in zip(th, wts):
        dz, dzb = _dF(u_small + t * w, p)
        qp += c * dz
        qm += c * dzb
    return qp, qm


def q_coefficients(pair: WindowPair, p: float) -> tuple[np.ndarray, np.ndarray]:
    """``(Q^+, Q^-)`` on the pair's window, so ``Q^+ w + Q^- conj(w) = F(u_L) - F(u_{L/2})``."""
    return q_coefficients_values(pair.big_on_window, pair.small_on_window, p)


def q_coefficients_values(a: np.ndarray, b: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    """``Q^+`` and ``Q^-`` from values ``a = u_L`` and ``b = u_{L/2}`` at common points.

    For odd integer ``p`` the theta-integrand is a polynomial in theta and is
    integrated exactly from its coefficients; otherwise Gauss-Legendre is used.
    """
    a, b = np.asarray(a), np.asarray(b)
    if not p >= 3:
        raise ValueError("q coefficients need p >= 3")
    if not (float(p).is_integer() and int(p) % 2 == 1):
        return q_coefficients_quadrature(a, b, p)
    m = (int(p) - 1) // 2
    w = a - b
    z = np.stack([b, w])                 # z(theta) = b + theta w
    zb = np.stack([np.conj(b), np.conj(w)])
    zz = _poly_mul(z, zb)                # |z(theta)|^2 as a real-coefficient polynomial
    qp = (m + 1) * _poly_integral01(_poly_pow(zz, m))
    qm = m * _poly_integral01(_poly_mul(_poly_pow(zz, m - 1), _poly_mul(z, z)))
    return qp, qm


def factorization_residual(pair: WindowPair, p: float) -> float:
    """Sup over the window of ``|Q^+ w + Q^- conj(w) - (F(u_L) - F(u_{L/2}))|``."""
    a, b = pair.big_on_window, pair.small_on_window
    qp, qm = q_coefficients_values(a, b, p)
    w = a - b

    def F(z):
        a2 = z.real**2 + z.imag**2
        return np.where(a2 > 0, a2, 0.0) ** ((p - 1) / 2) * z

    r = qp * w + qm * np.conj(w) - (F(a) - F(b))
    return float(np.max(np.abs(r))) if r.size else 0.0


# ---------------------------------------------------------------------------
# weighted, frequency-truncated mass


def mr_window(R: float, grid_small: TorusGrid) -> float:
    return min(20.0 * R, 0.9 * math.pi * grid_small.L)


@dataclass(frozen=True)
class MassValue:
    value: float
    truncation: float
    x_max: float


def _project(values: np.ndarray, grid: TorusGrid, R: float) -> np.ndarray:
    return lowpass(values, grid, R)


def mass_MR(pair: WindowPair | np.ndarray, R: float, grid: TorusGrid | None = None, *,
            strict: bool = True, allow_small_R: bool = False, report: bool = False):
    """``int |P_{<=R} w|^2 sigma_R dx`` over ``[-X_max, X_max]``.

    ``P_{<=R}`` is applied on each torus before differencing.  A bare array on
    one ``grid`` is also accepted (then ``w`` is that field).  The tail outside
    the integration window is estimated by ``sigma_R(X_max) sup|P w|^2 (width)``
    where ``width`` is the length of the discarded part of the smaller torus; in
    strict mode an estimate above ``1e-6`` of the value raises.
    """
    if not allow_small_R and R < 10:
        raise ValueError("R below 10 is outside the calibrated range of the weight; pass allow_small_R=True")
    if R < 1:
        raise ValueError("R must be >= 1")
    if isinstance(pair, WindowPair):
        gs = pair.grid_small
        X = mr_window(R, gs)
        xs = gs.nodes
        xi = xs[np.abs(xs) <= X + 1e-9]
        pb = _eval_on(_project(pair.u_big, pair.grid_big, R), pair.grid_big, xi)
        ps = _eval_on(_project(pair.u_small, gs, R), gs, xi)
        pw = pb - ps
        dx = gs.dx
        domain_half = math.pi * gs.L
    else:
        if grid is None:
            raise ValueError("a grid is required for a bare field")
        X = min(20.0 * R, 0.9 * math.pi * grid.L)
        m = np.abs(grid.nodes) <= X + 1e-9
        xi = grid.nodes[m]
        pw = _project(np.asarray(pair), grid, R)[..., m]
        dx = grid.dx
        domain_half = math.pi * grid.L
    sig = sigma_weight(xi, R)
    dens = (pw.real**2 + pw.imag**2) * sig
    # trapezoid on the node segment [xi[0], xi[-1]]
    val = (np.sum(dens, axis=-1) - 0.5 * (dens[..., 0] + dens[..., -1])) * dx
    sup2 = np.max(pw.real**2 + pw.imag**2, axis=-1)
    width = max(2.0 * (domain_half - X), 0.0) if X < 20.0 * R else 0.0
    trunc = float(sigma_weight(X, R)) * sup2 * width
    if strict:
        bad = np.asarray(trunc > TRUNCATION_TOL * np.maximum(val, 1e-300)) & np.asarray(trunc > 0)
        if np.any(bad):
            raise ValueError(
                f"sigma_R tail beyond X_max={X:.3g} is not negligible (estimate {np.max(trunc):.3g}); "
                "use a larger torus or strict=False")
    if report:
        return MassValue(val, trunc, X) if np.ndim(val) else MassValue(float(val), float(trunc), X)
    return val if np.ndim(val) else float(val)


# ---------------------------------------------------------------------------
# Gronwall envelope and the iterated schedule


def gronwall_exponent(p: float) -> float:
    return 2.0 * (p - 1.0) / (p + 3.0)


@dataclass
class MassTrace:
    R: float
    times: np.ndarray
    values: np.ndarray
    envelope: np.ndarray | None = None
    good: np.ndarray | None = None
    truncation: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0):
            raise ValueError("M_R values must be nonnegative")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "M_R", "envelope", "good_event_flag"])
            for i, t in enumerate(self.times):
                env = "" if self.envelope is None else repr(float(self.envelope[i]))
                good = "" if self.good is None else int(bool(self.good[i] if np.ndim(self.good) else self.good))
                wr.writerow([repr(float(t)), repr(float(self.values[i])), env, good])


def _envelope(times, m0, A2, t0, T, R, delta, p):
    lg = math.log(T + R)
    return np.exp(A2 * lg ** gronwall_exponent(p) * np.abs(times - t0)) * (
        m0 + A2 * R ** (-1 + 8 * delta) * lg**p)


def gronwall_envelope(trace: MassTrace, A2: float, t0: float, T: float, R: float, delta: float,
                      p: float) -> tuple[np.ndarray, bool]:
    """Envelope on the trace's times and whether the trace stays below it."""
    if len(trace.times) == 0:
        raise ValueError("empty trace")
    if t0 < trace.times.min() - 1e-12 or t0 > trace.times.max() + 1e-12:
        raise ValueError("t0 must lie inside the trace")
    i0 = int(np.argmin(np.abs(trace.times - t0)))
    env = _envelope(trace.times, trace.values[i0], A2, t0, T, R, delta, p)
    trace.envelope = env
    return env, bool(np.all(trace.values <= env * (1 + 1e-12)))


def minimal_A2(trace: MassTrace, t0: float, T: float, R: float, delta: float, p: float,
               hi: float = 1e3) -> float:
    """Smallest ``A2`` for which the trace stays below the envelope (bisection)."""
    i0 = int(np.argmin(np.abs(trace.times - t0)))
    m0 = trace.values[i0]

    def ok(a):
        env = _envelope(trace.times, m0, a, t0, T, R, delta, p)
        return bool(np.all(trace.values <= env * (1 + 1e-12)))

    if ok(0.0):
        return 0.0
    if not ok(hi):
        return float("inf")
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class IterationSchedule:
    J: int
    T: float
    tau: float
    tau0: float
    radii: list[float]   # R_J, R_{J-1}, ..., R_0
    A2: float
    A3: float
    leg_times: list[tuple[float, float]] = field(default_factory=list)

    def radius(self, j: int) -> float:
        """``R_j`` for ``0 <= j <= J``."""
        return self.radii[self.J - j]

    def leg_bound(self, j: int) -> float:
        return self.A3 ** (j + 1) * self.radius(j) ** -0.5

    def final_bound(self) -> float:
        return self.A3 ** (self.J + 2) * self.radius(self.J) ** -0.5

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def iterated_schedule(R: float, T: float, J: int, A2: float, A3: float, *, tau0: float | None = None,
                      delta: float = 0.01) -> IterationSchedule:
    """Radii ``R_J = R``, ``R_{j-1} = R_j^2`` and leg times ``t_j = j tau``.

    ``tau0`` defaults to the value making ``-1 + 8 delta + 2 A2 tau0 = -1/2``.
    """
    if J < 0:
        raise ValueError("J must be >= 0")
    if T > R:
        raise ValueError("the schedule assumes T <= R")
    if tau0 is None:
        tau0 = (0.5 - 8 * delta) / (2 * A2) if A2 > 0 else float("inf")
    tau = T / J if J > 0 else T
    if J > 0 and tau > tau0 * (1 + 1e-12):
        need = math.ceil(T / tau0)
        raise ValueError(f"tau = {tau:.4g} exceeds tau0 = {tau0:.4g}; need J >= {need}")
    radii = [float(R)]
    for _ in range(J):
        radii.append(radii[-1] ** 2)
    legs = [(0.0, 0.0)] + [((j - 1) * tau, j * tau) for j in range(1, J + 1)]
    return IterationSchedule(J, T, tau, tau0, radii, A2, A3, legs)


# ---------------------------------------------------------------------------
# good event


@dataclass(frozen=True)
class GoodEventParams:
    A0: float
    delta: float
    T: float
    R: float
    p: float = 3.0

    def __post_init__(self):
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 1/2)")
        if not (self.A0 > 0 and self.T > 0 and self.R > 0):
            raise ValueError("thresholds must be positive")


def _witnesses(u: np.ndarray, grid: TorusGrid, prm: GoodEventParams) -> tuple[float, float]:
    """Attained maxima of both weighted sups for one field history ``u[..., t, x]``."""
    lg = np.log(prm.T + prm.R + np.sqrt(1 + grid.nodes**2))
    w1 = float(np.max(np.abs(u) * lg ** (-2.0 / (prm.p + 3)))) if u.size else 0.0
    c = to_spectral(u, grid)
    w2 = 0.0
    N = 1
    nyq = grid.nyquist
    while N <= nyq:
        high = from_spectral(c * (1.0 - smooth_cutoff(grid.freqs / N)), grid)
        w2 = max(w2, N ** (0.5 - prm.delta) * float(np.max(np.abs(high) * lg ** -0.5)))
        N *= 2
    return w1, w2


def good_event_check(pair: WindowPair, params: GoodEventParams) -> tuple[bool, dict]:
    """Both conditions of the good event on the supplied time slices.

    The sups run over each field's own fundamental domain (the torus stands in
    for the real line) and over every leading axis of the stored arrays.
    """
    out = {}
    for name, u, g in (("big", pair.u_big, pair.grid_big), ("small", pair.u_small, pair.grid_small)):
        out[name] = _witnesses(np.asarray(u), g, params)
    sup_w = max(out["big"][0], out["small"][0])
    high_w = max(out["big"][1], out["small"][1])
    ok = sup_w <= params.A0 and high_w <= params.A0
    return ok, {"sup": sup_w, "high": high_w}


# ---------------------------------------------------------------------------


def residual_check(pair0: WindowPair, pair1: WindowPair, p: float, dt: float) -> float:
    """Sup of ``i d_t w + w_xx - Q^+ w - Q^- conj(w)`` at the midpoint of two slices.

    The time derivative is the centered difference over ``dt`` and the other
    terms are averaged over the two slices, so a smooth solution gives an
    ``O(dt^2)`` residual.  ``w_xx`` is computed spectrally on each torus.
    """
    if pair1 is None:
        raise ValueError("two time slices are required")
    if not dt > 0:
        raise ValueError("dt must be positive")

    def lap_w(pr: WindowPair):
        lb = from_spectral(-(pr.grid_big.freqs**2) * to_spectral(pr.u_big, pr.grid_big), pr.grid_big)
        ls = from_spectral(-(pr.grid_small.freqs**2) * to_spectral(pr.u_small, pr.grid_small), pr.grid_small)
        return _eval_on(lb, pr.grid_big, pr.points) - _eval_on(ls, pr.grid_small, pr.points)

    def rhs(pr: WindowPair):
        a, b = pr.big_on_window, pr.small_on_window
        qp, qm = q_coefficients_values(a, b, p)
        w = a - b
        return qp * w + qm * np.conj(w)

    w0, w1 = pair0.w, pair1.w
    res = 1j * (w1 - w0) / dt + 0.5 * (lap_w(pair0) + lap_w(pair1)) - 0.5 * (rhs(pair0) + rhs(pair1))
    return float(np.max(np.abs(res))) if res.size else 0.0
