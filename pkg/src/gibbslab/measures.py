"""Gaussian free field and Gibbs measures on T_L, plus the estimators built on them.

Normalization
-------------
A GFF sample is ``phi = (2 pi L)^{-1/2} sum_n g_n <n>^{-1} exp(i n x)``.  The
per-mode variance ``E|g_n|^2`` is the ``variance`` field of :class:`GffSpec` and
defaults to 2 (real and imaginary parts standard normal).  With that choice the
Gaussian density is ``exp(-1/2 int |phi|^2 + |phi'|^2)``, which is the quadratic
part of the NLS Hamiltonian, so the Gibbs measure built below is invariant
under both the NLS flow and the Langevin dynamics in :mod:`gibbslab.langevin`.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import special
from scipy.optimize import linear_sum_assignment

from .spectral import (
    TorusField,
    TorusGrid,
    evaluate,
    from_spectral,
    lp_norm,
    make_grid,
)

__all__ = [
    "GffSpec",
    "GibbsSpec",
    "Ensemble",
    "TailFit",
    "MomentEstimate",
    "gff_mode_variance",
    "gff_point_variance",
    "sample_gff",
    "sample_gff_batch",
    "potential_energy",
    "log_gibbs_weight",
    "sample_gibbs_pcn",
    "window_sup",
    "tail_fit",
    "exp_moment",
    "brascamp_lieb_check",
    "extend_periodic",
    "wasserstein_1",
]


@dataclass(frozen=True)
class GffSpec:
    grid: TorusGrid
    variance: float = 2.0
    seed: int | None = None

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("per-mode variance must be positive")


@dataclass(frozen=True)
class GibbsSpec:
    """``mu_L`` with density ``exp(-strength/(p+1) int |phi|^{p+1})`` against the GFF."""

    gff: GffSpec
    p: float = 3.0
    strength: float = 1.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if self.strength < 0:
            raise ValueError("defocusing measures need a nonnegative strength")

    @property
    def grid(self) -> TorusGrid:
        return self.gff.grid

    @classmethod
    def build(cls, L: float, n_points: int, p: float = 3.0, strength: float = 1.0,
              variance: float = 2.0) -> "GibbsSpec":
        return cls(GffSpec(make_grid(L, n_points), variance), p, strength)

    def free(self) -> "GibbsSpec":
        return replace(self, strength=0.0)


@dataclass(eq=False)
class Ensemble:
    """A batch of fields on one grid, stored as an ``(n, M)`` complex array."""

    spec: GibbsSpec
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 2 or v.shape[1] != self.spec.grid.n_points:
            raise ValueError(f"values must have shape (n, {self.spec.grid.n_points}), got {v.shape}")
        self.values = v

    @property
    def grid(self) -> TorusGrid:
        return self.spec.grid

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def members(self) -> list[TorusField]:
        return [TorusField(self.grid, row) for row in self.values]

    def subsample(self, n: int, rng: np.random.Generator | None = None) -> "Ensemble":
        if n > len(self):
            raise ValueError("cannot subsample more members than present")
        idx = np.arange(n) if rng is None else np.sort(rng.choice(len(self), n, replace=False))
        return Ensemble(self.spec, self.values[idx], dict(self.provenance, subsample=n))


# ---------------------------------------------------------------------------
# Gaussian free field


def gff_mode_variance(spec: GffSpec) -> np.ndarray:
    """Closed-form ``E|phi_hat(n)|^2`` per mode, FFT order."""
    g = spec.grid
    return spec.variance / (g.length * (1.0 + g.freqs**2))


def gff_point_variance(spec: GffSpec) -> float:
    """``E|phi(x)|^2 = variance (2 pi L)^{-1} sum_n <n>^{-2}`` by direct summation."""
    g = spec.grid
    total = 0.0
    for k in range(-g.n_points // 2, g.n_points // 2):
        n = k / g.L
        total += 1.0 / (1.0 + n * n)
    return spec.variance * total / g.length


def sample_gff_batch(spec: GffSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    g = spec.grid
    M = g.n_points
    # fold the coefficient scale, node phase and inverse-FFT normalization together
    factor = np.sqrt(gff_mode_variance(spec) / 2.0) * g._phase * M
    z = rng.standard_normal((n, M, 2)).view(np.complex128)[..., 0]
    z *= factor
    return np.fft.ifft(z, axis=-1)


def sample_gff(spec: GffSpec, rng: np.random.Generator) -> TorusField:
    return TorusField(spec.grid, sample_gff_batch(spec, rng, 1)[0])


# ---------------------------------------------------------------------------
# Gibbs weight and pCN sampler


def potential_energy(values: np.ndarray, grid: TorusGrid, p: float) -> np.ndarray:
    """``(1/(p+1)) int |phi|^{p+1}`` by the periodic trapezoid rule, batched."""
    a2 = values.real**2 + values.imag**2
    h = (p + 1) / 2
    powered = a2 ** int(h) if float(h).is_integer() else a2**h
    return np.sum(powered, axis=-1) * (grid.dx / (p + 1))


def log_gibbs_weight(phi: TorusField, p: float) -> float:
    if not p > 1:
        raise ValueError("p must exceed 1")
    if not np.all(np.isfinite(phi.values)):
        raise ValueError("field contains non-finite values")
    return -float(potential_energy(phi.values, phi.grid, p))


def sample_gibbs_pcn(
    spec: GibbsSpec,
    n_samples: int,
    burn_in: int,
    step: float,
    rng: np.random.Generator,
    *,
    n_chains: int | None = None,
    thinning: int = 1,
) -> Ensemble:
    """Preconditioned Crank-Nicolson sampler for ``mu_L``, many chains in lockstep.

    Each chain starts from an exact GFF draw.  After ``burn_in`` iterations every
    ``thinning``-th state of every chain is recorded until ``n_samples`` members
    are collected.  With ``n_chains = n_samples`` (the default) each member is
    the endpoint of its own chain.
    """
    if not 0 < step <= 1:
        raise ValueError("pCN step must lie in (0, 1]")
    if n_samples < 0 or burn_in < 0 or thinning < 1:
        raise ValueError("invalid chain lengths")
    g = spec.grid
    if n_samples == 0:
        return Ensemble(spec, np.zeros((0, g.n_points), complex),
                        {"sampler": "pcn", "burn_in": burn_in, "step": step, "acceptance": float("nan")})
    n_chains = n_samples if n_chains is None else min(n_chains, n_samples)
    rounds = math.ceil(n_samples / n_chains)
    rho = math.sqrt(1.0 - step * step)

    phi = sample_gff_batch(spec.gff, rng, n_chains)
    pot = spec.strength * potential_energy(phi, g, spec.p)
    accepted = 0
    proposed = 0
    out = []
    total_iters = burn_in + (rounds - 1) * thinning + 1
    for it in range(total_iters):
        prop = rho * phi + step * sample_gff_batch(spec.gff, rng, n_chains)
        prop_pot = spec.strength * potential_energy(prop, g, spec.p)
        log_u = np.log(rng.random(n_chains))
        acc = log_u < pot - prop_pot
        phi[acc] = prop[acc]
        pot[acc] = prop_pot[acc]
        if it >= burn_in // 2:
            accepted += int(acc.sum())
            proposed += n_chains
        if it >= burn_in:
            if (it - burn_in) % thinning == 0:
                out.append(phi.copy())
    values = np.concatenate(out, axis=0)[:n_samples]
    rate = accepted / max(proposed, 1)
    if not 0.05 <= rate <= 0.95:
        warnings.warn(f"pCN acceptance rate {rate:.3f} outside [0.05, 0.95]", RuntimeWarning, stacklevel=2)
    prov = {"sampler": "pcn", "burn_in": burn_in, "thinning": thinning, "step": step,
            "n_chains": n_chains, "acceptance": rate}
    return Ensemble(spec, values, prov)


# ---------------------------------------------------------------------------
# tails and moments


def window_sup(values: np.ndarray, grid: TorusGrid, R: float) -> np.ndarray:
    """``max |phi|`` over nodes in ``[-R, R]``, batched."""
    m = np.abs(grid.nodes) <= R + 1e-9 * grid.dx
    if not m.any():
        raise ValueError(f"no nodes inside [-{R}, {R}]")
    return np.max(np.abs(values[..., m]), axis=-1)


@dataclass(frozen=True)
class TailFit:
    radii: tuple[float, ...]
    levels: tuple[float, ...]
    quantiles: np.ndarray  # shape (len(levels), len(radii))
    gamma: float
    half_width: float
    intercepts: tuple[float, ...]
    shifts: tuple[float, ...] | None = None
    at_boundary: bool = False
    quantile_se: np.ndarray | None = None  # bootstrap standard errors, same shape as quantiles

    def rows(self):
        """``(R, q, quantile, stderr)`` for every radius and level."""
        for i, q in enumerate(self.levels):
            for j, R in enumerate(self.radii):
                se = float("nan") if self.quantile_se is None else float(self.quantile_se[i, j])
                yield R, q, float(self.quantiles[i, j]), se


def _lad_common_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Least-absolute-deviation fit ``y[i, j] = a_i + g x[j]`` with one slope.

    For fixed ``g`` the best intercepts are row medians, and the objective is
    convex piecewise-linear in ``g`` with kinks at within-row pairwise slopes,
    so scanning those candidates gives the exact minimizer.
    """
    cands = []
    for row in y:
        for a in range(len(x)):
            for b in range(a + 1, len(x)):
                if x[b] != x[a]:
                    cands.append((row[b] - row[a]) / (x[b] - x[a]))
    cands = np.array(cands)

    def loss(g):
        r = y - g * x[None, :]
        return np.sum(np.abs(r - np.median(r, axis=1, keepdims=True)))

    losses = np.array([loss(g) for g in cands])
    best = cands[np.isclose(losses, losses.min(), rtol=1e-12, atol=1e-15)]
    g = float(np.median(best))
    return g, np.median(y - g * x[None, :], axis=1)


SHIFT_GRID = np.geomspace(1e-3, 1e3, 1500)
GAMMA_GRID = np.linspace(0.02, 2.0, 991)


def _shifted_common_exponent(log_r: np.ndarray, y: np.ndarray):
    """Least-squares fit ``y[i, j] = c_i + g log(log R_j + lam_i)`` with one ``g``.

    For fixed ``(g, lam_i)`` the intercept is a row mean, so the residual sum
    is a quadratic in ``g`` whose coefficients depend on ``lam_i`` only.  The
    fit profiles ``lam_i`` out on a log-spaced grid (shifts are measured from
    ``-log R_min`` so the logarithm stays defined) and scans ``g``.
    """
    lam = SHIFT_GRID - log_r.min()
    X = np.log(log_r[None, :] + lam[:, None])
    Xc = X - X.mean(axis=1, keepdims=True)
    sxx = np.sum(Xc * Xc, axis=1)
    g = GAMMA_GRID[:, None]
    total = np.zeros(len(GAMMA_GRID))
    which = []
    for row in y:
        yc = row - row.mean()
        sse = yc @ yc - 2 * g * (Xc @ yc)[None, :] + g * g * sxx[None, :]
        which.append(np.argmin(sse, axis=1))
        total += np.min(sse, axis=1)
    k = int(np.argmin(total))
    lam_hat = np.array([lam[w[k]] for w in which])
    gam = float(GAMMA_GRID[k])
    icpt = np.array([np.mean(row - gam * np.log(log_r + l)) for row, l in zip(y, lam_hat)])
    edge = k in (0, len(GAMMA_GRID) - 1) or any(
        w[k] in (0, len(lam) - 1) for w in which
    )
    return gam, icpt, lam_hat, edge


def tail_fit(
    ensemble: Ensemble,
    radii: Sequence[float],
    levels: Sequence[float] | float = (0.5, 0.9),
    *,
    shift: bool = True,
    n_boot: int = 200,
    rng: np.random.Generator | None = None,
) -> TailFit:
    """Fit the growth exponent of window-sup quantiles in ``log R``.

    With ``shift=True`` (default) the model is
    ``quantile_q(R) = a_q (log R + lam_q)^gamma``: the level-dependent shift
    ``lam_q`` is what a tail bound of the form ``P(sup > C (log R + lam)^g)
    <= exp(-c lam)`` predicts, and at radii of order ten it is comparable to
    ``log R`` itself.  ``shift=False`` drops it and fits a plain log-log line
    in ``(log log R, log quantile)`` by least absolute deviations; that
    estimator is biased low by the missing shift (Gaussian data give about 0.2
    instead of 1/2 at ``R <= 32``) and is kept for comparison.
    """
    radii = tuple(float(r) for r in radii)
    if len(radii) < 3:
        raise ValueError("need at least three radii to fit an exponent")
    if any(r <= 1 for r in radii):
        raise ValueError("radii must exceed 1 so that log log R is defined")
    g = ensemble.grid
    if max(radii) > math.pi * g.L / 2 + 1e-12:
        raise ValueError("windows must lie inside [-pi L / 2, pi L / 2]")
    if len(ensemble) < 200:
        raise ValueError("tail fits need at least 200 members")
    levels = (float(levels),) if np.isscalar(levels) else tuple(float(q) for q in levels)
    sups = np.stack([window_sup(ensemble.values, g, R) for R in radii], axis=1)
    log_r = np.log(np.array(radii))

    def fit(s):
        qs = np.quantile(s, levels, axis=0)
        # running max keeps the quantile curve nondecreasing in R exactly
        qs = np.maximum.accumulate(qs, axis=1)
        if shift:
            gam, icpt, lam, edge = _shifted_common_exponent(log_r, np.log(qs))
        else:
            gam, icpt = _lad_common_slope(np.log(log_r), np.log(qs))
            lam, edge = None, False
        return qs, gam, icpt, lam, edge

    qs, gamma, icpt, lam, edge = fit(sups)
    rng = rng or np.random.default_rng(0)
    boots, boot_q = [], []
    for _ in range(n_boot):
        idx = rng.integers(0, len(sups), len(sups))
        bq, bg = fit(sups[idx])[:2]
        boots.append(bg)
        boot_q.append(bq)
    hw = 1.96 * float(np.std(boots, ddof=1)) if n_boot > 1 else float("nan")
    qse = np.std(boot_q, axis=0, ddof=1) if n_boot > 1 else np.full_like(qs, np.nan)
    return TailFit(
        radii,
        levels,
        qs,
        gamma,
        hw,
        tuple(float(a) for a in icpt),
        None if lam is None else tuple(float(v) for v in lam),
        edge,
        qse,
    )


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    stderr: float
    reliable: bool
    top_share: float


def exp_moment(ensemble: Ensemble, beta: float, p: float, window=(-1.0, 1.0)) -> MomentEstimate:
    """Monte-Carlo ``E exp(beta ||phi||^{p+1}_{L^{p+1}(window)})``."""
    if not 0 < beta < 1.0 / (p + 1):
        raise ValueError("beta must lie in (0, 1/(p+1))")
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    norms = lp_norm(ensemble.values, ensemble.grid, p + 1, window)
    vals = np.exp(beta * norms ** (p + 1))
    n = len(vals)
    k = max(1, int(math.ceil(0.01 * n)))
    top = np.sort(vals)[-k:].sum() / vals.sum()
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return MomentEstimate(float(vals.mean()), se, bool(top <= 0.5), float(top))


# ---------------------------------------------------------------------------
# Brascamp-Lieb comparison by quadrature

GH_NODES = 64
GH_CHECK = 96
BL_TOL = 1e-4


def _rise_radius(V, Linv_T, Q, d: np.ndarray, curvature: float) -> float:
    """Smallest ``r`` with ``curvature r^2 + V(r d) - V(0) >= 1``, capped at ``curvature^{-1/2}``."""
    top = 1.0 / math.sqrt(curvature)
    radii = np.geomspace(1e-3 * top, top, 61)
    n = Linv_T.shape[0]
    v0 = float(V(np.zeros((n, 1)))[0])
    rise = curvature * radii**2 + V(Linv_T @ (Q @ np.outer(d, radii))) - v0
    hit = np.flatnonzero(rise >= 1.0)
    return float(radii[hit[0]]) if hit.size else top


def _bl_width(V, Linv_T, Q) -> float:
    """Length scale (at most 1) on which ``|y|^2 + V`` rises by one unit.

    A strong potential concentrates the integrand well inside the bulk of the
    Hermite nodes; shrinking the nodes by this factor keeps it resolved.
    """
    n = Linv_T.shape[0]
    dirs = [np.eye(n)[i] for i in range(n)]
    dirs += [np.array(sg) / math.sqrt(n) for sg in itertools.product((-1.0, 1.0), repeat=n)]
    return min(_rise_radius(V, Linv_T, Q, d, 1.0) for d in dirs)


def _bl_quadrature(n_nodes, V, Linv_T, Q, scale, q, beta, width=1.0):
    """Ratio ``int h(y1) exp(-|y|^2 - V(phi)) / int exp(-|y|^2 - V(phi))``.

    Coordinates: ``phi = Linv_T z`` with ``A = L L^T`` and ``z = Q y`` rotated so
    that ``f(phi) = scale * y_1``.  The first axis carries the non-smooth or
    growing factor of ``h`` inside its quadrature weight.  Nodes are placed
    at ``width * t`` for Hermite (or Laguerre) nodes ``t``, and the weights
    absorb the change of Gaussian factor.
    """
    n = Linv_T.shape[0]
    s = float(width)
    xh, wh = special.roots_hermite(n_nodes)
    # int g(y) e^{-y^2} dy = int g(s t) s e^{(1 - s^2) t^2} e^{-t^2} dt
    yh, ww = s * xh, s * wh * np.exp((1.0 - s * s) * xh * xh)
    if n > 1:
        pts = np.meshgrid(*([yh] * (n - 1)), indexing="ij")
        wts = np.meshgrid(*([ww] * (n - 1)), indexing="ij")
        rest_pts = np.stack([r.ravel() for r in pts], axis=0)
        rest_w = np.prod(np.stack([r.ravel() for r in wts], axis=0), axis=0)
    else:
        rest_pts = np.zeros((0, 1))
        rest_w = np.ones(1)

    def integrate(y1, w1):
        # integral of sum_i w1_i * g(y1_i, rest) against rest weights, g = exp(-V)
        total = 0.0
        for a, wa in zip(y1, w1):
            Y = np.vstack([np.full(rest_pts.shape[1], a), rest_pts])
            phi = Linv_T @ (Q @ Y)
            total += wa * np.dot(rest_w, np.exp(-V(phi)))
        return total

    z_norm = integrate(yh, ww)
    if beta is None:
        # |y1|^q e^{-y1^2}: symmetrize and substitute y1 = s sqrt(t) (generalized Laguerre)
        a = (q - 1.0) / 2.0
        xt, wt = special.roots_genlaguerre(n_nodes, a)
        y = s * np.sqrt(xt)
        wq = s ** (q + 1) * wt * np.exp((1.0 - s * s) * xt)
        num = 0.5 * (integrate(y, wq) + integrate(-y, wq))
        return scale**q * num / z_norm
    # exp(beta f^2) e^{-y1^2} = exp(-c y1^2) with c = 1 - beta scale^2
    c = 1.0 - beta * scale**2
    if not c > 0:
        return float("inf")
    # first-axis nodes y1 = s1 t, with s1 the scale on which c y1^2 + V rises by one
    e1 = np.eye(n)[0]
    s1 = min(_rise_radius(V, Linv_T, Q, e1, c), _rise_radius(V, Linv_T, Q, -e1, c))
    return integrate(s1 * xh, s1 * wh * np.exp((1.0 - c * s1 * s1) * xh * xh)) / z_norm


def brascamp_lieb_check(
    V: Callable[[np.ndarray], np.ndarray],
    A: np.ndarray,
    f: np.ndarray,
    *,
    q: float | None = None,
    beta: float | None = None,
) -> tuple[float, float]:
    """Both sides of the Brascamp-Lieb comparison for ``mu ~ exp(-<x, A x> - V(x))``.

    Exactly one of ``q`` (moment form ``E|f|^q``) or ``beta`` (exponential form
    ``E exp(beta f^2)``) must be given.  ``V`` maps an ``(n, k)`` array of points
    to ``k`` values.  The left side is computed by quadrature (checked at two
    node counts), the right side in closed form for the Gaussian ``exp(-<x, A x>)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    f = np.atleast_1d(np.asarray(f, dtype=float))
    n = A.shape[0]
    if n > 4:
        raise ValueError("quadrature limited to n <= 4")
    if (q is None) == (beta is None):
        raise ValueError("give exactly one of q or beta")
    if q is not None and q < 1:
        raise ValueError("q must be >= 1")
    if beta is not None and not beta > 0:
        raise ValueError("beta must be positive")
    Lc = np.linalg.cholesky(A)
    Linv_T = np.linalg.inv(Lc).T
    b = np.linalg.solve(Lc, f)  # f(phi) = b . z
    scale = float(np.linalg.norm(b))
    # orthogonal Q with first column b/|b|
    M0 = np.eye(n)
    M0[:, 0] = b / scale if scale > 0 else M0[:, 0]
    Q, _ = np.linalg.qr(M0)
    if Q[:, 0] @ b < 0:
        Q[:, 0] = -Q[:, 0]

    sigma2 = float(f @ np.linalg.solve(2.0 * A, f))
    if q is not None:
        rhs = sigma2 ** (q / 2) * 2 ** (q / 2) * special.gamma((q + 1) / 2) / math.sqrt(math.pi)
    else:
        rhs = (1.0 - 2.0 * beta * sigma2) ** -0.5 if 2 * beta * sigma2 < 1 else float("inf")

    width = _bl_width(V, Linv_T, Q)
    lhs = _bl_quadrature(GH_NODES, V, Linv_T, Q, scale, q, beta, width)
    check = _bl_quadrature(GH_CHECK, V, Linv_T, Q, scale, q, beta, width)
    if math.isfinite(lhs) and abs(lhs - check) > BL_TOL * max(1.0, abs(check)):
        raise ArithmeticError(f"quadrature not converged: {lhs} vs {check}")
    return float(check), float(rhs)


# ---------------------------------------------------------------------------
# Wasserstein distance


def extend_periodic(values: np.ndarray, small: TorusGrid, big: TorusGrid) -> np.ndarray:
    """Values of a ``small``-periodic field at the nodes of ``big``.

    When the spacings match the nodes are copied by index; otherwise the
    trigonometric interpolant is evaluated at the wrapped points.
    """
    if small == big:
        return np.asarray(values)
    x = big.nodes
    per = small.length
    if math.isclose(small.dx, big.dx, rel_tol=1e-12):
        idx = np.rint((np.mod(x + math.pi * small.L, per)) / small.dx).astype(int) % small.n_points
        return np.asarray(values)[..., idx]
    return evaluate(values, small, np.mod(x + math.pi * small.L, per) - math.pi * small.L)


def _sinkhorn_log(C: np.ndarray, eps: float, n_iter: int = 2000, tol: float = 1e-9) -> float:
    m = C.shape[0]
    loga = np.full(m, -math.log(m))
    f = np.zeros(m)
    g = np.zeros(m)
    K = -C / eps
    for _ in range(n_iter):
        f_new = -eps * special.logsumexp(K + g[None, :] / eps + loga[None, :], axis=1)
        g = -eps * special.logsumexp(K + f_new[:, None] / eps + loga[:, None], axis=0)
        if np.max(np.abs(f_new - f)) < tol:
            f = f_new
            break
        f = f_new
    P = np.exp(K + f[:, None] / eps + g[None, :] / eps + 2 * loga[0])
    return float(np.sum(P * C))


@dataclass(frozen=True)
class W1Result:
    value: float
    exact: bool
    regularization: float | None
    m: int


def ce_cost_matrix(A: Ensemble, B: Ensemble, theta: float) -> np.ndarray:
    """Pairwise ``||a_i - b_j||_{CE^theta}`` on the larger torus (smaller fields extended)."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    ga, gb = A.grid, B.grid
    big = ga if ga.L >= gb.L else gb
    va = extend_periodic(A.values, ga, big)
    vb = extend_periodic(B.values, gb, big)
    w = np.exp(-theta * np.abs(big.nodes))
    C = np.empty((len(va), len(vb)))
    for i in range(len(va)):
        C[i] = np.max(w * np.abs(va[i][None, :] - vb), axis=-1)
    return C


def w1_from_costs(C: np.ndarray, *, exact_limit: int = 256, sinkhorn_eps: float | None = None) -> W1Result:
    """Optimal-transport cost between two uniform empirical measures of equal size."""
    m = C.shape[0]
    if C.shape != (m, m) or m == 0:
        raise ValueError("need a nonempty square cost matrix")
    if m <= exact_limit:
        r, c = linear_sum_assignment(C)
        return W1Result(float(C[r, c].mean()), True, None, m)
    eps = sinkhorn_eps if sinkhorn_eps is not None else 0.01 * float(np.median(C))
    return W1Result(_sinkhorn_log(C, eps), False, eps, m)


def wasserstein_1(A: Ensemble, B: Ensemble, theta: float, *, exact_limit: int = 256,
                  sinkhorn_eps: float | None = None, rng: np.random.Generator | None = None) -> W1Result:
    """Empirical ``W_1`` with ground cost ``||phi - psi||_{CE^theta}``.

    Ensembles on different tori are compared on the larger torus with the
    smaller field extended periodically.  Unequal sizes are subsampled to the
    smaller one.  Up to ``exact_limit`` members the assignment problem is
    solved exactly; above it an entropic (Sinkhorn) value is returned and
    flagged as inexact.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    m = min(len(A), len(B))
    if m == 0:
        raise ValueError("empty ensemble")
    rng = rng or np.random.default_rng(0)
    if len(A) > m:
        A = A.subsample(m, rng)
    if len(B) > m:
        B = B.subsample(m, rng)
    return w1_from_costs(ce_cost_matrix(A, B, theta), exact_limit=exact_limit, sinkhorn_eps=sinkhorn_eps)
