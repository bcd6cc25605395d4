"""Couplings of Gibbs measures across volumes.

Two constructions live here.

* The grid-cell construction: fields are discretized by the floor of their
  real and imaginary parts at a few grid points, and an approximating field is
  drawn from the same cell as the target with probability ``1 - eps``.  The
  remaining mass is spent on a correction mixture that makes the second
  marginal exact.  Everything is done at the empirical level, on two finite
  ensembles.
* The shared-noise Langevin coupling: two Langevin flows on nested tori driven
  by the same white noise away from the boundary of the smaller torus.

Both feed :func:`coupling_quality`, the probability that the two fields of a
pair differ by more than ``L^{-eta}`` in sup norm on ``[-L^eta, L^eta]``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .langevin import LangevinConfig, _Stepper, physical_noise
from .measures import Ensemble, GibbsSpec, extend_periodic, sample_gff_batch
from .spectral import TorusField, TorusGrid, ce_norm, embed_offset, evaluate, make_grid

BAD = None


@dataclass(frozen=True)
class SkorokhodParams:
    L: float
    eta: float
    alpha: float
    beta: float
    kappa: float
    theta: float
    rate: float
    R: float
    K: int
    delta: float
    eps: float
    eps_tilde: float
    M: float
    J: int
    tau: float

    @property
    def nodes(self) -> np.ndarray:
        """Grid points ``k delta`` for ``k = -K..K``; the endpoints are exactly ``+-R``."""
        k = np.arange(-self.K, self.K + 1)
        x = k * self.delta
        x[0], x[-1] = -self.R, self.R
        return x

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def grid_values(values: np.ndarray, grid: TorusGrid, params: SkorokhodParams) -> np.ndarray:
    """Field values at the coupling grid points, shape ``(..., 2K + 1)``."""
    return evaluate(values, grid, params.nodes)


def _box_max(z: np.ndarray) -> np.ndarray:
    return np.maximum(np.abs(z.real), np.abs(z.imag)).max(axis=-1)


def derive_params(L: float, eta: float, alpha: float, beta: float, kappa: float, theta: float,
                  rate: float, target: Ensemble, *, L0: float = 1.0) -> SkorokhodParams:
    """Parameter cascade of the grid-cell coupling at volume ``L``.

    ``M`` is the empirical ``(1 - eps_tilde)`` quantile of the largest real
    or imaginary coordinate at the grid points, which is the finite-sample
    version of choosing ``M`` so that the target puts mass ``eps_tilde``
    outside the box.
    """
    for name, v in (("eta", eta), ("alpha", alpha), ("beta", beta), ("kappa", kappa),
                    ("theta", theta), ("rate", rate)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    if alpha > 1 or kappa > 1:
        raise ValueError("alpha and kappa must not exceed 1")
    if L < L0:
        raise ValueError(f"L = {L} is below the floor L0 = {L0}")
    if len(target) == 0:
        raise ValueError("target ensemble is empty")
    R = L**eta
    # the 1e-9 guard keeps exact powers such as 1024^0.5 from rounding up
    K = int(math.ceil(R * L ** (2 * eta / alpha) - 1e-9))
    delta = R / K
    eps = math.exp(-rate * kappa * L**beta / 16.0)
    n = len(target)
    if eps < (1.0 - 1e-9) / n:
        raise ValueError(
            f"eps_tilde = {eps:.3g} is below the ensemble resolution 1/{n}; "
            "use a larger ensemble or a smaller L")
    partial = SkorokhodParams(L, eta, alpha, beta, kappa, theta, rate, R, K, delta, eps, eps,
                              1.0, 1, 1.0)
    box = _box_max(grid_values(target.values, target.grid, partial))
    M = float(np.quantile(box, 1.0 - eps))
    J = int(math.ceil(8 * L**eta * M))
    return SkorokhodParams(L, eta, alpha, beta, kappa, theta, rate, R, K, delta, eps, eps,
                           M, J, M / J)


def cell_indices(values: np.ndarray, grid: TorusGrid, params: SkorokhodParams):
    """Lattice indices ``(n, 2K + 1, 2)`` and a bad mask ``(n,)`` for a batch of fields."""
    z = np.atleast_2d(grid_values(values, grid, params))
    bad = _box_max(z) > params.M
    idx = np.stack([np.floor(z.real / params.tau), np.floor(z.imag / params.tau)], axis=-1)
    idx = np.clip(idx, -params.J, params.J).astype(np.int32)
    return idx, bad


def assign_cell(phi: TorusField, params: SkorokhodParams):
    """Cell key of one field (a tuple of lattice indices) or ``BAD``."""
    idx, bad = cell_indices(phi.values[None, :], phi.grid, params)
    return BAD if bad[0] else tuple(idx[0].ravel().tolist())


def _keys(values: np.ndarray, grid: TorusGrid, params: SkorokhodParams) -> list:
    idx, bad = cell_indices(values, grid, params)
    flat = idx.reshape(len(idx), -1)
    return [BAD if b else row.tobytes() for row, b in zip(flat, bad)]


def cell_point(key, params: SkorokhodParams) -> np.ndarray:
    """Lower-left lattice corner ``z_k`` of a cell key, as complex values."""
    if isinstance(key, bytes):
        key = np.frombuffer(key, dtype=np.int32)
    a = np.asarray(key, dtype=float).reshape(-1, 2)
    return params.tau * (a[:, 0] + 1j * a[:, 1])


@dataclass(frozen=True)
class CoupledPair:
    target: TorusField
    approx: TorusField
    branch: str  # "cell", "bad" or "refresh"
    cell: bytes | None = None
    target_index: int = -1
    approx_index: int = -1


@dataclass
class CouplingReport:
    pairs: list[CoupledPair]
    params: SkorokhodParams | None
    n_good_cells: int = 0
    fallbacks: int = 0
    clip_mass: float = 0.0
    branch_counts: dict = field(default_factory=dict)

    def grid_gaps(self) -> np.ndarray:
        """``max_k |phi(x_k) - phi_L(x_k)|`` for every pair."""
        if not self.pairs:
            return np.zeros(0)
        a = np.stack([p.target.values for p in self.pairs])
        b = np.stack([p.approx.values for p in self.pairs])
        za = grid_values(a, self.pairs[0].target.grid, self.params)
        zb = grid_values(b, self.pairs[0].approx.grid, self.params)
        return np.max(np.abs(za - zb), axis=-1)

    def approx_values(self) -> np.ndarray:
        return np.stack([p.approx.values for p in self.pairs])

    def target_values(self) -> np.ndarray:
        return np.stack([p.target.values for p in self.pairs])

    def rows(self):
        for i, pr in enumerate(self.pairs):
            yield i, pr.target_index, pr.approx_index, pr.branch


def build_coupling(target: Ensemble, approx: Ensemble, params: SkorokhodParams,
                   rng: np.random.Generator, *, eps: float | None = None) -> CouplingReport:
    """Empirical grid-cell coupling of ``target`` (law ``mu``) and ``approx`` (law ``mu_L``).

    For each target member a uniform ``U`` decides the branch.  If
    ``U <= 1 - eps``, a good-cell member is paired with a uniform approx member
    of the same cell and a bad member with a uniform bad approx member.
    Otherwise the approx member comes from the correction mixture, whose
    branch weights are ``max(mu_L(A) - (1 - eps) mu(A), 0)`` over the good
    cells and the bad set.  Negative weights are a finite-sample effect.  They
    are clipped and the clipped mass is reported.  A good cell with no approx
    members falls back to the bad branch and is counted.

    ``eps`` overrides ``params.eps`` (``eps = 1`` sends everything through the
    correction mixture).
    """
    eps = params.eps if eps is None else float(eps)
    if not 0 <= eps <= 1:
        raise ValueError("eps must lie in [0, 1]")
    n_t, n_a = len(target), len(approx)
    need = 1.0 / params.eps_tilde
    if min(n_t, n_a) < need * (1 - 1e-9):
        raise ValueError(f"ensembles need at least {math.ceil(need)} members each")

    kt = _keys(target.values, target.grid, params)
    ka = _keys(approx.values, approx.grid, params)
    mass_t: dict = defaultdict(int)
    for k in kt:
        mass_t[k] += 1
    good = {k for k, c in mass_t.items()
            if k is not BAD and c / n_t >= params.eps_tilde * (1 - 1e-9)}

    members: dict = defaultdict(list)
    bad_members = []
    for i, k in enumerate(ka):
        if k in good:
            members[k].append(i)
        else:
            bad_members.append(i)

    # correction mixture over the partition {A_z : z good} and the bad set
    branches = list(good) + [BAD]
    bad_t = sum(c for k, c in mass_t.items() if k not in good) / n_t
    w = []
    for k in branches:
        mu_l = (len(members[k]) if k is not BAD else len(bad_members)) / n_a
        mu = mass_t[k] / n_t if k is not BAD else bad_t
        w.append(mu_l - (1 - eps) * mu)
    w = np.array(w)
    clip = float(-w[w < 0].sum())
    w = np.clip(w, 0.0, None)
    has = np.array([len(members[k]) > 0 if k is not BAD else len(bad_members) > 0
                    for k in branches])
    w = np.where(has, w, 0.0)
    if w.sum() > 0:
        w = w / w.sum()
    else:
        w = has / has.sum()

    def draw_refresh():
        b = branches[rng.choice(len(branches), p=w)]
        pool = members[b] if b is not BAD else bad_members
        return int(pool[rng.integers(len(pool))])

    U = rng.random(n_t)
    pairs = []
    counts = {"cell": 0, "bad": 0, "refresh": 0}
    fallbacks = 0
    for i, k in enumerate(kt):
        if U[i] <= 1 - eps:
            if k in good and members[k]:
                j, br = members[k][rng.integers(len(members[k]))], "cell"
            else:
                if k in good:
                    fallbacks += 1
                if bad_members:
                    j, br = bad_members[rng.integers(len(bad_members))], "bad"
                else:
                    j, br = draw_refresh(), "refresh"
        else:
            j, br = draw_refresh(), "refresh"
        counts[br] += 1
        pairs.append(CoupledPair(
            TorusField(target.grid, target.values[i]),
            TorusField(approx.grid, approx.values[j]),
            br, k if br == "cell" else None, i, int(j)))
    return CouplingReport(pairs, params, len(good), fallbacks, clip, counts)


@dataclass(frozen=True)
class QualityEstimate:
    L: float
    exceedance: float
    ci_low: float
    ci_high: float
    n: int
    count: int


def pair_sup_distance(a: np.ndarray, grid_a: TorusGrid, b: np.ndarray, grid_b: TorusGrid,
                      window: tuple[float, float]) -> np.ndarray:
    """``sup |a - b|`` over the finer grid's nodes inside ``window``, batched."""
    fine = grid_a if grid_a.dx <= grid_b.dx else grid_b
    x = fine.nodes
    x = x[(x >= window[0] - 1e-12) & (x <= window[1] + 1e-12)]
    va = evaluate(a, grid_a, x)
    vb = evaluate(b, grid_b, x)
    return np.max(np.abs(va - vb), axis=-1)


def coupling_quality(pairs, eta: float, L: float) -> QualityEstimate:
    """Fraction of pairs with ``||phi - phi_L||_{C^0([-L^eta, L^eta])} > L^{-eta}``.

    ``pairs`` is a list of :class:`CoupledPair` or a tuple
    ``(values_a, grid_a, values_b, grid_b)`` of batched arrays.  The interval
    is a 95% Wilson score interval.
    """
    if isinstance(pairs, tuple):
        a, ga, b, gb = pairs
    else:
        if not pairs:
            raise ValueError("no pairs")
        a = np.stack([p.target.values for p in pairs])
        b = np.stack([p.approx.values for p in pairs])
        ga, gb = pairs[0].target.grid, pairs[0].approx.grid
    n = len(a)
    if n == 0:
        raise ValueError("no pairs")
    r = L**eta
    d = pair_sup_distance(a, ga, b, gb, (-r, r))
    k = int(np.sum(d > L**-eta))
    ci = binomtest(k, n).proportion_ci(0.95, method="wilson")
    return QualityEstimate(float(L), k / n, float(ci.low), float(ci.high), n, k)


def rate_for_resolution(n: int, L: float, kappa: float, beta: float) -> float:
    """The rate ``c`` that puts ``eps_tilde`` exactly at the resolution ``1/n``."""
    return 16.0 * math.log(n) / (kappa * L**beta)


def fit_power_envelope(Ls, probs, eta: float) -> float:
    """Smallest ``C`` with ``probs <= C L^{-eta}`` at every ``L``."""
    Ls, probs = np.asarray(Ls, float), np.asarray(probs, float)
    return float(np.max(probs * Ls**eta))


@dataclass
class SharedNoiseRun:
    K_grid: TorusGrid
    L_grid: TorusGrid
    psi_K: np.ndarray
    psi_L: np.ndarray
    ce_distance: np.ndarray
    T: float

    def pairs(self) -> list[CoupledPair]:
        return [
            CoupledPair(TorusField(self.K_grid, a), TorusField(self.L_grid, b), "shared", None, i, i)
            for i, (a, b) in enumerate(zip(self.psi_K, self.psi_L))
        ]

    def as_tuple(self):
        return self.psi_K, self.K_grid, self.psi_L, self.L_grid


def _nested_grids(volumes, dx: float) -> list[TorusGrid]:
    out = []
    for vol in volumes:
        m = 2 * math.pi * vol / dx
        if abs(m - round(m)) > 1e-6:
            raise ValueError(f"volume {vol} is not a whole number of grid cells")
        out.append(make_grid(float(vol), int(round(m))))
    return out


def shared_noise_family(Ls, K: float, spec: GibbsSpec, n_pairs: int, rng: np.random.Generator, *,
                        T: float = 3.0, dt: float = 2e-3, theta: float = 0.25,
                        margin: float = 1.0, init: str = "restrict") -> dict[float, SharedNoiseRun]:
    """One flow on ``T_K`` coupled to a flow on each ``T_L`` for ``L`` in ``Ls``.

    Every ``T_L`` flow takes its noise from the ``T_K`` increments on
    ``[-pi L + margin, pi L - margin]`` and fresh draws elsewhere, so each
    ``(K, L)`` pair has exactly the law of the two-volume coupling.  Sharing
    the ``T_K`` flow across volumes only correlates the pairs for different
    ``L``, which makes comparisons across ``L`` less noisy.

    ``spec`` fixes ``p``, the strength, the variance and the grid spacing; all
    tori reuse the spacing so their nodes nest.  The ``T_K`` flow starts from
    a free-field draw.  With ``init="restrict"`` each ``T_L`` flow starts from
    the same draw read off its nodes, so the initial data are already coupled
    in the interior; ``init="independent"`` uses fresh free-field draws.  All
    flows then run for time ``T``.
    """
    if init not in ("restrict", "independent"):
        raise ValueError("init must be 'restrict' or 'independent'")
    Ls = [float(L) for L in Ls]
    if any(L > K for L in Ls):
        raise ValueError("need K >= L for every L")
    grids = _nested_grids([K] + Ls, spec.grid.dx)
    cfgs = [LangevinConfig(GibbsSpec.build(g.L, g.n_points, spec.p, spec.strength, spec.gff.variance),
                           dt=dt) for g in grids]
    steppers = [_Stepper(c) for c in cfgs]
    gK = grids[0]
    psis = [sample_gff_batch(cfgs[0].spec.gff, rng, n_pairs)]
    slots = []
    for g, c in zip(grids[1:], cfgs[1:]):
        off = embed_offset(g, gK)
        if init == "restrict":
            psis.append(psis[0][:, off:off + g.n_points].copy())
        else:
            psis.append(sample_gff_batch(c.spec.gff, rng, n_pairs))
        half = math.pi * g.L
        x = g.nodes
        free = np.flatnonzero((x < -half + margin - 1e-9) | (x > half - margin + 1e-9))
        slots.append((off, free))
    coefs = [np.fft.fft(v, axis=-1) for v in psis]
    var = spec.gff.variance
    for _ in range(int(round(T / dt))):
        WK = physical_noise(gK, (n_pairs,), dt, var, rng)
        noises = [WK]
        for g, (off, free) in zip(grids[1:], slots):
            WL = WK[:, off:off + g.n_points].copy()
            if free.size:
                z = rng.standard_normal((n_pairs, free.size, 2)).view(np.complex128)[..., 0]
                WL[:, free] = z * math.sqrt(var * dt / (2.0 * g.dx))
            noises.append(WL)
        for i, (st, W) in enumerate(zip(steppers, noises)):
            coefs[i], _, _ = st._raw_step(coefs[i], psis[i], None, np.fft.fft(W, axis=-1) * st.nw)
            psis[i] = np.fft.ifft(coefs[i], axis=-1)
    if not all(np.all(np.isfinite(v)) for v in psis):
        raise FloatingPointError("Langevin blow-up in the shared-noise coupling")
    out = {}
    for g, v in zip(grids[1:], psis[1:]):
        ext = extend_periodic(v, g, gK)
        out[g.L] = SharedNoiseRun(gK, g, psis[0], v, ce_norm(psis[0] - ext, gK, theta), T)
    return out


def langevin_shared_noise_coupling(L: float, K: float, spec: GibbsSpec, n_pairs: int, rng: np.random.Generator,
                                   *, T: float = 3.0, dt: float = 2e-3, theta: float = 0.25,
                                   margin: float = 1.0, init: str = "restrict") -> SharedNoiseRun:
    """Equilibrated pairs from Langevin flows on ``T_K`` and ``T_L`` with shared noise."""
    if K < L:
        raise ValueError("need K >= L")
    if K == L:
        # fully shared noise and a common start: the two flows coincide
        g = _nested_grids([K], spec.grid.dx)[0]
        cfg = LangevinConfig(GibbsSpec.build(g.L, g.n_points, spec.p, spec.strength, spec.gff.variance), dt=dt)
        psi0 = sample_gff_batch(cfg.spec.gff, rng, n_pairs)
        psi, _, _ = _Stepper(cfg).run(psi0, rng, int(round(T / dt)))
        return SharedNoiseRun(g, g, psi, psi.copy(), np.zeros(n_pairs), T)
    return shared_noise_family([L], K, spec, n_pairs, rng, T=T, dt=dt, theta=theta, margin=margin,
                               init=init)[float(L)]
