"""Stochastic quantization of ``mu_L``: the Langevin SPDE and its coupled two-volume version.

The equation is

    (d_t + 1 - d_x^2) psi = -(1 - beta (p+1) 1_[-1,1]) |psi|^{p-1} psi + sqrt(2) zeta

with complex space-time white noise ``zeta``.  Each Fourier mode is advanced by
the exact Ornstein-Uhlenbeck transition of ``d_t + 1 + n^2``; the drift enters
through the exponential-Euler weight ``(1 - e^{-lambda dt}) / lambda``.  The noise
is generated node by node in physical space, which is what allows two tori to
share it on a common window.

When the GFF per-mode variance ``s`` differs from 2, the noise and drift are
rescaled together so that the equilibrium is still the ``mu_L`` of the given
:class:`GibbsSpec` (noise intensity ``s/2``, drift factor ``s/2``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .measures import Ensemble, GibbsSpec, sample_gff_batch
from .spectral import TorusField, TorusGrid, ce_norm, embed_offset, from_spectral, to_spectral

__all__ = [
    "LangevinConfig",
    "LangevinState",
    "CoupledState",
    "initial_state",
    "physical_noise",
    "step_langevin",
    "evolve_langevin",
    "run_to_equilibrium",
    "make_coupled_state",
    "coupled_step",
    "run_coupled",
    "ou_stationary_variance",
    "heat_ce_bound_check",
]


@dataclass(frozen=True)
class LangevinConfig:
    spec: GibbsSpec
    dt: float = 1e-3
    beta_reweight: float = 0.0
    taming: bool | None = None
    noise: bool = True
    tilt_window: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.beta_reweight < 0 or not self.beta_reweight * (self.spec.p + 1) < 1:
            raise ValueError("need 0 <= beta_reweight < 1/(p+1)")

    @property
    def tamed(self) -> bool:
        return self.spec.p >= 5 if self.taming is None else bool(self.taming)

    @property
    def grid(self) -> TorusGrid:
        return self.spec.grid


@dataclass
class LangevinState:
    """``psi`` and the linear stochastic object, batched along leading axes."""

    psi: np.ndarray
    linear: np.ndarray
    t: float = 0.0
    steps: int = 0
    tamed_fraction: float = 0.0

    def fields(self, grid: TorusGrid) -> list[TorusField]:
        return [TorusField(grid, row) for row in np.atleast_2d(self.psi)]


def initial_state(psi0: np.ndarray) -> LangevinState:
    psi0 = np.array(psi0, dtype=np.complex128, copy=True)
    return LangevinState(psi0, np.zeros_like(psi0))


def _decay(grid: TorusGrid, dt: float):
    lam = 1.0 + grid.freqs**2
    e = np.exp(-lam * dt)
    drift_w = -np.expm1(-lam * dt) / lam
    noise_w = np.sqrt(-np.expm1(-2 * lam * dt) / (2 * lam * dt))
    return e, drift_w, noise_w


def physical_noise(grid: TorusGrid, shape: tuple, dt: float, variance: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Integrated white-noise increments over one step, ``E|W_j|^2 = variance dt / dx``."""
    z = rng.standard_normal(tuple(shape) + (grid.n_points, 2)).view(np.complex128)[..., 0]
    return z * math.sqrt(variance * dt / (2.0 * grid.dx))


def _drift(psi: np.ndarray, config: LangevinConfig, mask: np.ndarray | None):
    spec = config.spec
    coef = 0.5 * spec.gff.variance * spec.strength
    if coef == 0:
        return None, 0.0
    a2 = psi.real**2 + psi.imag**2
    h = (spec.p - 1) / 2
    pw = a2 ** int(h) if float(h).is_integer() else np.where(a2 > 0, a2, 0.0) ** h
    f = -coef * pw * psi
    if mask is not None and config.beta_reweight > 0:
        f = f * np.where(mask, 1.0 - config.beta_reweight * (spec.p + 1), 1.0)
    tamed = 0.0
    if config.tamed:
        mag = np.abs(f)
        denom = 1.0 + config.dt * mag
        tamed = float(np.mean(config.dt * mag > 1e-2))
        f = f / denom
    return f, tamed


class _Stepper:
    """Precomputed per-mode weights for one grid and step size.

    Internally the spectral state is kept in raw FFT normalization: every
    multiplier is diagonal, so the node phase and the ``1/M`` factor of
    :func:`to_spectral` commute with the update and can be dropped.
    """

    def __init__(self, config: LangevinConfig):
        self.config = config
        g = config.grid
        self.grid = g
        e, dw, nw = _decay(g, config.dt)
        self.e = e
        self.dw = dw
        self.nw = math.sqrt(2.0) * nw
        a, b = config.tilt_window
        self.mask = (g.nodes >= a - 1e-12) & (g.nodes <= b + 1e-12)
        # raw-FFT standard deviation of a physical increment with E|W_j|^2 = s dt / dx
        self.noise_sd = math.sqrt(g.n_points * config.spec.gff.variance * config.dt / g.dx)

    def advance(self, state: LangevinState, W: np.ndarray | None) -> LangevinState:
        """One step with given physical-space noise increments ``W`` (or none)."""
        n_hat = None if W is None else np.fft.fft(W, axis=-1) * self.nw
        psi, lin, tamed = self._raw_step(np.fft.fft(state.psi, axis=-1), state.psi,
                                         np.fft.fft(state.linear, axis=-1), n_hat)
        psi = np.fft.ifft(psi, axis=-1)
        if not np.all(np.isfinite(psi)):
            raise FloatingPointError(f"Langevin blow-up at step {state.steps + 1}")
        return LangevinState(psi, np.fft.ifft(lin, axis=-1), state.t + self.config.dt,
                             state.steps + 1, tamed)

    def _raw_step(self, c, psi, lin, n_hat):
        c = c * self.e
        f, tamed = _drift(psi, self.config, self.mask)
        if f is not None:
            c += self.dw * np.fft.fft(f, axis=-1)
        if lin is not None:
            lin = lin * self.e
        if n_hat is not None:
            c += n_hat
            if lin is not None:
                lin += n_hat
        return c, lin, tamed

    def spectral_noise(self, shape, rng: np.random.Generator) -> np.ndarray:
        """Raw-FFT image of fresh physical noise, drawn directly in Fourier space.

        The DFT maps i.i.d. circular complex Gaussians to i.i.d. circular complex
        Gaussians, so this has exactly the law of ``fft(W) * nw``.
        """
        M = self.grid.n_points
        z = rng.standard_normal(tuple(shape) + (M, 2)).view(np.complex128)[..., 0]
        z *= self.noise_sd * math.sqrt(0.5) * self.nw
        return z

    def run(self, psi: np.ndarray, rng: np.random.Generator, n_steps: int, lin: np.ndarray | None = None,
            noise: bool = True, on_step=None):
        """Uncoupled fast path: ``n_steps`` steps with spectral-space noise.

        Returns ``(psi, linear or None, steps_with_taming)``.
        """
        c = np.fft.fft(psi, axis=-1)
        lc = None if lin is None else np.fft.fft(lin, axis=-1)
        tamed_steps = 0
        for k in range(n_steps):
            nh = self.spectral_noise(psi.shape[:-1], rng) if noise else None
            c, lc, tamed = self._raw_step(c, psi, lc, nh)
            psi = np.fft.ifft(c, axis=-1)
            tamed_steps += tamed > 0.01
            if on_step is not None:
                on_step(k + 1, psi)
        if not np.all(np.isfinite(psi)):
            raise FloatingPointError("Langevin blow-up")
        return psi, (None if lc is None else np.fft.ifft(lc, axis=-1)), tamed_steps


def step_langevin(state: LangevinState, config: LangevinConfig, rng: np.random.Generator) -> LangevinState:
    st = _Stepper(config)
    W = None
    if config.noise:
        W = physical_noise(config.grid, state.psi.shape[:-1], config.dt, config.spec.gff.variance, rng)
    return st.advance(state, W)


def evolve_langevin(state: LangevinState, config: LangevinConfig, T: float, rng: np.random.Generator,
                    track_linear: bool = True, on_step=None) -> LangevinState:
    """Advance a (batched) state by time ``T`` using spectral-space noise."""
    st = _Stepper(config)
    n = int(round(T / config.dt))
    psi, lin, tamed = st.run(state.psi, rng, n, state.linear if track_linear else None, config.noise, on_step)
    if lin is None:
        lin = np.full_like(psi, np.nan)
    return LangevinState(psi, lin, state.t + n * config.dt, state.steps + n, tamed / max(n, 1))


def run_to_equilibrium(
    config: LangevinConfig,
    T_burn: float,
    n_samples: int,
    thinning: float,
    rng: np.random.Generator,
    *,
    n_chains: int | None = None,
    init: np.ndarray | None = None,
) -> Ensemble:
    """Run chains for ``T_burn`` then record every ``thinning`` time units.

    Chains start from free-field draws unless ``init`` is given.  With
    ``n_chains = n_samples`` (the default) every member comes from its own chain.
    """
    if T_burn < 1:
        raise ValueError("T_burn must be >= 1")
    g = config.grid
    n_chains = n_samples if n_chains is None else min(n_chains, n_samples)
    prov = {"sampler": "langevin", "dt": config.dt, "T_burn": T_burn, "thinning": thinning,
            "n_chains": n_chains, "tamed": config.tamed}
    if n_samples == 0:
        return Ensemble(config.spec, np.zeros((0, g.n_points), complex), prov)
    if init is None:
        psi0 = sample_gff_batch(config.spec.gff, rng, n_chains)
    else:
        psi0 = np.array(init[:n_chains], dtype=np.complex128)
    st = _Stepper(config)
    n_burn = int(round(T_burn / config.dt))
    n_thin = max(1, int(round(thinning / config.dt)))
    psi, _, tamed = st.run(psi0, rng, n_burn, None, config.noise)
    out = [psi.copy()]
    total = n_burn
    while sum(len(o) for o in out) < n_samples:
        psi, _, t2 = st.run(psi, rng, n_thin, None, config.noise)
        tamed += t2
        total += n_thin
        out.append(psi.copy())
    frac = tamed / max(total, 1)
    if frac > 0.01:
        warnings.warn(f"taming active on {frac:.1%} of steps; consider halving dt", RuntimeWarning, stacklevel=2)
    prov["tamed_step_fraction"] = frac
    return Ensemble(config.spec, np.concatenate(out, axis=0)[:n_samples], prov)


def ou_stationary_variance(config: LangevinConfig) -> np.ndarray:
    """Per-mode stationary ``E|c_n|^2`` of the drift-free scheme (exact for any dt)."""
    return config.spec.gff.variance / (config.grid.length * (1.0 + config.grid.freqs**2))


# ---------------------------------------------------------------------------
# coupled flows on T_K and T_L


@dataclass
class CoupledState:
    state_K: LangevinState
    state_L: LangevinState
    grid_K: TorusGrid
    grid_L: TorusGrid
    margin: float = 1.0

    @property
    def offset(self) -> int:
        return embed_offset(self.grid_L, self.grid_K)

    @property
    def t(self) -> float:
        return self.state_L.t

    def shared_mask_L(self) -> np.ndarray:
        """Nodes of ``T_L`` where the noise is shared, ``[-pi L + margin, pi L - margin]``."""
        x = self.grid_L.nodes
        half = math.pi * self.grid_L.L
        return (x >= -half + self.margin - 1e-9) & (x <= half - self.margin + 1e-9)

    def distance_ce(self, theta: float) -> np.ndarray:
        """``||psi_K - psi_L||_{CE^theta}`` on ``T_K`` with ``psi_L`` extended periodically."""
        from .measures import extend_periodic

        ext = extend_periodic(self.state_L.psi, self.grid_L, self.grid_K)
        return ce_norm(self.state_K.psi - ext, self.grid_K, theta)


def make_coupled_state(psi_K: np.ndarray, psi_L: np.ndarray, grid_K: TorusGrid, grid_L: TorusGrid,
                       margin: float = 1.0) -> CoupledState:
    if grid_K.L < grid_L.L:
        raise ValueError("need K >= L")
    embed_offset(grid_L, grid_K)
    if not 0 <= margin < math.pi * grid_L.L:
        raise ValueError("margin must lie in [0, pi L)")
    return CoupledState(initial_state(psi_K), initial_state(psi_L), grid_K, grid_L, margin)


def _coupled_noise(cs: CoupledState, cfg_K: LangevinConfig, rng: np.random.Generator):
    gK, gL = cs.grid_K, cs.grid_L
    var = cfg_K.spec.gff.variance
    batch = cs.state_K.psi.shape[:-1]
    WK = physical_noise(gK, batch, cfg_K.dt, var, rng)
    off = cs.offset
    WL = WK[..., off:off + gL.n_points].copy()
    # only the few nodes outside the shared window need independent draws
    free = np.flatnonzero(~cs.shared_mask_L())
    if free.size:
        z = rng.standard_normal(tuple(batch) + (free.size, 2)).view(np.complex128)[..., 0]
        WL[..., free] = z * math.sqrt(var * cfg_K.dt / (2.0 * gL.dx))
    return WK, WL


def coupled_step(cs: CoupledState, cfg_K: LangevinConfig, cfg_L: LangevinConfig,
                 rng: np.random.Generator, _steppers=None) -> CoupledState:
    """Advance both flows one step with node-identical noise on the shared window."""
    if cfg_K.dt != cfg_L.dt:
        raise ValueError("coupled flows need one step size")
    if cfg_K.grid != cs.grid_K or cfg_L.grid != cs.grid_L:
        raise ValueError("configs do not match the coupled grids")
    sK, sL = _steppers or (_Stepper(cfg_K), _Stepper(cfg_L))
    if cfg_K.noise:
        WK, WL = _coupled_noise(cs, cfg_K, rng)
    else:
        WK = WL = None
    return replace(cs, state_K=sK.advance(cs.state_K, WK), state_L=sL.advance(cs.state_L, WL))


def run_coupled(cs: CoupledState, cfg_K: LangevinConfig, cfg_L: LangevinConfig, T: float,
                rng: np.random.Generator, on_step=None) -> CoupledState:
    steppers = (_Stepper(cfg_K), _Stepper(cfg_L))
    for _ in range(int(round(T / cfg_K.dt))):
        cs = coupled_step(cs, cfg_K, cfg_L, rng, steppers)
        if on_step is not None:
            on_step(cs)
    return cs


# ---------------------------------------------------------------------------


def heat_ce_bound_check(phi: TorusField, theta: float, t: float) -> tuple[float, float]:
    """``(||e^{t Delta} phi||_{CE^theta}, 2 e^{theta^2 t} ||phi||_{CE^theta})`` on the torus."""
    if not theta > 0 or t < 0:
        raise ValueError("need theta > 0 and t >= 0")
    g = phi.grid
    heat = from_spectral(to_spectral(phi.values, g) * np.exp(-t * g.freqs**2), g)
    lhs = float(ce_norm(heat, g, theta))
    rhs = 2.0 * math.exp(theta * theta * t) * float(ce_norm(phi.values, g, theta))
    return lhs, rhs
