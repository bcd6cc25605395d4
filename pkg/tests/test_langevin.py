import math

import numpy as np
import pytest
from scipy import stats

from gibbslab.langevin import (
    LangevinConfig,
    coupled_step,
    evolve_langevin,
    heat_ce_bound_check,
    initial_state,
    make_coupled_state,
    ou_stationary_variance,
    run_coupled,
    run_to_equilibrium,
    step_langevin,
)
from gibbslab.measures import GibbsSpec, gff_mode_variance, sample_gff_batch, sample_gibbs_pcn
from gibbslab.spectral import TorusField, ce_norm, embed_offset, make_grid, to_spectral


def test_linear_noiseless_flow_is_exact_decay(rng):
    spec = GibbsSpec.build(2, 32, 3, strength=0.0)
    cfg = LangevinConfig(spec, dt=1e-2, noise=False)
    n = 1.5
    psi0 = np.exp(1j * n * spec.grid.nodes)
    st = initial_state(psi0)
    for _ in range(100):
        st = step_langevin(st, cfg, rng)
    assert np.max(np.abs(st.psi - math.exp(-(1 + n * n) * st.t) * psi0)) < 1e-10


def test_fast_path_matches_single_steps_without_noise(rng):
    spec = GibbsSpec.build(2, 32, 3)
    cfg = LangevinConfig(spec, dt=1e-3, noise=False)
    psi0 = sample_gff_batch(spec.gff, rng, 3)
    a = initial_state(psi0)
    for _ in range(50):
        a = step_langevin(a, cfg, rng)
    b = evolve_langevin(initial_state(psi0), cfg, 0.05, rng)
    assert np.allclose(a.psi, b.psi, atol=1e-12)


def test_free_stationary_variance_matches_gff(rng):
    spec = GibbsSpec.build(2, 32, 3, strength=0.0)
    cfg = LangevinConfig(spec, dt=5e-3)
    assert np.allclose(ou_stationary_variance(cfg), gff_mode_variance(spec.gff), rtol=1e-12)
    ens = run_to_equilibrium(cfg, 5.0, 4000, 1.0, rng, init=np.zeros((4000, 32), complex))
    emp = np.mean(np.abs(to_spectral(ens.values, spec.grid)) ** 2, axis=0)
    assert np.all(np.abs(emp / gff_mode_variance(spec.gff) - 1) < 0.05)


def test_zero_potential_equilibrium_matches_direct_gff(rng):
    spec = GibbsSpec.build(4, 64, 3, strength=0.0)
    ens = run_to_equilibrium(LangevinConfig(spec, dt=2e-3), 2.0, 2000, 1.0, rng)
    direct = sample_gff_batch(spec.gff, rng, 2000)
    assert stats.ks_2samp(ens.values[:, 32].real, direct[:, 32].real).pvalue > 0.01


def test_gibbs_measure_is_stationary(rng):
    spec = GibbsSpec.build(2, 64, 3)
    ens = sample_gibbs_pcn(spec, 2000, 400, 0.4, rng)
    st = evolve_langevin(initial_state(ens.values), LangevinConfig(spec, dt=2e-3), 1.0, rng)
    j = 32
    assert stats.ks_2samp(ens.values[:, j].real, st.psi[:, j].real).pvalue > 0.01


def test_equilibrium_is_deterministic_given_seed():
    spec = GibbsSpec.build(2, 32, 3)
    cfg = LangevinConfig(spec, dt=5e-3)
    a = run_to_equilibrium(cfg, 1.0, 5, 1.0, np.random.default_rng(9))
    b = run_to_equilibrium(cfg, 1.0, 5, 1.0, np.random.default_rng(9))
    assert np.array_equal(a.values, b.values)


def test_short_burn_in_rejected(rng):
    with pytest.raises(ValueError):
        run_to_equilibrium(LangevinConfig(GibbsSpec.build(2, 32, 3)), 0.5, 5, 1.0, rng)


def test_reweight_range_checked():
    with pytest.raises(ValueError):
        LangevinConfig(GibbsSpec.build(2, 32, 3), beta_reweight=0.3)


def test_taming_defaults_on_for_quintic():
    assert LangevinConfig(GibbsSpec.build(2, 32, 5)).tamed
    assert not LangevinConfig(GibbsSpec.build(2, 32, 3)).tamed


# --- coupled flows --------------------------------------------------------------------


def test_fully_shared_zero_data_stays_identical(rng):
    g = make_grid(4, 64)
    spec = GibbsSpec.build(4, 64, 3)
    cfg = LangevinConfig(spec, dt=2e-3)
    cs = make_coupled_state(np.zeros((3, 64), complex), np.zeros((3, 64), complex), g, g, margin=0.0)
    cs = run_coupled(cs, cfg, cfg, 0.2, rng)
    assert np.array_equal(cs.state_K.psi, cs.state_L.psi)


def test_shared_noise_is_identical_on_window(rng):
    from gibbslab.langevin import _coupled_noise

    gK, gL = make_grid(8, 128), make_grid(4, 64)
    cK = LangevinConfig(GibbsSpec.build(8, 128, 3), dt=1e-3)
    cs = make_coupled_state(np.zeros((2, 128), complex), np.zeros((2, 64), complex), gK, gL, margin=1.0)
    WK, WL = _coupled_noise(cs, cK, rng)
    off = embed_offset(gL, gK)
    shared = cs.shared_mask_L()
    assert np.array_equal(WL[:, shared], WK[:, off:off + 64][:, shared])
    assert not np.any(WL[:, ~shared] == WK[:, off:off + 64][:, ~shared])
    # the shared window is [-pi L + margin, pi L - margin]
    assert shared.sum() == np.sum(np.abs(gL.nodes) <= 4 * math.pi - 1.0 + 1e-9)


def test_restricted_start_difference_shrinks_with_volume(rng):
    K = 32
    gK = make_grid(K, 16 * K)
    out = {}
    for L in (8, 16):
        gL = make_grid(L, 16 * L)
        cK = LangevinConfig(GibbsSpec.build(K, 16 * K, 3, strength=0.0), dt=2e-3)
        cL = LangevinConfig(GibbsSpec.build(L, 16 * L, 3, strength=0.0), dt=2e-3)
        psiK = sample_gff_batch(cK.spec.gff, np.random.default_rng(4), 40)
        off = embed_offset(gL, gK)
        cs = make_coupled_state(psiK, psiK[:, off:off + gL.n_points].copy(), gK, gL)
        cs = run_coupled(cs, cK, cL, 1.0, np.random.default_rng(5))
        x = gL.nodes
        win = np.abs(x) <= math.pi * L / 2
        d = np.abs(cs.state_K.psi[:, off:off + gL.n_points] - cs.state_L.psi)[:, win]
        out[L] = np.median(d.max(axis=1))
    assert out[16] < out[8]


def test_ce_distance_contracts_under_shared_noise(rng):
    theta = 0.25
    g = make_grid(4, 64)
    spec = GibbsSpec.build(4, 64, 3)
    cfg = LangevinConfig(spec, dt=2e-3)
    a = sample_gff_batch(spec.gff, rng, 200)
    b = sample_gff_batch(spec.gff, rng, 200)
    cs = make_coupled_state(a, b, g, g, margin=0.0)
    d0 = cs.distance_ce(theta)
    cs = run_coupled(cs, cfg, cfg, 4.0, rng)
    d4 = cs.distance_ce(theta)
    factor = 2 * math.sqrt(2) * math.exp(-(1 - 2 * theta**2) * 4)
    assert np.mean(d4) <= factor * np.mean(d0)


def test_coupled_state_preconditions():
    gK, gL = make_grid(4, 64), make_grid(8, 128)
    with pytest.raises(ValueError):
        make_coupled_state(np.zeros(64), np.zeros(128), gK, gL)


# --- heat semigroup in CE^theta ---------------------------------------------------------


def test_heat_bound_at_time_zero():
    g = make_grid(5, 160)
    phi = TorusField(g, np.cos(g.nodes) + 0.5j)
    lhs, rhs = heat_ce_bound_check(phi, 0.25, 0.0)
    assert lhs == pytest.approx(float(ce_norm(phi.values, g, 0.25)))
    assert lhs <= rhs == pytest.approx(2 * lhs)


def test_heat_bound_on_narrow_bump():
    g = make_grid(50, 4096)
    phi = TorusField(g, np.exp(-((g.nodes - 20.0) ** 2) / 0.01))
    lhs, rhs = heat_ce_bound_check(phi, 0.25, 1.0)
    assert lhs <= rhs


def test_heat_bound_of_zero():
    g = make_grid(2, 32)
    assert heat_ce_bound_check(TorusField(g, np.zeros(32)), 0.25, 1.0) == (0.0, 0.0)
