import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gibbslab.measures import Ensemble, GibbsSpec, sample_gff_batch, sample_gibbs_pcn
from gibbslab.nls import (
    NlsConfig,
    SolverBlowUp,
    conserved,
    evolve,
    evolve_batch,
    holder_norm,
    holder_regularity_experiment,
    invariance_experiment,
    nls_step,
    nonlinearity_dealiased,
    pad_spectrum,
    plane_wave,
    truncate_spectrum,
)
from gibbslab.spectral import TorusField, c0_norm, make_grid


def test_plane_wave_is_reproduced():
    g = make_grid(1, 64)
    u0 = plane_wave(g, 1.0, 1.0, 5)
    u1, _ = evolve(u0, NlsConfig(5, 1e-3), 1.0, record_every=1000)
    exact = plane_wave(g, 1.0, 1.0, 5, t=1.0)
    assert np.max(np.abs(u1.values - exact.values)) < 1e-8


@given(st.floats(0.1, 2.0), st.integers(-5, 5), st.sampled_from([3.0, 5.0, 4.0]))
def test_plane_waves_for_many_amplitudes(A, k, p):
    g = make_grid(2, 32)
    u0 = plane_wave(g, A, k / 2, p)
    u1, _ = evolve(u0, NlsConfig(p, 1e-2), 0.5, record_every=50)
    assert np.max(np.abs(u1.values - plane_wave(g, A, k / 2, p, t=0.5).values)) < 1e-9 * max(1, A)


def test_zero_stays_zero():
    g = make_grid(2, 32)
    u, _ = evolve(TorusField(g, np.zeros(32)), NlsConfig(3, 1e-2), 1.0)
    assert np.all(u.values == 0)


@given(st.integers(0, 2**32 - 1))
def test_step_is_time_reversible(seed):
    spec = GibbsSpec.build(2, 32, 3)
    u0 = TorusField(spec.grid, sample_gff_batch(spec.gff, np.random.default_rng(seed), 1)[0])
    cfg = NlsConfig(3, 1e-2)
    u1 = nls_step(u0, cfg)
    back = nls_step(u1.conj(), cfg).conj()
    assert np.max(np.abs(back.values - u0.values)) < 1e-10


def test_batched_evolution_matches_single_steps(rng):
    spec = GibbsSpec.build(2, 32, 3)
    v = sample_gff_batch(spec.gff, rng, 2)
    cfg = NlsConfig(3, 1e-2)
    u = TorusField(spec.grid, v[1])
    for _ in range(20):
        u = nls_step(u, cfg)
    out = evolve_batch(v, spec.grid, cfg, 20)
    assert np.allclose(out[1], u.values, atol=1e-12)


def test_conserved_examples():
    g = make_grid(1, 32)
    m, e = conserved(TorusField(g, np.ones(32)), 3)
    assert m == pytest.approx(2 * math.pi)
    assert e == pytest.approx(2 * math.pi / 4)
    m, e = conserved(TorusField(g, np.exp(1j * g.nodes)), 3)
    assert m == pytest.approx(2 * math.pi)
    assert e - 2 * math.pi / 4 == pytest.approx(math.pi)


def test_mass_and_energy_on_gibbs_typical_data(rng):
    spec = GibbsSpec.build(10, 512, 3)
    u0 = TorusField(spec.grid, sample_gff_batch(spec.gff, rng, 1)[0])
    _, rec = evolve(u0, NlsConfig(3, 1e-3), 1.0, record_every=10)
    dm, de = rec.drift()
    sm, se = rec.secular_drift()
    assert dm < 1e-8
    assert se < 1e-6
    # the excursion is a bounded O(dt^2) oscillation, not a trend
    assert de < 1e-3


def test_strang_order_is_two():
    g = make_grid(1, 64)
    u0 = TorusField(g, 0.8 * np.exp(1j * g.nodes) + 0.5 * np.exp(-2j * g.nodes))
    ref, _ = evolve(u0, NlsConfig(3, 1e-4), 0.5, record_every=5000)
    errs = []
    dts = [0.02, 0.01, 0.005]
    for dt in dts:
        u, _ = evolve(u0, NlsConfig(3, dt), 0.5, record_every=10**6)
        errs.append(np.max(np.abs(u.values - ref.values)))
    order = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert order == pytest.approx(2.0, abs=0.1)


def test_time_must_be_a_multiple_of_dt():
    g = make_grid(1, 16)
    with pytest.raises(ValueError):
        evolve(TorusField(g, np.zeros(16)), NlsConfig(3, 0.3), 1.0)


def test_blow_up_is_reported_with_state():
    g = make_grid(1, 16)
    v = np.zeros((1, 16), complex)
    v[0, 3] = np.nan
    with pytest.raises(SolverBlowUp) as info:
        evolve_batch(v, g, NlsConfig(3, 0.1), 2)
    assert info.value.state.shape == (1, 16)


def test_config_validation():
    with pytest.raises(ValueError):
        NlsConfig(1.0)
    with pytest.raises(ValueError):
        NlsConfig(3, -1e-3)


# --- dealiased products -------------------------------------------------------------


def test_pad_and_truncate_are_inverse(rng):
    c = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    assert np.array_equal(truncate_spectrum(pad_spectrum(c, 3), 16), c)


def test_dealiased_cubic_matches_exact_product():
    g = make_grid(1, 16)
    a, b = 0.7, 0.4 - 0.2j
    u = a * np.exp(1j * g.nodes) + b * np.exp(-3j * g.nodes)
    c = nonlinearity_dealiased(u, g, 3, 2)
    # |u|^2 u expanded by hand: modes 1, -3, 5 (from u1^2 conj(u_-3)) and -7 (u_-3^2 conj(u1))
    want = {1: a * (a * a + 2 * abs(b) ** 2), -3: b * (abs(b) ** 2 + 2 * a * a), 5: a * a * np.conj(b),
            -7: b * b * a}
    k = np.rint(g.freqs).astype(int)
    for j, kk in enumerate(k):
        expected = want.get(kk, 0.0)
        assert c[j] == pytest.approx(expected, abs=1e-13)


# --- statistics ---------------------------------------------------------------------------


def test_invariance_trivial_cases(rng):
    spec = GibbsSpec.build(2, 32, 3)
    ens = Ensemble(spec, sample_gff_batch(spec.gff, rng, 1))
    rep = invariance_experiment(ens, NlsConfig(3, 1e-2), 0.0)
    assert rep.min_pvalue() == 1.0


def test_linear_flow_preserves_gff(rng):
    spec = GibbsSpec.build(4, 64, 3, strength=0.0)
    ens = Ensemble(spec, sample_gff_batch(spec.gff, rng, 1000))
    # shrinking the amplitude switches the potential off: the phase |u|^{p-1} t is about 1e-12
    small = Ensemble(spec, 1e-6 * ens.values)
    rep = invariance_experiment(small, NlsConfig(3, 1e-2), 1.0)
    assert rep.min_pvalue() > 0.01


def test_invariance_rejects_mismatched_exponent(rng):
    spec = GibbsSpec.build(2, 32, 3)
    ens = Ensemble(spec, sample_gff_batch(spec.gff, rng, 4))
    with pytest.raises(ValueError):
        invariance_experiment(ens, NlsConfig(5, 1e-2), 0.1)


def test_holder_norm_reduces_to_sup(rng):
    spec = GibbsSpec.build(2, 32, 3)
    traj = sample_gff_batch(spec.gff, rng, 6).reshape(2, 3, 32)
    h = holder_norm(traj, spec.grid, np.array([0.0, 0.1, 0.2]), 0.0, 0.0)
    assert np.allclose(h, np.max(c0_norm(traj, spec.grid, (-1, 1)), axis=-1))


def test_holder_experiment_preconditions(rng):
    spec = GibbsSpec.build(2, 32, 3)
    ens = Ensemble(spec, sample_gff_batch(spec.gff, rng, 4))
    with pytest.raises(ValueError):
        holder_regularity_experiment([ens] * 3, 0.2, 0.2, 0.1, NlsConfig(3, 1e-2))
    with pytest.raises(ValueError):
        holder_regularity_experiment([ens] * 2, 0.1, 0.05, 0.1, NlsConfig(3, 1e-2))


def test_holder_quantiles_stable_across_volumes(rng):
    ens = []
    for L in (5, 10, 20):
        spec = GibbsSpec.build(L, 16 * L, 3)
        ens.append(sample_gibbs_pcn(spec, 200, 300, min(1.0, 0.15 * math.sqrt(10 / L)), rng))
    out = holder_regularity_experiment(ens, 0.2, 0.05, 0.2, NlsConfig(3, 2e-3))
    q99 = [out[float(L)][0.99] for L in (5, 10, 20)]
    assert max(q99) <= 2 * min(q99)
