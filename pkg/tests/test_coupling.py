import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from gibbslab.coupling import (
    BAD,
    assign_cell,
    build_coupling,
    coupling_quality,
    derive_params,
    fit_power_envelope,
    langevin_shared_noise_coupling,
    rate_for_resolution,
    shared_noise_family,
)
from gibbslab.measures import Ensemble, GibbsSpec, sample_gff_batch
from gibbslab.spectral import TorusField


@pytest.fixture(scope="module")
def gff_ensembles():
    rng = np.random.default_rng(7)
    spec = GibbsSpec.build(4, 64).free()
    a = Ensemble(spec, sample_gff_batch(spec.gff, rng, 400))
    b = Ensemble(spec, sample_gff_batch(spec.gff, rng, 400))
    return a, b


def _params(target, L=1024.0, eta=0.1, alpha=0.5, beta=0.5):
    rate = rate_for_resolution(len(target), L, 1.0, beta)
    return derive_params(L, eta, alpha, beta, 1.0, 0.25, rate, target)


def test_parameter_cascade_at_L_1024(gff_ensembles):
    prm = _params(gff_ensembles[0])
    assert prm.R == pytest.approx(2.0)
    assert prm.K == 32
    assert prm.delta == pytest.approx(1 / 16)
    assert prm.nodes[0] == -2.0 and prm.nodes[-1] == 2.0
    assert prm.tau <= 1024 ** -0.1 / 8 + 1e-15
    assert prm.eps_tilde == pytest.approx(1 / 400)


def test_parameter_preconditions(gff_ensembles):
    t = gff_ensembles[0]
    with pytest.raises(ValueError):
        derive_params(1024, 0.1, 1.5, 0.5, 1.0, 0.25, 1.0, t)
    with pytest.raises(ValueError):
        derive_params(0.5, 0.1, 0.5, 0.5, 1.0, 0.25, 1.0, t)
    with pytest.raises(ValueError, match="resolution"):
        derive_params(1024, 0.1, 0.5, 0.5, 1.0, 0.25, 10.0, t)


def test_zero_field_lies_in_the_zero_cell(gff_ensembles):
    prm = _params(gff_ensembles[0])
    g = gff_ensembles[0].grid
    key = assign_cell(TorusField(g, np.zeros(g.n_points, complex)), prm)
    assert key is not BAD and set(key) == {0}


def test_field_outside_the_box_is_bad(gff_ensembles):
    prm = _params(gff_ensembles[0])
    g = gff_ensembles[0].grid
    assert assign_cell(TorusField(g, np.full(g.n_points, prm.M + 1.0 + 0j)), prm) is BAD


@given(st.floats(-0.45, 0.45), st.floats(-0.45, 0.45))
def test_nearby_fields_share_a_cell(a, b):
    rng = np.random.default_rng(1)
    spec = GibbsSpec.build(4, 64).free()
    prm = _params(Ensemble(spec, sample_gff_batch(spec.gff, rng, 400)))
    g = spec.grid
    # constants placed at cell centres; perturbations well under half a cell
    centre = (np.floor(a / prm.tau) + 0.5) * prm.tau + 1j * (np.floor(b / prm.tau) + 0.5) * prm.tau
    u = np.full(g.n_points, centre)
    v = u + 0.2 * prm.tau * np.exp(1j * g.nodes)
    assert assign_cell(TorusField(g, u), prm) == assign_cell(TorusField(g, v), prm)


def test_self_coupling_pairs_stay_within_two_cells(gff_ensembles):
    t, _ = gff_ensembles
    prm = _params(t)
    rep = build_coupling(t, t, prm, np.random.default_rng(3))
    cell = [p for p in rep.pairs if p.branch == "cell"]
    assert cell, "self-coupling must use the cell branch"
    gaps = rep.grid_gaps()[[p.branch == "cell" for p in rep.pairs]]
    assert np.all(gaps <= 2 * prm.tau)
    assert sum(rep.branch_counts.values()) == len(t)


def test_pure_correction_mixture_reproduces_approx_marginal(gff_ensembles):
    t, a = gff_ensembles
    prm = _params(t)
    rep = build_coupling(t, a, prm, np.random.default_rng(4), eps=1.0)
    assert rep.branch_counts["refresh"] == len(t)
    got = rep.approx_values()[:, 32].real
    assert ks_2samp(got, a.values[:, 32].real).pvalue > 0.01


def test_coupling_rejects_small_ensembles(gff_ensembles):
    t, a = gff_ensembles
    prm = _params(t)
    with pytest.raises(ValueError, match="at least"):
        build_coupling(t.subsample(100), a, prm, np.random.default_rng(0))


def test_identical_pairs_have_zero_exceedance(gff_ensembles):
    t, _ = gff_ensembles
    q = coupling_quality((t.values, t.grid, t.values, t.grid), 0.1, 4.0)
    assert q.exceedance == 0.0 and q.ci_low == 0.0 and q.ci_high < 0.02


def test_power_envelope_covers_every_point():
    Ls, probs = [16, 32, 64], [0.3, 0.2, 0.05]
    C = fit_power_envelope(Ls, probs, 0.5)
    assert all(p <= C * L**-0.5 + 1e-15 for L, p in zip(Ls, probs))
    assert any(math.isclose(p, C * L**-0.5) for L, p in zip(Ls, probs))


def test_equal_volumes_give_identical_flows():
    spec = GibbsSpec.build(2, 32)
    run = langevin_shared_noise_coupling(2, 2, spec, 4, np.random.default_rng(0), T=0.05)
    assert np.array_equal(run.psi_K, run.psi_L)
    assert np.all(run.ce_distance == 0)


def test_shared_noise_distance_decreases_with_volume():
    spec = GibbsSpec.build(4, 64)
    fam = shared_noise_family([4.0, 16.0], 32.0, spec, 16, np.random.default_rng(5), T=1.0, dt=5e-3)
    assert np.mean(fam[16.0].ce_distance) < np.mean(fam[4.0].ce_distance)


def test_family_rejects_oversized_volumes():
    spec = GibbsSpec.build(4, 64)
    with pytest.raises(ValueError):
        shared_noise_family([8.0], 4.0, spec, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        shared_noise_family([4.0], 8.0, spec, 2, np.random.default_rng(0), init="bogus")
