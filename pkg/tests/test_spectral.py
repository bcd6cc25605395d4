import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from gibbslab.spectral import (
    TorusField,
    apply_projector,
    c0_norm,
    calpha_norm,
    ce_norm,
    commutator_apply,
    dyadic_range,
    embed_offset,
    evaluate,
    from_spectral,
    is_dyadic,
    lowpass,
    lp_loc_norm,
    lp_norm,
    lp_piece,
    lp_symbol,
    make_grid,
    norm,
    sigma_weight,
    to_spectral,
)

dyadics = st.sampled_from([1, 2, 4, 8, 16])


def random_field(rng, grid, scale=1.0):
    z = rng.standard_normal((grid.n_points, 2)).view(np.complex128)[:, 0]
    return TorusField(grid, scale * z)


# --- grids -----------------------------------------------------------------


def test_unit_grid_spacing_and_frequencies():
    g = make_grid(1, 8)
    assert g.dx == pytest.approx(2 * math.pi / 8)
    assert sorted(np.rint(g.freqs * g.L).astype(int)) == list(range(-4, 4))


def test_frequencies_live_on_scaled_lattice():
    g = make_grid(10, 256)
    k = g.freqs * 10
    assert np.allclose(k, np.rint(k))
    assert np.max(np.abs(k)) <= 128


def test_odd_node_count_rejected():
    with pytest.raises(ValueError):
        make_grid(2, 7)


def test_nodes_start_at_left_endpoint():
    g = make_grid(3, 48)
    assert g.nodes[0] == pytest.approx(-3 * math.pi)
    assert g.nodes[-1] == pytest.approx(3 * math.pi - g.dx)


# --- transforms --------------------------------------------------------------


@given(st.integers(1, 6), st.sampled_from([16, 32, 64]), st.integers(0, 2**32 - 1))
def test_round_trip_is_exact(L, M, seed):
    g = make_grid(L, M)
    u = random_field(np.random.default_rng(seed), g)
    back = from_spectral(to_spectral(u.values, g), g)
    assert np.max(np.abs(back - u.values)) <= 1e-12


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_parseval_convention(L, seed):
    g = make_grid(L, 64)
    u = random_field(np.random.default_rng(seed), g)
    c = to_spectral(u.values, g)
    lhs = np.sum(np.abs(u.values) ** 2) * g.dx
    rhs = 2 * math.pi * L * np.sum(np.abs(c) ** 2)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_single_mode_has_unit_coefficient():
    g = make_grid(2, 32)
    n = 3 / 2
    u = np.exp(1j * n * g.nodes)
    c = to_spectral(u, g)
    j = int(np.argmin(np.abs(g.freqs - n)))
    assert c[j] == pytest.approx(1.0, abs=1e-13)
    assert np.sum(np.abs(c)) == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(-math.pi * 2, math.pi * 2 - 0.01))
def test_evaluate_band_limited_off_grid(seed, x):
    g = make_grid(2, 32)
    rng = np.random.default_rng(seed)
    modes = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    ns = np.array([0.5, -1.0, 2.5])
    f = lambda y: np.sum(modes * np.exp(1j * ns * np.asarray(y)[..., None]), axis=-1)
    vals = f(g.nodes)
    assert evaluate(vals, g, x) == pytest.approx(f(x), abs=1e-11)


def test_evaluate_at_nodes_returns_stored_values(rng):
    g = make_grid(3, 48)
    u = random_field(rng, g)
    assert np.allclose(evaluate(u.values, g, g.nodes), u.values, atol=1e-12)


def test_embed_offset_matches_node_positions():
    small, big = make_grid(2, 32), make_grid(8, 128)
    off = embed_offset(small, big)
    assert np.allclose(big.nodes[off:off + 32], small.nodes)
    with pytest.raises(ValueError):
        embed_offset(make_grid(2, 30), big)


# --- Littlewood-Paley --------------------------------------------------------


def test_symbol_examples():
    assert lp_symbol(0.5, 1) == 1.0
    assert lp_symbol(1.2, 1) == 0.0
    assert lp_piece(0.0, 2) == 0.0


@given(st.floats(-3, 3), dyadics)
def test_symbol_in_unit_interval_and_even(xi, N):
    s = float(lp_symbol(xi, N))
    assert 0.0 <= s <= 1.0
    assert s == float(lp_symbol(-xi, N))


def test_symbol_is_smooth_and_monotone_on_transition():
    xi = np.linspace(1.0, 1.125, 2001)
    s = lp_symbol(xi, 1)
    assert s[0] == 1.0 and s[-1] == 0.0
    assert np.all(np.diff(s) <= 0)


def test_non_dyadic_rejected():
    assert not is_dyadic(3)
    with pytest.raises(ValueError):
        lp_symbol(0.0, 3)


def test_constant_is_fixed_by_every_lowpass():
    g = make_grid(4, 128)
    u = TorusField(g, np.full(128, 2.5 - 1j))
    for N in dyadic_range(g.nyquist):
        assert np.allclose(apply_projector(u, "leq", N).values, u.values, atol=1e-14)


@given(dyadics, st.integers(0, 40))
def test_projector_kills_high_modes(N, extra):
    g = make_grid(2, 128)
    k = math.ceil(9 / 8 * N * g.L) + extra
    if k / g.L >= g.nyquist:
        return
    assert lp_symbol(k / g.L, N) == 0.0
    u = TorusField(g, np.exp(1j * (k / g.L) * g.nodes))
    # the symbol is exactly zero there; what survives is FFT roundoff on other modes
    assert np.max(np.abs(apply_projector(u, "leq", N).values)) < 1e-13
    high = np.abs(g.freqs) >= 9 / 8 * N
    assert np.all(lp_symbol(g.freqs[high], N) == 0.0)


@given(st.integers(0, 2**32 - 1))
def test_telescoping_sum_reconstructs_field(seed):
    g = make_grid(2, 128)
    u = random_field(np.random.default_rng(seed), g)
    Ns = dyadic_range(g.nyquist)
    total = sum(apply_projector(u, "eq", N).values for N in Ns)
    top = apply_projector(u, "leq", Ns[-1]).values
    assert np.max(np.abs(total - top)) <= 1e-14 * max(1.0, np.max(np.abs(u.values))) * 10
    # above the top piece only modes with |n| > Ns[-1] remain
    rest = u.values - top
    assert np.allclose(lowpass(rest, g, Ns[-1] / 2), 0.0, atol=1e-13)


def test_lowpass_past_band_is_identity(rng):
    g = make_grid(2, 32)
    u = random_field(rng, g)
    assert np.array_equal(lowpass(u.values, g, 100.0), u.values)
    with pytest.raises(ValueError):
        lowpass(u.values, g, 0.5)


def test_projector_above_nyquist_rejected():
    g = make_grid(1, 16)
    with pytest.raises(ValueError):
        apply_projector(TorusField(g, np.zeros(16)), "leq", 16)


# --- norms -------------------------------------------------------------------


@pytest.mark.parametrize("which", ["Lp", "Lp_loc", "C0", "Calpha", "CEtheta"])
def test_zero_field_has_zero_norm(which):
    g = make_grid(2, 64)
    assert norm(TorusField(g, np.zeros(64)), which, interval=(-1, 1)) == 0.0


def test_constant_field_c0_and_calpha():
    g = make_grid(2, 64)
    u = TorusField(g, np.full(64, -3.0 + 4.0j))
    assert norm(u, "C0", interval=(-1, 1)) == pytest.approx(5.0)
    assert norm(u, "Calpha", interval=(-1, 1), alpha=0.3) == pytest.approx(5.0)


def test_identity_map_calpha_one_is_two():
    g = make_grid(20, 4096)
    u = g.nodes.astype(complex)
    val = calpha_norm(u, g, 1.0, (-1.0, 1.0))
    assert val == pytest.approx(2.0, abs=2 * g.dx)


def test_lp_norm_of_constant_on_interval():
    g = make_grid(2, 256)
    u = np.full(256, 2.0 + 0j)
    assert lp_norm(u, g, 3, (-1.0, 1.0)) == pytest.approx(2.0 * 2 ** (1 / 3), rel=1e-12)
    assert lp_norm(u, g, 2) == pytest.approx(2.0 * math.sqrt(4 * math.pi), rel=1e-12)


def test_lp_loc_norm_is_sup_over_unit_radius_windows():
    g = make_grid(4, 512)
    u = np.exp(-g.nodes**2).astype(complex)
    ref = math.sqrt(integrate.quad(lambda x: math.exp(-2 * x * x), -1.0, 1.0)[0])
    # windows snap to nodes, so they are up to one dx shorter than [x0 - 1, x0 + 1]
    assert lp_loc_norm(u, g, 2, (-4.0, 4.0)) == pytest.approx(ref, rel=5e-3)


def test_c0_norm_whole_torus(rng):
    g = make_grid(2, 64)
    u = random_field(rng, g)
    assert c0_norm(u.values, g) == pytest.approx(np.max(np.abs(u.values)))


@given(st.floats(0.05, 1.0))
def test_ce_norm_of_constant_is_constant(theta):
    g = make_grid(3, 96)
    assert ce_norm(np.ones(96), g, theta) == pytest.approx(1.0)


def test_interval_outside_domain_rejected():
    g = make_grid(1, 16)
    with pytest.raises(ValueError):
        c0_norm(np.zeros(16), g, (-5, 5))


# --- weights and commutators -------------------------------------------------


def test_sigma_weight_examples():
    assert sigma_weight(0.0, 3.0) == pytest.approx(math.exp(-1))
    assert sigma_weight(3.0 * math.sqrt(3), 3.0) == pytest.approx(math.exp(-2))


@given(st.floats(0, 100), st.floats(0, 100), st.floats(0.5, 50))
def test_sigma_weight_monotone_in_distance(a, b, R):
    if abs(a - b) < 1e-6:
        return
    lo, hi = sorted((a, b))
    assert sigma_weight(lo, R) >= sigma_weight(hi, R)
    assert sigma_weight(lo, R) > sigma_weight(hi + 1.0, R)


def test_commutator_with_constant_or_zero_vanishes(rng):
    g = make_grid(4, 256)
    u = random_field(rng, g)
    Q = TorusField(g, np.full(256, 1.7))
    assert np.max(np.abs(commutator_apply(Q, u, 4).values)) < 1e-12
    zero = TorusField(g, np.zeros(256))
    assert np.max(np.abs(commutator_apply(random_field(rng, g), zero, 4).values)) == 0.0


def test_commutator_decays_in_cutoff(rng):
    from gibbslab.measures import GffSpec, sample_gff_batch

    g = make_grid(16, 8192)
    Q = np.sin(g.nodes / g.L)
    u = sample_gff_batch(GffSpec(g), rng, 20)
    Rs = [8, 16, 32, 64]
    vals = []
    for R in Rs:
        c = lowpass(Q * u, g, R) - Q * lowpass(u, g, R)
        w = sigma_weight(g.nodes, R)
        vals.append(np.mean(np.sqrt(np.sum(np.abs(c) ** 2 * w, axis=-1) * g.dx)))
    slope = np.polyfit(np.log(Rs), np.log(vals), 1)[0]
    assert slope <= -0.4
