import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vnls.fgr import (BelowEdgeError, NonStrictError, ResonantSource, _beta_second, check_h9, complexify,
                      fgr_decay_prediction, leading_source_coefficients, nonlinear_term, quadratic_polarization,
                      radial_first_block_forms, radial_transform, resonant_sets, sphere_restriction,
                      sphere_restriction_grid, sphere_restriction_sectors, taylor_coefficient)
from vnls.fields import Grid3, RadialGrid, RadialProfile, random_field
from vnls.symmetry import cubic_quintic, polynomial_nonlinearity

RG = RadialGrid(25.0, 1000)
G32 = Grid3(32, 8 * np.pi)
NL = cubic_quintic(0.12)


def _gauss_sphere(rho):
    # exp(-r^2/2) has transform (2 pi)^{3/2} exp(-k^2/2)
    return 4 * np.pi * rho**2 * (2 * np.pi) ** 3 * np.exp(-rho**2)


def _brute_minimal(e, omega0):
    e = np.asarray(e)
    top = int(np.ceil(omega0 / e.min())) + 1
    out = set()
    for mu in itertools.product(range(top + 1), repeat=e.size):
        mu = np.array(mu)
        if mu @ e <= omega0:
            continue
        if all((mu - np.eye(e.size, dtype=int)[j]) @ e < omega0 for j in range(e.size) if mu[j]):
            out.add(tuple(int(x) for x in mu))
    return out


# --- resonant sets ---------------------------------------------------------------

@pytest.mark.parametrize("e, expected", [
    ([0.6], {(2,)}),
    ([0.3], {(4,)}),
    ([0.4, 0.7], {(0, 2), (1, 1), (3, 0)}),
])
def test_resonant_sets_examples(e, expected):
    sets = resonant_sets(e, 1.0)
    assert set(sets.M0) == expected
    zero = tuple([0] * len(e))
    assert set(sets.M) == {(m, zero) for m in expected} | {(zero, m) for m in expected}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.15, 0.95), min_size=1, max_size=3))
def test_resonant_sets_match_brute_force(e):
    assert set(resonant_sets(e, 1.0).M0) == _brute_minimal(e, 1.0)


def test_resonant_sets_edge_cases():
    assert resonant_sets([], 1.0).M0 == []
    with pytest.raises(ValueError):
        resonant_sets([1.2], 1.0)
    assert sorted(resonant_sets([0.4, 0.7], 1.0).to_json()["M0"]) == [[0, 2], [1, 1], [3, 0]]


# --- sphere restriction -------------------------------------------------------------

@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
def test_gaussian_oracle_radial(rho):
    L = RadialProfile(RG, np.exp(-RG.r**2 / 2))
    assert sphere_restriction(L, rho) == pytest.approx(_gauss_sphere(rho), rel=1e-8)
    sectors = {(0, 0): np.sqrt(4 * np.pi) * L.values}
    assert sphere_restriction_sectors(RG.r, RG.h, sectors, rho) == pytest.approx(_gauss_sphere(rho), rel=1e-8)


@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
def test_gaussian_oracle_cartesian(rho):
    vals = np.exp(-G32.radius() ** 2 / 2)
    assert sphere_restriction_grid(vals, G32, rho) == pytest.approx(_gauss_sphere(rho), rel=1e-7)


def test_constructed_zero_on_sphere():
    # (2 - r^2) exp(-r^2/2) transforms to (k^2 - 1)(2 pi)^{3/2} exp(-k^2/2)
    L = RadialProfile(RG, (2 - RG.r**2) * np.exp(-RG.r**2 / 2))
    assert radial_transform(L, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert sphere_restriction(L, 1.0) < 1e-20
    assert sphere_restriction(L, 1.5) > 1.0


def test_sphere_restriction_below_edge():
    L = RadialProfile(RG, np.exp(-RG.r**2 / 2))
    for rho in (0.0, -0.5):
        with pytest.raises(BelowEdgeError):
            sphere_restriction(L, rho)
        with pytest.raises(BelowEdgeError):
            sphere_restriction_grid(np.zeros((32,) * 3), G32, rho)
        with pytest.raises(BelowEdgeError):
            sphere_restriction_sectors(RG.r, RG.h, {}, rho)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 2.0))
def test_sphere_restriction_nonnegative(seed, rho):
    vals = random_field(G32, np.random.default_rng(seed % 997)).values[0]
    assert sphere_restriction_grid(vals, G32, rho, n_theta=6) >= 0.0


# --- sources -------------------------------------------------------------------

def _small_fields(seed, count):
    g = Grid3(8, 4.0)
    rng = np.random.default_rng(seed)
    base = complexify(random_field(g, rng, amplitude=0.5))
    dirs = [complexify(random_field(g, rng, amplitude=0.5), random_field(g, rng, amplitude=0.5)) for _ in range(count)]
    return base, dirs


def test_taylor_resums_to_nonlinearity():
    base, (d,) = _small_fields(1, 1)
    z = 0.3 + 0.1j
    # beta(s) u is a polynomial of degree 5 in z along a line
    total = sum(taylor_coefficient(base, [d], [k], NL) * z**k for k in range(6))
    assert np.max(np.abs(total - nonlinear_term(base + z * d, NL))) < 1e-12


def test_taylor_matches_quadratic_polarization():
    base, dirs = _small_fields(2, 2)
    b2 = _beta_second(NL)
    diag = taylor_coefficient(base, dirs, [2, 0], NL)
    assert np.max(np.abs(diag - quadratic_polarization(base, dirs[0], dirs[0], NL, b2))) < 1e-12
    mixed = taylor_coefficient(base, dirs, [1, 1], NL)
    assert np.max(np.abs(mixed - 2 * quadratic_polarization(base, dirs[0], dirs[1], NL, b2))) < 1e-12


def test_taylor_independent_of_radius():
    base, dirs = _small_fields(3, 2)
    a = taylor_coefficient(base, dirs, [2, 1], NL, radius=0.25)
    b = taylor_coefficient(base, dirs, [2, 1], NL, radius=0.6, n_samples=16)
    assert np.max(np.abs(a - b)) < 1e-11 * np.max(np.abs(a))


def test_zero_nonlinearity_gives_zero_sources(lifted, p0, first_block, first_sets):
    lin = polynomial_nonlinearity([0.0, 0.0])
    src = leading_source_coefficients(lifted.soliton(p0), first_block[:1], lin, resonant_sets([first_block[0].e], 1.0),
                                      project=False)
    assert all(np.max(np.abs(s.channels)) == 0.0 for s in src.values())
    rep = check_h9(src, 1.0, lifted.grid, n_theta=6)
    assert not rep.strict and rep.delta_fgr == 0.0


def test_sources_lie_in_continuous_subspace(fgr_sources, first_block, lifted, p0):
    from vnls.fields import SpinorField
    from vnls.modulation import TangentBasis, extract_modes
    basis = TangentBasis(p0, lifted)
    for s in list(fgr_sources.values())[:3]:
        for part in (np.real, np.imag):
            f = SpinorField(lifted.grid, part(s.channels[:, 0]) + 1j * part(s.channels[:, 1]))
            assert np.max(np.abs(basis.pairings(f)) / basis.norms) < 1e-8 * f.norm()
            assert np.max(np.abs(extract_modes(f, first_block).z)) < 1e-8 * f.norm()


# --- quadratic forms ---------------------------------------------------------------

def _random_sources(seed, n=3, kappa=1.7):
    rng = np.random.default_rng(seed)
    out = {}
    for j in range(n):
        ch = rng.standard_normal((2, 2, 32, 32, 32)) + 1j * rng.standard_normal((2, 2, 32, 32, 32))
        ch *= np.exp(-G32.radius() ** 2 / 4)
        alpha = tuple(int(j == i) + int(j == 0) for i in range(n))
        out[alpha] = ResonantSource(alpha, kappa + 1e-4 * j, ch)
    return out


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forms_hermitian_nonpositive(seed):
    rep = check_h9(_random_sources(seed % 1009), 1.0, G32, n_theta=8)
    for en in rep.entries:
        assert np.allclose(en.matrix, en.matrix.conj().T, atol=0)
        assert en.lambda_max <= 1e-12 * np.max(np.abs(en.eigenvalues))
    assert rep.positive_excursion <= 1e-12


def test_constructed_non_strict():
    # a source whose transform vanishes on the resonant sphere |k| = 1
    vals = (2 - G32.radius() ** 2) * np.exp(-G32.radius() ** 2 / 2)
    ch = np.zeros((2, 2, 32, 32, 32), complex)
    ch[0, 0] = vals
    rep = check_h9({(2,): ResonantSource((2,), 2.0, ch)}, 1.0, G32)
    assert len(rep.entries) == 1 and rep.entries[0].rho == pytest.approx(1.0)
    assert not rep.strict
    with pytest.raises(NonStrictError):
        fgr_decay_prediction(rep, [0.01])
    # moving kappa off the zero restores strictness
    rep = check_h9({(2,): ResonantSource((2,), 2.5, ch)}, 1.0, G32)
    assert rep.strict


def test_report_on_first_block(fgr_report, first_sets):
    assert fgr_report.strict and fgr_report.positive_excursion <= 1e-12
    assert len(fgr_report.entries) == 1
    en = fgr_report.entries[0]
    assert sorted(en.alphas) == sorted(first_sets.M0)
    assert en.kappa > 1.0 and en.margin > fgr_report.delta_fgr
    data = fgr_report.to_json()
    assert data["strict"] and data["kappa"][0]["lambda_max"] == pytest.approx(en.lambda_max)


def test_decay_prediction_scaling(fgr_report):
    z = np.array([0.01, 0.0, 0.005j, 0.0, 0.0])
    rate = fgr_decay_prediction(fgr_report, z)
    assert rate < 0
    assert fgr_decay_prediction(fgr_report, np.zeros(5)) == 0.0
    # every resonant alpha has degree two, so the rate is quartic in z
    assert fgr_decay_prediction(fgr_report, 2 * z) == pytest.approx(16 * rate, rel=1e-12)


def test_radial_vs_cartesian(nl, spectrum, dprofile, lifted, p0, first_block, first_sets):
    mode = [m for m in spectrum.modes if m.block == "first"][0]
    rad = radial_first_block_forms(dprofile.values[:-1], mode, nl, 1.0, dprofile.grid.h)
    src = leading_source_coefficients(lifted.soliton(p0), first_block, nl, first_sets, project=False)
    rep = check_h9(src, 1.0, lifted.grid)
    en = rep.entries[0]
    order = [en.alphas.index(a) for a in rad.alphas]
    M = en.matrix[np.ix_(order, order)]
    scale = np.max(np.abs(rad.eigenvalues))
    # eigenvector signs are arbitrary; a sign flip of copy l multiplies entry (a, b) by s_l^(a_l + b_l)
    A = np.array(rad.alphas)
    best = min(np.max(np.abs(np.outer(S, S) * rad.matrix - M))
               for S in (np.prod(np.array(s) ** A, axis=1) for s in itertools.product((1, -1), repeat=A.shape[1])))
    assert best < 1e-2 * scale
    assert np.max(np.abs(np.sort(en.eigenvalues) - np.sort(rad.eigenvalues))) < 1e-2 * scale
