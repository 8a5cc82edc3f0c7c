import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vnls.fields import Grid3, SpinorField, inner_product, random_field, symplectic_form
from vnls.symmetry import (GroupElement, SolitonParams, apply_group, cubic, cubic_quintic, diamond, energy,
                           energy_gradient, expression_nonlinearity, invariants, lambda_of_p, make_soliton,
                           nonlinearity_from_config, pi_internal, polynomial_nonlinearity, quaternion,
                           quaternion_product, su2_pi_transform)

G16 = Grid3(16, 2 * np.pi)
NL = cubic_quintic(0.12)


def _field(seed, grid=G16, amp=0.5):
    return random_field(grid, np.random.default_rng(seed), amplitude=amp)


def _group(rng, translate=True):
    tau = rng.uniform(-np.pi, np.pi, 4)
    if not translate:
        tau[:3] = 0.0
    a = complex(*rng.standard_normal(2))
    b = complex(*rng.standard_normal(2))
    return GroupElement(tau, a, b)


# --- nonlinearity ---------------------------------------------------------------

def test_cubic_quintic_values():
    s = np.array([0.0, 0.5, 2.0])
    assert np.allclose(NL.beta(s), -s + 0.12 * s**2)
    assert np.allclose(NL.beta_prime(s), -1 + 0.24 * s)
    assert np.allclose(NL.B(s), -s**2 / 2 + 0.04 * s**3)


def test_nonlinearity_check():
    chk = NL.check()
    assert chk["H1"] and chk["B_matches_beta"]
    # quintic growth sits exactly at the energy-critical exponent
    assert chk["growth_exponent_alpha_min"] == pytest.approx(5.0, abs=0.05)
    assert not chk["H2"]
    assert cubic().check()["H2"]


def test_polynomial_requires_beta0():
    with pytest.raises(ValueError):
        polynomial_nonlinearity([1.0, 2.0])


def test_expression_matches_polynomial():
    ex = expression_nonlinearity("-s + 0.12*s**2")
    s = np.linspace(0, 3, 7)
    for f in ("beta", "beta_prime", "B"):
        assert np.allclose(getattr(ex, f)(s), getattr(NL, f)(s), atol=1e-14)
    assert ex.poly == pytest.approx((0.0, -1.0, 0.12))


def test_expression_non_polynomial():
    ex = expression_nonlinearity("-s/(1+s)")
    chk = ex.check()
    assert chk["B_matches_beta"] and chk["H1"] and ex.poly is None


def test_nonlinearity_from_config():
    assert nonlinearity_from_config({"kind": "cubic"}).poly == (0.0, -1.0)
    with pytest.raises(ValueError):
        nonlinearity_from_config({"kind": "sextic"})


def test_complex_arguments_pass_through():
    z = np.array([0.3 + 0.4j])
    assert np.allclose(NL.beta(z), -z + 0.12 * z**2)


# --- group action ---------------------------------------------------------------

def test_identity_and_phase():
    u = _field(1)
    assert np.allclose(apply_group(GroupElement.identity(), u).values, u.values)
    g = GroupElement([0, 0, 0, 0.7])
    w = apply_group(g, u)
    assert np.allclose(w.values[0], np.exp(0.7j) * u.values[0])
    assert np.allclose(w.values[1], np.exp(-0.7j) * u.values[1])


def test_su2_normalized():
    g = GroupElement(np.zeros(4), 3.0, 4.0j)
    assert abs(g.a) ** 2 + abs(g.b) ** 2 == pytest.approx(1.0, abs=1e-15)


def test_translation_by_grid_step_is_roll():
    u = _field(2)
    h = G16.spacing
    w = apply_group(GroupElement([h, 0, 0, 0]), u)
    assert np.allclose(w.values, np.roll(u.values, -1, axis=1), atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_su2_composition_matches_quaternions(seed):
    rng = np.random.default_rng(seed)
    g1, g2 = _group(rng, False), _group(rng, False)
    g1.tau[3] = g2.tau[3] = 0.0
    u = _field(seed % 1000)
    lhs = apply_group(g1, apply_group(g2, u))
    rhs = apply_group(g1 @ g2, u)
    assert np.max(np.abs(lhs.values - rhs.values)) < 1e-12
    assert np.allclose(quaternion(g1 @ g2), quaternion_product(quaternion(g1), quaternion(g2)), atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_group_inverse(seed):
    rng = np.random.default_rng(seed)
    g = _group(rng)
    u = _field(seed % 997)
    back = apply_group(g.inverse(), apply_group(g, u))
    assert np.max(np.abs(back.values - u.values)) < 1e-12


def test_group_json_roundtrip():
    g = _group(np.random.default_rng(3))
    h = GroupElement.from_json(g.to_json())
    assert np.allclose(h.tau, g.tau) and h.a == pytest.approx(g.a) and h.b == pytest.approx(g.b)
    assert set(json.loads(g.to_json())) == {"tau", "a", "b"}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariants_and_symplectic_form_preserved(seed):
    rng = np.random.default_rng(seed)
    g = _group(rng)
    u, w = _field(seed % 991), _field(seed % 991 + 1)
    i0, i1 = invariants(u, NL), invariants(apply_group(g, u), NL)
    for j in range(4):
        assert i1.pi[j] == pytest.approx(i0.pi[j], rel=1e-10, abs=1e-10 * i0.pi[3])
    assert i1.energy == pytest.approx(i0.energy, rel=1e-10)
    assert symplectic_form(apply_group(g, u), apply_group(g, w)) == pytest.approx(
        symplectic_form(u, w), rel=1e-10, abs=1e-10 * u.norm() * w.norm())
    q0 = np.sum(pi_internal(u) ** 2)
    g_su2 = GroupElement(np.zeros(4), g.a, g.b)
    assert np.sum(pi_internal(apply_group(g_su2, u)) ** 2) == pytest.approx(q0, rel=1e-10)


@pytest.mark.parametrize("j", range(1, 8))
def test_diamonds_symmetric(j):
    u, v = _field(20 + j), _field(40 + j)
    assert inner_product(diamond(j, u), v) == pytest.approx(inner_product(u, diamond(j, v)), rel=1e-10, abs=1e-10)


def test_invariant_bounds():
    inv = invariants(_field(5), NL)
    assert inv.pi[3] >= 0
    assert all(abs(inv.pi[j]) <= inv.pi[3] * (1 + 1e-12) for j in (4, 5, 6))


def test_zero_field():
    inv = invariants(SpinorField.zeros(G16), NL)
    assert np.all(inv.pi == 0) and inv.energy == 0
    assert np.all(energy_gradient(SpinorField.zeros(G16), NL).values == 0)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_energy_gradient_directional_derivative(seed):
    u, h = _field(seed % 1009), _field(seed % 1009 + 7)
    eps = 1e-5
    fd = (energy(u + h * eps, NL) - energy(u - h * eps, NL)) / (2 * eps)
    an = inner_product(energy_gradient(u, NL), h)
    assert fd == pytest.approx(an, rel=1e-7, abs=1e-9)


# --- solitary waves -------------------------------------------------------------

def test_lambda_of_p():
    assert np.allclose(lambda_of_p(SolitonParams(1.0)), [0, 0, 0, -1, 0, 0, 0])
    lam = lambda_of_p(SolitonParams(1.0, (2.0, 0, 0)))
    assert lam[3] == pytest.approx(-2.0)
    assert np.all(lam[4:] == 0)


def test_soliton_invariants(lifted):
    p = lifted.params(1.0, (0.5, 0.0, 0.0))
    Phi = lifted.soliton(p)
    inv = invariants(Phi, lifted.nl)
    assert inv.pi[3] == pytest.approx(p.p4, rel=1e-12)
    assert np.allclose(inv.pi[4:6], 0.0, atol=1e-12 * p.p4)
    assert inv.pi[6] == pytest.approx(inv.pi[3], rel=1e-12)
    assert np.allclose(inv.pi[:3], p.p[:3], rtol=1e-6, atol=1e-8 * p.p4)
    Phi0 = lifted.soliton(lifted.params(1.0))
    assert np.allclose(invariants(Phi0, lifted.nl).pi[:3], 0.0, atol=1e-10 * p.p4)


def test_soliton_lagrange_identity(lifted):
    # exact for the grid equation at interpolation nodes, interpolation-limited in between
    for om, tol in ((float(lifted.nodes[3]), 1e-11), (1.0, 1e-6)):
        p0 = lifted.params(om)
        Phi0 = lifted.soliton(p0)
        res = energy_gradient(Phi0, lifted.nl) - diamond(4, Phi0) * lambda_of_p(p0)[3]
        assert res.norm() < tol * Phi0.norm()
    # moving soliton: commensurate velocity, residual limited by the grid's spectral tail
    p = lifted.params(1.0, (0.5, -0.5, 0.0))
    Phi = lifted.soliton(p)
    lam = lambda_of_p(p)
    res = energy_gradient(Phi, lifted.nl)
    for j in range(1, 8):
        res = res - diamond(j, Phi) * lam[j - 1]
    assert res.norm() < 1e-3 * Phi.norm()
    flipped = energy_gradient(Phi, lifted.nl)
    lam[:3] *= -1
    for j in range(1, 8):
        flipped = flipped - diamond(j, Phi) * lam[j - 1]
    assert flipped.norm() > 0.1 * Phi.norm()


def test_make_soliton(profile, grid48):
    p = SolitonParams.from_profile(1.0, profile)
    u = make_soliton(p, profile, grid48)
    assert np.all(u.values[0].imag == 0) and np.all(u.values[1] == 0)
    pv = SolitonParams.from_profile(1.0, profile, (0.5, 0.0, 0.0))
    uv = make_soliton(pv, profile, grid48)
    assert 0.5 * inner_product(uv, uv) == pytest.approx(0.5 * profile.l2_norm_sq(), rel=1e-4)
    assert inner_product(uv, uv) == pytest.approx(inner_product(u, u), rel=1e-12)
    with pytest.raises(ValueError):
        make_soliton(SolitonParams(1.0, (20.0, 0, 0), 1.0), profile, grid48)


def test_soliton_params_validation():
    with pytest.raises(ValueError):
        SolitonParams(-1.0)
    p = SolitonParams(1.0, (1.0, 0, 0), 10.0)
    assert np.allclose(p.p, [5.0, 0, 0, 10.0, 0, 0, 10.0])


# --- SU(2) closed forms ----------------------------------------------------------

def test_su2_pi_transform_examples():
    assert np.allclose(su2_pi_transform(0.0, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])
    b = 0.3
    out = su2_pi_transform(b, [0.0, 0.0, 2.0])
    assert out[0] == pytest.approx(-2 * np.sqrt(1 - b**2) * b * 2.0)
    assert out[2] == pytest.approx((1 - 2 * b**2) * 2.0)
    with pytest.raises(ValueError):
        su2_pi_transform(1.5, [0, 0, 1])


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7), st.integers(0, 2**32 - 1))
def test_su2_pi_transform_matches_grid(bR, bI, seed):
    b = complex(bR, bI)
    if abs(b) >= 1:
        return
    psi = _field(seed % 1013)
    direct = pi_internal(apply_group(GroupElement.from_b(b), psi))
    closed = su2_pi_transform(b, pi_internal(psi))
    assert np.allclose(direct, closed, rtol=1e-10, atol=1e-10 * psi.norm() ** 2)
    assert np.sum(closed**2) == pytest.approx(np.sum(pi_internal(psi) ** 2), rel=1e-12)
