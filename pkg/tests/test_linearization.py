import numpy as np
import pytest
from scipy.linalg import eigh

from vnls.fields import RadialGrid, RadialProfile, symplectic_form
from vnls.groundstate import first_derivative_phi, solve_ground_state
from vnls.linearization import (RadialMode, SpectralData, SpectrumError, big_n, build_operator, check_h6_h7_h8,
                                count_negative_eigenvalues, discrete_ground_state, generalized_kernel_dimension,
                                internal_modes, krein_orthonormalize, save_spectrum)

OMEGA0 = 1.0


def _u(profile):
    return profile.values[:-1] * profile.grid.r[:-1]


def test_operator_symmetric(dprofile, nl):
    for kind in ("Lplus", "Lminus"):
        A = build_operator(dprofile, OMEGA0, 1, kind, nl).matrix
        assert np.max(np.abs(A - A.T)) < 1e-12 * np.max(np.abs(A))


def test_lminus_annihilates_phi(profile, dprofile, nl):
    u = _u(profile)
    raw = build_operator(profile, OMEGA0, 0, "Lminus", nl).apply(u)
    assert np.linalg.norm(raw) < 1e-6 * np.linalg.norm(u)
    # the discrete polish makes the kernel exact at the level of the discretization
    ud = _u(dprofile)
    assert np.linalg.norm(build_operator(dprofile, OMEGA0, 0, "Lminus", nl).apply(ud)) < 1e-11 * np.linalg.norm(ud)


def test_lplus_annihilates_derivative(dprofile, nl):
    g = dprofile.grid
    dphi = first_derivative_phi(dprofile.values, g.r, g.h, np.sqrt(OMEGA0))[:-1] * g.r[:-1]
    res = build_operator(dprofile, OMEGA0, 1, "Lplus", nl).apply(dphi)
    assert np.linalg.norm(res) < 1e-6 * np.linalg.norm(dphi)


def test_dirichlet_ball_oracle(dprofile):
    op = build_operator(dprofile, OMEGA0, 0, "Lminus", zero_potential=True)
    lam = eigh(op.matrix, eigvals_only=True)[0]
    assert lam == pytest.approx(OMEGA0 + (np.pi / dprofile.grid.r_max) ** 2, abs=1e-6)


def test_operator_errors(dprofile, nl):
    coarse = RadialProfile(RadialGrid(25.0, 100), np.exp(-RadialGrid(25.0, 100).r))
    with pytest.raises(ValueError):
        build_operator(coarse, OMEGA0, 0, "Lplus", nl)
    with pytest.raises(ValueError):
        build_operator(dprofile, OMEGA0, 0, "Lzero", nl)


def test_negative_counts(dprofile, nl):
    assert count_negative_eigenvalues(build_operator(dprofile, OMEGA0, 0, "Lplus", nl)) == 1
    for ell in range(3):
        assert count_negative_eigenvalues(build_operator(dprofile, OMEGA0, ell, "Lminus", nl)) == 0
    op = build_operator(dprofile, OMEGA0, 1, "Lplus", nl)
    w = eigh(op.matrix, eigvals_only=True)
    assert count_negative_eigenvalues(op) == 0 and abs(w[0]) < 1e-6


def test_generalized_kernel_dimension(dprofile, nl):
    dim, detail = generalized_kernel_dimension(dprofile, OMEGA0, nl, return_detail=True)
    assert dim == 10
    assert [(d["first"], d["second"]) for d in detail] == [(1, 1), (1, 0), (0, 0)]


def test_kernel_rank_ambiguity_raises(dprofile, nl):
    # a threshold sitting inside the singular-value cluster cannot certify a rank
    with pytest.raises(SpectrumError):
        generalized_kernel_dimension(dprofile, OMEGA0, nl, tau=1.05)


def test_spectrum_structure(spectrum):
    assert [(m.block, m.ell) for m in spectrum.modes] == [("second", 1), ("first", 2)]
    e = spectrum.energies
    assert np.all((e > 0) & (e < OMEGA0))
    assert e[0] == pytest.approx(0.58702, abs=1e-5)
    assert e[1] == pytest.approx(0.8478427, abs=1e-6)
    assert spectrum.N == 2 and spectrum.n_total == 8 and spectrum.bigN == 1
    assert not spectrum.dropped_box_states and not spectrum.unstable and not spectrum.resonance_flags


def test_second_block_matches_direct_eigensolve(spectrum, dprofile, nl):
    for mode in spectrum.modes:
        if mode.block != "second":
            continue
        w = eigh(build_operator(dprofile, OMEGA0, mode.ell, "Lminus", nl).matrix, eigvals_only=True)
        inside = w[(w > 1e-2) & (w < OMEGA0)]
        assert np.min(np.abs(inside - mode.e)) < 1e-8


def test_krein_normalization_and_cross_residuals(spectrum, dprofile, nl):
    h = dprofile.grid.h
    for mode in spectrum.modes:
        if mode.block == "first":
            assert h * mode.a @ mode.w == pytest.approx(0.5, abs=1e-10)
            Lp = build_operator(dprofile, OMEGA0, mode.ell, "Lplus", nl).matrix
            Lm = build_operator(dprofile, OMEGA0, mode.ell, "Lminus", nl).matrix
            nrm = np.linalg.norm(mode.a)
            assert np.linalg.norm(Lp @ mode.a - mode.e * mode.w) < 1e-6 * nrm
            assert np.linalg.norm(Lm @ mode.w - mode.e * mode.a) < 1e-6 * nrm
        else:
            assert h * mode.w @ mode.w == pytest.approx(0.5, abs=1e-10)
        assert mode.krein == pytest.approx(0.5, abs=1e-10)


def test_spectrum_refinement(nl):
    e = []
    for n in (1000, 2000):
        prof = discrete_ground_state(solve_ground_state(OMEGA0, nl, grid=RadialGrid(25.0, n)), OMEGA0, nl)
        e.append(internal_modes(prof, OMEGA0, nl, ell_max=2, box_check=False).energies)
    assert e[0].shape == e[1].shape
    assert np.max(np.abs(e[0] - e[1])) < 1e-4


def test_box_states_approach_edge(nl):
    gaps = []
    for r_max in (25.0, 50.0):
        prof = solve_ground_state(OMEGA0, nl, grid=RadialGrid(r_max, int(r_max * 40)))
        w = eigh(build_operator(prof, OMEGA0, 0, "Lminus", nl).matrix, eigvals_only=True)
        gaps.append(w[w > OMEGA0][0] - OMEGA0)
    assert gaps[1] < 0.3 * gaps[0]


def _fixture(es, omega0=1.0):
    r = np.linspace(0.1, 1, 10)
    modes = [RadialMode(e, "first", 0, r, r, r, 0.5, 0.0) for e in es]
    return SpectralData(omega0, modes)


@pytest.mark.parametrize("e, expected", [(0.7, 1), (0.4, 2), (0.5, 1), (0.26, 3)])
def test_big_n(e, expected):
    assert big_n([e], 1.0) == expected


def test_h8_commensurate_fixture():
    out = check_h6_h7_h8(_fixture([0.3, 0.6]))
    assert not out["H8"]["pass"] and out["H8"]["offending_mu"] == [2, -1]


def test_h8_generic_fixture():
    out = check_h6_h7_h8(_fixture([0.587, 0.848]))
    assert out["H8"]["pass"] and out["H8"]["bigN"] == 1
    assert out["H6"]["pass"] and out["H7"]["pass"]


def test_h7_rejects_edge_and_duplicates():
    bad = _fixture([0.5, 1.2])
    assert not check_h6_h7_h8(bad)["H7"]["pass"]


def test_h_checks_on_computed_spectrum(spectrum):
    out = check_h6_h7_h8(spectrum)
    assert all(out[k]["pass"] for k in ("H6", "H7", "H8"))


def test_empty_spectrum():
    sp = SpectralData(1.0, [])
    assert sp.N == 0 and sp.bigN == 0
    out = check_h6_h7_h8(sp)
    assert out["H7"]["pass"] and out["H8"]["pass"]


def test_save_spectrum(tmp_path, spectrum):
    save_spectrum(tmp_path / "spectrum.json", spectrum)
    import json
    data = json.loads((tmp_path / "spectrum.json").read_text())
    assert {"omega0", "modes", "N", "n", "bigN", "flags"} <= set(data)
    assert data["modes"][1]["ell"] == 2 and data["modes"][1]["krein"] == pytest.approx(0.5)
    spectrum.save_eigenfunctions(tmp_path / "eig.csv")
    cols = (tmp_path / "eig.csv").read_text().splitlines()[0].split(",")
    assert cols == ["r", "a_0", "w_0", "a_1", "w_1"]


def test_grid_modes(modes):
    assert [(m.block, m.ell, m.m) for m in modes] == (
        [("second", 1, m) for m in (-1, 0, 1)] + [("first", 2, m) for m in range(-2, 3)])
    for m in modes:
        assert m.residual < 1e-6
    first = np.array([m.e for m in modes if m.block == "first"])
    assert np.all(np.abs(first - 0.8478427) < 1e-3)
    second = np.array([m.e for m in modes if m.block == "second"])
    assert np.all(np.abs(second - 0.58702) < 1e-3)


def test_grid_modes_krein_orthonormal(modes):
    n = len(modes)
    P = np.array([[symplectic_form(modes[i].A, modes[j].B) for j in range(n)] for i in range(n)])
    assert np.max(np.abs(P - 0.5 * np.eye(n))) < 1e-8
    AA = np.array([[symplectic_form(modes[i].A, modes[j].A) for j in range(n)] for i in range(n)])
    assert np.max(np.abs(AA)) < 1e-10


def test_krein_orthonormalize_restores_pairing(modes):
    ms = [m for m in modes if m.block == "first"]
    mixed = [ms[0]] + [type(m)(m.e, m.block, m.ell, m.m, m.A + ms[0].A * 0.3, m.B + ms[0].B * 0.3, m.residual)
                       for m in ms[1:]]
    out = krein_orthonormalize(mixed)
    for i, a in enumerate(out):
        for j, b in enumerate(out):
            assert symplectic_form(a.A, b.B) == pytest.approx(0.5 * (i == j), abs=1e-10)
