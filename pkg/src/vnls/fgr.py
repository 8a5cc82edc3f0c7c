"""Resonant index sets, leading-order resonant sources and the Fermi Golden Rule forms.

Conventions.  Complexified fields carry an explicit pair of channels
``(R, I)`` per spinor component, the real and imaginary parts for the
physical unit ``i``; the complexification unit ``ii`` is Python's ``1j``.
Mode amplitudes evolve as ``z ~ exp(ii e t)``; a source forced at frequency
``kappa = e . alpha > omega0`` radiates through the coordinate

    comp 1: (N_R - ii N_I) / sqrt 2,     comp 2: (N_R + ii N_I) / sqrt 2,

which diagonalizes ``i`` on the first, respectively second, component.  With
``L_c = sqrt(2 pi) sum_alpha zeta^alpha s_alpha^c`` and the Plemelj reduction
of the free resolvent, ``Im (k^2 + omega0 - kappa - i0)^{-1} = pi delta``,

    Lambda(kappa, zeta) = - sum_c S(L_c) / (2 rho (2 pi)^3),   rho = sqrt(kappa - omega0),

where ``S(L) = int_{|k| = rho} |L^(k)|^2 dS`` and ``L^(k) = int L e^{-ik.x} dx``.
At leading order ``d/dt sum e_l |z_l|^2 = sum_kappa kappa Lambda(kappa, z)``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre, spherical_jn

from vnls.fields import Grid3, RadialProfile, SpinorField
from vnls.linearization import GridMode, RadialMode, real_sph_harm
from vnls.symmetry import Nonlinearity


class BelowEdgeError(ValueError):
    pass


class NonStrictError(RuntimeError):
    pass


# --- resonant sets --------------------------------------------------------------

@dataclass
class ResonantSets:
    e: np.ndarray
    omega0: float
    M0: list
    M: list

    def to_json(self) -> dict:
        return {"e": self.e.tolist(), "omega0": self.omega0, "M0": [list(m) for m in self.M0],
                "M": [[list(a), list(b)] for a, b in self.M]}


def resonant_sets(e, omega0: float, bigN: int | None = None) -> ResonantSets:
    """Minimal multi-indices ``mu`` with ``e . mu > omega0`` (every unit decrement falls below).

    Breadth-first over ``|mu| = 1, 2, ...`` up to ``2 N + 1`` where ``N`` is the
    largest integer with ``N e_min < omega0``.  ``M`` holds the pairs ``(mu, 0)``
    and ``(0, mu)`` for ``mu`` in ``M0``.
    """
    e = np.asarray(e, float)
    n = e.size
    if n == 0:
        return ResonantSets(e, omega0, [], [])
    if np.any(e <= 0) or np.any(e >= omega0):
        raise ValueError("internal energies must lie in (0, omega0)")
    if bigN is None:
        bigN = int(np.floor(omega0 / e.min()))
        if bigN * e.min() >= omega0:
            bigN -= 1
    M0 = []
    for deg in range(1, 2 * bigN + 2):
        for combo in itertools.combinations_with_replacement(range(n), deg):
            mu = np.bincount(combo, minlength=n)
            if mu @ e <= omega0:
                continue
            if all((mu - np.eye(n, dtype=int)[j]) @ e < omega0 for j in range(n) if mu[j]):
                M0.append(tuple(int(x) for x in mu))
    zero = tuple([0] * n)
    M = [(mu, zero) for mu in M0] + [(zero, mu) for mu in M0]
    return ResonantSets(e, omega0, M0, M)


# --- sphere restriction -----------------------------------------------------------

def radial_transform(L: RadialProfile, rho: float) -> float:
    """``L^(rho) = (4 pi / rho) int_0^inf L(r) sin(rho r) r dr`` (trapezoid; the integrand is even in r)."""
    r = L.grid.r
    return float(4 * np.pi / rho * L.grid.h * np.sum(L.values * np.sin(rho * r) * r))


def sphere_restriction(L: RadialProfile, rho: float) -> float:
    """``int_{|k| = rho} |L^(k)|^2 dS = 4 pi rho^2 |L^(rho)|^2`` for a radial source."""
    if not rho > 0:
        raise BelowEdgeError("rho must be positive: kappa at or below the continuous-spectrum edge")
    return float(4 * np.pi * rho**2 * radial_transform(L, rho) ** 2)


def sphere_restriction_sectors(r: np.ndarray, h: float, sectors: dict, rho: float) -> float:
    """``rho^2 (4 pi)^2 sum_LM |int g_LM(r) j_L(rho r) r^2 dr|^2`` for ``L(x) = sum g_LM(r) Y_LM``."""
    if not rho > 0:
        raise BelowEdgeError("rho must be positive")
    total = 0.0
    for (ell, _m), g in sectors.items():
        I = h * np.sum(g * spherical_jn(ell, rho * r) * r**2)
        total += abs(I) ** 2
    return float(rho**2 * (4 * np.pi) ** 2 * total)


def sphere_nodes(rho: float, n_theta: int = 16):
    """Gauss-Legendre in ``cos theta`` times uniform azimuth; exact for harmonics of degree < ``2 n_theta``."""
    x, wx = roots_legendre(n_theta)
    n_phi = 2 * n_theta
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    ct = np.repeat(x, n_phi)
    st = np.sqrt(1 - ct**2)
    pp = np.tile(ph, n_theta)
    k = rho * np.stack([st * np.cos(pp), st * np.sin(pp), ct], axis=1)
    w = np.repeat(wx, n_phi) * (2 * np.pi / n_phi) * rho**2
    return k, w


def grid_transform_at(values: np.ndarray, grid: Grid3, kpts: np.ndarray) -> np.ndarray:
    """``L^(k) = sum_x L(x) e^{-i k.x} dV`` at arbitrary wavevectors (separable direct sum)."""
    x = grid.x
    n = grid.n
    Ex = np.exp(-1j * np.outer(kpts[:, 0], x))
    Ey = np.exp(-1j * np.outer(kpts[:, 1], x))
    Ez = np.exp(-1j * np.outer(kpts[:, 2], x))
    T = (Ex @ values.reshape(n, n * n)).reshape(-1, n, n)
    T = np.einsum("qj,qjk->qk", Ey, T)
    return np.einsum("qk,qk->q", Ez, T) * grid.cell_volume


def sphere_restriction_grid(values: np.ndarray, grid: Grid3, rho: float, n_theta: int = 16) -> float:
    """Cartesian pipeline: transform on the sphere by direct summation, then quadrature."""
    if not rho > 0:
        raise BelowEdgeError("rho must be positive")
    k, w = sphere_nodes(rho, n_theta)
    Lh = grid_transform_at(values, grid, k)
    return float(np.sum(w * np.abs(Lh) ** 2))


def shell_average(values: np.ndarray, grid: Grid3, rho: float) -> float:
    """Thin-shell oracle: FFT on the periodic grid, mean of ``|L^|^2`` over ``| |k| - rho | < dk/2``, times ``4 pi rho^2``."""
    from vnls import _fft

    Lh = _fft.fftn(values, axes=(0, 1, 2)) * grid.cell_volume
    k = np.sqrt(grid.k2)
    dk = 2 * np.pi / grid.box_length
    shell = np.abs(k - rho) < 0.5 * dk
    return float(4 * np.pi * rho**2 * np.mean(np.abs(Lh[shell]) ** 2))


# --- leading-order sources -------------------------------------------------------

def complexify(A: SpinorField, B: SpinorField | None = None) -> np.ndarray:
    """Channels ``(comp, R/I, ...)`` of ``A + ii B`` with ``ii = 1j``."""
    out = np.empty((2, 2) + A.values.shape[1:], dtype=complex)
    out[:, 0] = A.values.real
    out[:, 1] = A.values.imag
    if B is not None:
        out[:, 0] += 1j * B.values.real
        out[:, 1] += 1j * B.values.imag
    return out


def nonlinear_term(u: np.ndarray, nl: Nonlinearity) -> np.ndarray:
    """``beta(u . u) u`` for a complexified field (``u . u`` is ``ii``-bilinear)."""
    s = np.sum(u * u, axis=(0, 1))
    return nl.beta(s) * u


@dataclass
class ResonantSource:
    alpha: tuple
    kappa: float
    channels: np.ndarray

    def radiating(self) -> np.ndarray:
        """The resonant coordinates ``((N_R - ii N_I)/sqrt2, (N_R + ii N_I)/sqrt2)`` for the two components."""
        c = self.channels
        return np.stack([(c[0, 0] - 1j * c[0, 1]) / np.sqrt(2), (c[1, 0] + 1j * c[1, 1]) / np.sqrt(2)])


def taylor_coefficient(base: np.ndarray, directions: list, alpha, nl: Nonlinearity, radius: float = 0.25,
                       n_samples: int | None = None) -> np.ndarray:
    """Coefficient of ``z^alpha`` in ``N(base + sum z_l d_l)`` by a Cauchy integral on a torus.

    Only variables with ``alpha_l > 0`` are sampled (the others are zero).  For a
    polynomial ``beta`` of degree ``p`` the default ``2 p + 2`` samples per
    variable make the result exact up to roundoff.
    """
    alpha = np.asarray(alpha)
    idx = np.nonzero(alpha)[0]
    if n_samples is None:
        n_samples = 2 * len(nl.poly) + 2 if nl.poly is not None else 16
    K = n_samples
    roots = np.exp(2j * np.pi * np.arange(K) / K)
    acc = np.zeros_like(base)
    for ks in itertools.product(range(K), repeat=idx.size):
        zs = radius * roots[list(ks)]
        u = base.copy()
        for l, z in zip(idx, zs):
            u = u + z * directions[l]
        weight = np.prod(np.conj(roots[list(ks)]) ** alpha[idx])
        acc += weight * nonlinear_term(u, nl)
    return acc / (K**idx.size * radius ** int(alpha.sum()))


def quadratic_polarization(base: np.ndarray, x: np.ndarray, y: np.ndarray, nl: Nonlinearity,
                           beta_second) -> np.ndarray:
    """Closed form of the symmetric quadratic term ``Q(x, y)`` of ``N`` at ``base``."""
    s0 = np.sum(base * base, axis=(0, 1))
    bx = np.sum(base * x, axis=(0, 1))
    by = np.sum(base * y, axis=(0, 1))
    xy = np.sum(x * y, axis=(0, 1))
    bp = nl.beta_prime(s0)
    return bp * bx * y + bp * by * x + (bp * xy + 2 * beta_second(s0) * bx * by) * base


def project_source(channels: np.ndarray, basis, modes: list[GridMode], grid: Grid3) -> np.ndarray:
    """Project a complexified source onto ``X_c`` (both ``ii``-real and ``ii``-imaginary parts)."""
    from vnls.modulation import extract_modes, project_orthogonal

    out = np.empty_like(channels)
    for part, unit in ((np.real, 1.0), (np.imag, 1j)):
        vals = part(channels[:, 0]) + 1j * part(channels[:, 1])
        f = SpinorField(grid, vals)
        if basis is not None:
            f = project_orthogonal(f, basis)
        if modes:
            f = extract_modes(f, modes).f
        if unit == 1.0:
            out[:, 0] = f.values.real
            out[:, 1] = f.values.imag
        else:
            out[:, 0] += 1j * f.values.real
            out[:, 1] += 1j * f.values.imag
    return out


def leading_source_coefficients(Phi: SpinorField, modes: list[GridMode], nl: Nonlinearity, sets: ResonantSets,
                                basis=None, project: bool = True) -> dict:
    """Degree-``|alpha|`` Taylor coefficients of ``beta(|u|^2) u`` at ``Phi`` along ``xi^alpha`` for ``alpha`` in ``M0``.

    This is the leading-order surrogate for the normal-form coefficients
    ``G_{alpha 0}``; the ``(0, alpha)`` coefficients are the ``ii``-conjugates.
    Sources are projected onto ``X_c`` (tangent space and discrete modes
    removed) when ``project`` is set.
    """
    base = complexify(Phi)
    dirs = [complexify(m.A, m.B) for m in modes]
    e = np.array([m.e for m in modes])
    out = {}
    for alpha in sets.M0:
        N = taylor_coefficient(base, dirs, alpha, nl)
        if project:
            N = project_source(N, basis, modes, Phi.grid)
        out[tuple(alpha)] = ResonantSource(tuple(alpha), float(np.asarray(alpha) @ e), N)
    return out


# --- the FGR quadratic forms -------------------------------------------------------

@dataclass
class KappaEntry:
    kappa: float
    rho: float
    alphas: list
    matrix: np.ndarray
    eigenvalues: np.ndarray

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues.max())

    @property
    def margin(self) -> float:
        return float(-self.eigenvalues.max())

    def value(self, zeta) -> float:
        """``Lambda(kappa, zeta)``."""
        zeta = np.asarray(zeta, complex)
        v = np.array([np.prod(zeta ** np.asarray(a)) for a in self.alphas])
        return float(np.real(np.conj(v) @ self.matrix @ v))


@dataclass
class FgrReport:
    omega0: float
    entries: list
    delta_fgr: float
    strict: bool
    positive_excursion: float
    label: str = ""
    notes: list = field(default_factory=list)

    @property
    def margin(self) -> float:
        return min((k.margin for k in self.entries), default=float("nan"))

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "omega0": self.omega0,
            "delta_fgr": self.delta_fgr,
            "strict": self.strict,
            "margin": self.margin,
            "positive_excursion": self.positive_excursion,
            "notes": self.notes,
            "kappa": [
                {"kappa": k.kappa, "rho": k.rho, "alphas": [list(a) for a in k.alphas],
                 "lambda_max": k.lambda_max, "margin": k.margin, "eigenvalues": k.eigenvalues.tolist(),
                 "diagonal": np.real(np.diag(k.matrix)).tolist()}
                for k in self.entries
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def group_kappa(sources: dict, tol: float):
    """Cluster sources whose ``kappa`` agree to ``tol`` (grid anisotropy splits degenerate copies)."""
    items = sorted(sources.values(), key=lambda s: s.kappa)
    groups = []
    for s in items:
        if groups and s.kappa - groups[-1][-1].kappa <= tol:
            groups[-1].append(s)
        else:
            groups.append([s])
    return groups


def check_h9(sources: dict, omega0: float, grid: Grid3, n_theta: int = 16, kappa_tol: float = 5e-3,
             delta_rel: float = 1e-6, label: str = "") -> FgrReport:
    """Assemble ``Lambda(kappa, .)`` as a Hermitian form in ``(zeta^alpha)`` for each resonant ``kappa``.

    Entry ``(alpha, beta)`` is ``-(2 pi) / (2 rho (2 pi)^3) sum_c int conj(s_alpha^c^) s_beta^c^ dS``.
    Strict iff every form has largest eigenvalue ``<= -delta_fgr`` with
    ``delta_fgr = delta_rel * ||G||^2 / omega0`` and ``||G||^2 = 2 pi sum ||s_alpha||^2``.
    """
    entries = []
    gnorm = 0.0
    for s in sources.values():
        rad = s.radiating()
        gnorm += 2 * np.pi * float(np.sum(np.abs(rad) ** 2) * grid.cell_volume)
    delta = delta_rel * gnorm / omega0
    excursion = 0.0
    for grp in group_kappa(sources, kappa_tol * omega0):
        kappa = float(np.mean([s.kappa for s in grp]))
        rho = np.sqrt(kappa - omega0)
        k, w = sphere_nodes(rho, n_theta)
        hats = []
        for s in grp:
            rad = s.radiating()
            hats.append(np.concatenate([grid_transform_at(rad[0], grid, k), grid_transform_at(rad[1], grid, k)]))
        H = np.array(hats)
        ww = np.concatenate([w, w])
        M = -(2 * np.pi) / (2 * rho * (2 * np.pi) ** 3) * (H.conj() * ww) @ H.T
        M = 0.5 * (M + M.conj().T)
        ev = np.linalg.eigvalsh(M)
        scale = max(np.max(np.abs(ev)), 1e-300)
        excursion = max(excursion, float(ev.max() / scale))
        entries.append(KappaEntry(kappa, float(rho), [s.alpha for s in grp], M, ev))
    # vanishing sources give delta = 0 and a zero form, which is not strict
    strict = bool(entries) and delta > 0 and all(en.lambda_max <= -delta for en in entries)
    return FgrReport(omega0, entries, float(delta), strict, excursion, label)


def radiation_reentry_time(box_length: float, kappa: float, omega0: float) -> float:
    """Time for radiation at frequency ``kappa`` (group speed ``2 sqrt(kappa - omega0)``) to cross half a periodic box."""
    return float(box_length / (2 * 2 * np.sqrt(max(kappa - omega0, 1e-12))))


def fgr_decay_prediction(report: FgrReport, z0) -> float:
    """Leading-order ``d/dt sum e_l |z_l|^2 = sum_kappa kappa Lambda(kappa, z0)`` (nonpositive)."""
    if not report.strict:
        raise NonStrictError("decay prediction needs a strict (H9) verdict")
    return float(sum(en.kappa * en.value(z0) for en in report.entries))


# --- radial pipeline (first-block pair sources) ---------------------------------------

def real_gaunt(l1, m1, l2, m2, L, M, n_theta: int = 16) -> float:
    """``int Y_l1m1 Y_l2m2 Y_LM dOmega`` for real spherical harmonics, by exact quadrature."""
    k, w = sphere_nodes(1.0, n_theta)
    X, Y, Z = k.T
    return float(np.sum(w * real_sph_harm(l1, m1, X, Y, Z) * real_sph_harm(l2, m2, X, Y, Z)
                        * real_sph_harm(L, M, X, Y, Z)))


def _beta_second(nl: Nonlinearity):
    if nl.poly is not None:
        c = np.asarray(nl.poly, float)
        d2 = np.array([c[j] * j * (j - 1) for j in range(2, len(c))])
        return lambda s: sum(d2[j] * s**j for j in range(len(d2))) if len(d2) else 0 * s
    return lambda s: (nl.beta_prime(s + 1e-6) - nl.beta_prime(s - 1e-6)) / 2e-6


def radial_pair_sectors(phi: np.ndarray, mode: RadialMode, nl: Nonlinearity, mi: int, mj: int) -> dict:
    """Sector functions ``g_LM(r)`` of the radiating first-component source for ``alpha = e_i + e_j``.

    Both copies come from the same first-block radial mode (angular labels
    ``mi``, ``mj``).  The source is ``c/sqrt2 * phi [(3 b' + 2 b'' phi^2) a^2 - b' w^2 + 2 b' a w] Y_i Y_j``
    with ``c = 2`` for ``i != j`` and ``c = 1`` otherwise; the ``X_c`` projection is not applied.
    """
    r = mode.r
    a, w = mode.a / r, mode.w / r
    s = phi**2
    bp = nl.beta_prime(s)
    bpp = _beta_second(nl)(s)
    f = phi * ((3 * bp + 2 * bpp * s) * a**2 - bp * w**2 + 2 * bp * a * w)
    c = 1.0 if mi == mj else 2.0
    ell = mode.ell
    out = {}
    for L in range(0, 2 * ell + 1, 2):
        for M in range(-L, L + 1):
            G = real_gaunt(ell, mi, ell, mj, L, M)
            if abs(G) > 1e-13:
                out[(L, M)] = c / np.sqrt(2) * G * f
    return out


def radial_first_block_forms(phi: np.ndarray, mode: RadialMode, nl: Nonlinearity, omega0: float, h: float) -> KappaEntry:
    """The ``kappa = 2 e`` form over all copy pairs of one first-block mode, via Fourier-Bessel sectors."""
    ell = mode.ell
    ms = list(range(-ell, ell + 1))
    pairs = list(itertools.combinations_with_replacement(range(len(ms)), 2))
    kappa = 2 * mode.e
    rho = np.sqrt(kappa - omega0)
    r = mode.r
    Ls = sorted({L for L in range(0, 2 * ell + 1, 2)})
    jl = {L: spherical_jn(L, rho * r) for L in Ls}
    coeffs = []
    for i, j in pairs:
        sec = radial_pair_sectors(phi, mode, nl, ms[i], ms[j])
        vec = {}
        for (L, M), g in sec.items():
            vec[(L, M)] = h * np.sum(g * jl[L] * r**2)
        coeffs.append(vec)
    keys = sorted({k for v in coeffs for k in v})
    C = np.array([[v.get(k, 0.0) for k in keys] for v in coeffs])
    # |L^|^2 on the sphere: rho^2 (4 pi)^2 sum_LM |I_LM|^2, with the real (-i)^L phases dropping out
    S = rho**2 * (4 * np.pi) ** 2 * (C @ C.T)
    Mx = -(2 * np.pi) / (2 * rho * (2 * np.pi) ** 3) * S
    alphas = []
    n = len(ms)
    for i, j in pairs:
        a = [0] * n
        a[i] += 1
        a[j] += 1
        alphas.append(tuple(a))
    return KappaEntry(float(kappa), float(rho), alphas, Mx, np.linalg.eigvalsh(Mx))
