"""Linearized operators ``L_+``, ``L_-`` about the ground state and the discrete spectrum.

Sector operators act on ``u = r R(r)`` for a perturbation ``R(r) Y_lm``:

    A u = -u'' + l(l+1)/r^2 u + (omega + V(r)) u,

discretized by the fourth-order five-point stencil on the nodes ``r_1..r_{n-1}``
with ``u(0) = 0``, the parity ghost ``u(-h) = (-1)^(l+1) u(h)`` and an odd
ghost at ``r_max`` (Dirichlet).  The matrices are symmetric.

Eigenvector conventions for the linearization ``H`` (``H xi = ii e xi``, with
``ii`` the complexification unit, stored as Python's ``1j``):

* first block (component ``u_1``): ``A = (a, 0)``, ``B = (i w, 0)`` with
  ``L_+ a = e w``, ``L_- w = e a`` and ``<a, w> = 1/2``;
* second block (component ``u_2``): ``A = (0, w)``, ``B = (0, -i w)`` with
  ``L_- w = e w`` and ``||w||^2 = 1/2``.

Both satisfy the Krein normalization ``Omega(A, B) = 1/2``.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh
from scipy.sparse.linalg import LinearOperator, minres
from scipy.special import sph_harm_y

from vnls import _fft
from vnls.fields import Grid3, RadialGrid, RadialProfile, SpinorField, symplectic_form
from vnls.symmetry import Nonlinearity

_C4 = np.array([-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12])


class SpectrumError(RuntimeError):
    pass


@dataclass
class RadialSectorOperator:
    ell: int
    kind: str
    matrix: np.ndarray
    r: np.ndarray
    h: float
    omega: float
    potential: np.ndarray

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def eigh(self):
        return eigh(self.matrix)

    @property
    def size(self) -> int:
        return self.r.size


def sector_matrix(r: np.ndarray, h: float, ell: int, omega: float, potential: np.ndarray) -> np.ndarray:
    n = r.size
    c = _C4 / h**2
    A = np.zeros((n, n))
    for off in range(-2, 3):
        idx = np.arange(max(0, -off), min(n, n - off))
        A[idx, idx + off] = -c[off + 2]
    parity = -1.0 if ell % 2 == 0 else 1.0
    A[0, 0] -= c[0] * parity
    A[-1, -1] -= c[0] * (-1.0)
    A[np.arange(n), np.arange(n)] += ell * (ell + 1) / r**2 + omega + potential
    return A


def potentials(phi: np.ndarray, nl: Nonlinearity) -> tuple[np.ndarray, np.ndarray]:
    s = phi**2
    return nl.beta(s) + 2 * nl.beta_prime(s) * s, nl.beta(s)


def build_operator(profile: RadialProfile, omega: float, ell: int, kind: str,
                   nl: Nonlinearity | None = None, zero_potential: bool = False) -> RadialSectorOperator:
    """``kind`` is ``"Lplus"`` or ``"Lminus"``; nodes are the profile's grid without ``r_max``."""
    g = profile.grid
    if g.h * np.sqrt(omega) > 1 / 8:
        raise ValueError(f"radial grid too coarse: {1 / (g.h * np.sqrt(omega)):.2f} points per 1/sqrt(omega), need 8")
    if kind not in ("Lplus", "Lminus"):
        raise ValueError(f"unknown operator kind {kind!r}")
    r = g.r[:-1]
    if zero_potential:
        V = np.zeros_like(r)
    else:
        if nl is None:
            raise ValueError("nonlinearity required")
        Vp, Vm = potentials(profile.values[:-1], nl)
        V = Vp if kind == "Lplus" else Vm
    return RadialSectorOperator(ell, kind, sector_matrix(r, g.h, ell, omega, V), r, g.h, omega, V)


def discrete_ground_state(profile: RadialProfile, omega: float, nl: Nonlinearity,
                          tol: float = 1e-13, max_iter: int = 20) -> RadialProfile:
    """Newton-polish ``profile`` so that ``L_-`` of this discretization annihilates it exactly.

    The sector operator's truncation error (fourth order) otherwise leaves
    ``L_- phi`` at the ``1e-8`` level, which blurs the kernel of ``L_-``.
    """
    g = profile.grid
    r = g.r[:-1]
    u = profile.values[:-1] * r
    zeros = np.zeros_like(r)
    base = sector_matrix(r, g.h, 0, omega, zeros)
    for _ in range(max_iter):
        phi = u / r
        Vp, Vm = potentials(phi, nl)
        F = base @ u + Vm * u
        J = base + np.diag(Vp)
        step = np.linalg.solve(J, F)
        u = u - step
        if np.max(np.abs(step)) < tol * np.max(np.abs(u)):
            break
    return RadialProfile(g, np.append(u / r, 0.0))


def _polish_pair(Lp, Lm, e, a, w, iters=3):
    """Inverse iteration on ``diag(L_+, L_-) x = e [[0,1],[1,0]] x`` (removes product roundoff)."""
    n = a.size
    K = np.zeros((2 * n, 2 * n))
    K[:n, :n], K[n:, n:] = Lp, Lm
    S = np.zeros_like(K)
    S[:n, n:] = S[n:, :n] = np.eye(n)
    x = np.concatenate([a, w])
    for _ in range(iters):
        y = np.linalg.solve(K - e * S, S @ x)
        x = y / np.sqrt(abs(y @ S @ y))
        e = float(x @ K @ x) / float(x @ S @ x)
    a, w = x[:n], x[n:]
    if a @ w < 0:
        w = -w
    return e, a, w


def count_negative_eigenvalues(op: RadialSectorOperator, delta0: float | None = None) -> int:
    d = 1e-10 * op.omega if delta0 is None else delta0
    w = eigh(op.matrix, eigvals_only=True)
    return int(np.sum(w < -d))


def radial_norm_sq(u: np.ndarray, h: float) -> float:
    """``||R Y||^2 = int R^2 r^2 dr`` for ``u = r R`` and a unit spherical harmonic."""
    return float(h * np.sum(u**2))


# --- spectral data -----------------------------------------------------------

@dataclass
class RadialMode:
    e: float
    block: str          # "first" or "second"
    ell: int
    r: np.ndarray       # nodes r_1..r_{n-1}
    a: np.ndarray       # u-form (r R) of the real part profile (first block; zeros for second)
    w: np.ndarray       # u-form of the partner profile
    krein: float        # Omega(A, B) (target 1/2)
    residual: float

    @property
    def multiplicity(self) -> int:
        return 2 * self.ell + 1


@dataclass
class SpectralData:
    omega0: float
    modes: list                                 # RadialMode, one per (e, block, ell)
    resonance_flags: list = field(default_factory=list)
    dropped_box_states: list = field(default_factory=list)
    unstable: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def energies(self) -> np.ndarray:
        return np.array([m.e for m in self.modes])

    @property
    def distinct_e(self) -> np.ndarray:
        e = np.sort(self.energies)
        if e.size == 0:
            return e
        keep = [e[0]]
        for x in e[1:]:
            if x - keep[-1] > 1e-9 * self.omega0:
                keep.append(x)
        return np.array(keep)

    @property
    def N(self) -> int:
        return int(self.distinct_e.size)

    @property
    def n_total(self) -> int:
        return int(sum(m.multiplicity for m in self.modes))

    @property
    def bigN(self) -> int:
        return big_n(self.distinct_e, self.omega0)

    def restricted(self, block: str) -> "SpectralData":
        return SpectralData(self.omega0, [m for m in self.modes if m.block == block],
                            self.resonance_flags, self.dropped_box_states, self.unstable, dict(self.meta))

    def expanded(self) -> list[tuple[int, int]]:
        """``(mode index, m)`` for every spherical-harmonic copy, in a fixed order."""
        return [(i, m) for i, mode in enumerate(self.modes) for m in range(-mode.ell, mode.ell + 1)]

    def copy_energies(self) -> np.ndarray:
        return np.array([self.modes[i].e for i, _ in self.expanded()])

    def to_json(self) -> dict:
        return {
            "omega0": self.omega0,
            "modes": [
                {"e": m.e, "e_over_omega": m.e / self.omega0, "block": m.block, "ell": m.ell,
                 "multiplicity": m.multiplicity, "krein": m.krein, "residual": m.residual}
                for m in self.modes
            ],
            "N": self.N,
            "n": self.n_total,
            "bigN": self.bigN if self.modes else 0,
            "flags": {"edge_resonance": self.resonance_flags, "dropped_box_states": self.dropped_box_states,
                      "unstable": self.unstable},
            **self.meta,
        }

    def save_eigenfunctions(self, path) -> None:
        if not self.modes:
            Path(path).write_text("r\n")
            return
        cols = ["r"]
        data = [self.modes[0].r]
        for k, m in enumerate(self.modes):
            cols += [f"a_{k}", f"w_{k}"]
            data += [m.a / m.r, m.w / m.r]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for row in np.array(data).T:
                wr.writerow([repr(float(x)) for x in row])


def big_n(e, omega0) -> int:
    """``sup_l inf{n : n e_l >= omega0} - 1``."""
    e = np.asarray(e, float)
    if e.size == 0:
        return 0
    return int(max(int(np.ceil(omega0 / x - 1e-12)) for x in e) - 1)


def _first_block(Lp, wm, Um, omega, kernel_frac):
    if wm[0] < -1e-8 * omega:
        raise SpectrumError(f"L_- has a negative eigenvalue {wm[0]:.3e}")
    sq = (Um * np.sqrt(np.clip(wm, 0, None))) @ Um.T
    M = sq @ Lp @ sq
    M = 0.5 * (M + M.T)
    e2, Y = eigh(M, subset_by_value=(-np.inf, omega**2))
    unstable = [float(x) for x in e2 if x < -(kernel_frac * omega) ** 2]
    out = []
    for lam, y in zip(e2, Y.T):
        if not (kernel_frac * omega) ** 2 < lam < omega**2:
            continue
        e = np.sqrt(lam)
        a = sq @ y
        w = Lp @ a / e
        out.append((e, a, w))
    return out, unstable


def internal_modes(profile: RadialProfile, omega: float, nl: Nonlinearity, ell_max: int = 6,
                   box_check: bool = True, kernel_frac: float = 1e-2, delta_edge: float = 1e-3,
                   box_rel: float = 1e-3) -> SpectralData:
    """Discrete spectrum in ``(0, omega)`` of both blocks for sectors ``0..ell_max``.

    Sectors are scanned upward and the scan stops at the first ``l`` where both
    ``L_+`` and ``L_-`` are bounded below by ``omega`` (no mode can appear above it).

    Box states are removed by recomputing on a grid extended by 25% in ``r_max``
    (same spacing) and dropping eigenvalues that move by more than ``box_rel``.
    """
    g = profile.grid
    raw = _sector_modes(profile, omega, nl, ell_max, kernel_frac)
    dropped = []
    if box_check:
        n_ext = int(round(1.25 * g.n_points))
        g2 = RadialGrid(g.h * n_ext, n_ext)
        tail_r = g2.r[g.n_points:]
        k = np.sqrt(omega)
        ext = np.concatenate([profile.values,
                              profile.values[-1] * g.r[-1] * np.exp(-k * (tail_r - g.r[-1])) / tail_r])
        raw2 = _sector_modes(RadialProfile(g2, ext), omega, nl, ell_max, kernel_frac)
        keep = []
        for m in raw["modes"]:
            cands = [x.e for x in raw2["modes"] if x.block == m.block and x.ell == m.ell]
            if cands and min(abs(c - m.e) for c in cands) <= box_rel * m.e:
                keep.append(m)
            else:
                dropped.append({"e": m.e, "block": m.block, "ell": m.ell})
        modes = keep
    else:
        modes = raw["modes"]
    modes.sort(key=lambda m: (m.e, m.block, m.ell))
    flags = [{"e": m.e, "block": m.block, "ell": m.ell} for m in modes if omega - m.e < delta_edge * omega]
    return SpectralData(omega, modes, flags, dropped, raw["unstable"],
                        {"r_max": g.r_max, "n_points": g.n_points, "ell_max": ell_max})


def _sector_modes(profile, omega, nl, ell_max, kernel_frac):
    g = profile.grid
    h = g.h
    modes, unstable = [], []
    for ell in range(ell_max + 1):
        Lp = build_operator(profile, omega, ell, "Lplus", nl).matrix
        Lm = build_operator(profile, omega, ell, "Lminus", nl).matrix
        r = g.r[:-1]
        wm, Um = eigh(Lm)
        if ell > 0 and wm[0] >= omega and eigh(Lp, eigvals_only=True, subset_by_index=(0, 0))[0] >= omega:
            break
        first, unst = _first_block(Lp, wm, Um, omega, kernel_frac)
        unstable += [{"ell": ell, "e2": x} for x in unst]
        for e, a, w in first:
            e, a, w = _polish_pair(Lp, Lm, e, a, w)
            s = h * np.dot(a, w)
            a, w = a / np.sqrt(2 * s), w / np.sqrt(2 * s)
            res = max(np.linalg.norm(Lp @ a - e * w), np.linalg.norm(Lm @ w - e * a)) / np.linalg.norm(a)
            modes.append(RadialMode(float(e), "first", ell, r, a, w, float(h * np.dot(a, w)), float(res)))
        for lam, w in zip(wm, Um.T):
            if not kernel_frac * omega < lam < omega:
                continue
            w = w / np.sqrt(2 * h * np.dot(w, w))
            res = np.linalg.norm(Lm @ w - lam * w) / np.linalg.norm(w)
            modes.append(RadialMode(float(lam), "second", ell, r, np.zeros_like(w), w,
                                    float(h * np.dot(w, w)), float(res)))
    return {"modes": modes, "unstable": unstable}


# --- generalized kernel ------------------------------------------------------

def _near_zero(sv: np.ndarray, tau: float, label: str) -> int:
    sv = np.sort(sv)
    k = int(np.sum(sv < tau))
    upper = sv[k] if k < sv.size else np.inf
    lower = sv[k - 1] if k > 0 else tau / 10
    gap = upper / max(lower, 1e-300)
    if gap < 10:
        raise SpectrumError(f"ambiguous rank in {label}: singular values {sv[: k + 3].tolist()} (gap {gap:.2f})")
    return k


def generalized_kernel_dimension(profile: RadialProfile, omega: float, nl: Nonlinearity,
                                 ell_max: int = 2, tau: float | None = None, return_detail: bool = False):
    """Dimension of the generalized kernel of the linearization, counted sector by sector.

    For the first block the square is ``-diag(L_- L_+, L_+ L_-)`` and the two
    products share singular values; for the second block it is ``-diag(L_-^2, L_-^2)``.
    Each sector contributes ``2 (2 l + 1)`` times the number of near-zero singular values.
    """
    tau = 1e-4 * omega**2 if tau is None else tau
    total, detail = 0, []
    for ell in range(ell_max + 1):
        Lp = build_operator(profile, omega, ell, "Lplus", nl).matrix
        Lm = build_operator(profile, omega, ell, "Lminus", nl).matrix
        sv1 = np.linalg.svd(Lm @ Lp, compute_uv=False)
        sv2 = np.abs(eigh(Lm, eigvals_only=True)) ** 2
        k1 = _near_zero(sv1, tau, f"first block l={ell}")
        k2 = _near_zero(sv2, tau, f"second block l={ell}")
        mult = 2 * ell + 1
        total += 2 * mult * (k1 + k2)
        detail.append({"ell": ell, "first": k1, "second": k2,
                       "sv_first": np.sort(sv1)[:3].tolist(), "sv_second": np.sort(sv2)[:3].tolist()})
    return (total, detail) if return_detail else total


# --- hypotheses (H6)-(H8) ----------------------------------------------------

def check_h6_h7_h8(spec: SpectralData, omega0: float | None = None, delta_res: float = 1e-6,
                   residual_tol: float = 1e-6) -> dict:
    omega0 = spec.omega0 if omega0 is None else omega0
    e = spec.distinct_e
    res = [m.residual for m in spec.modes]
    h6 = bool(all(x < residual_tol for x in res))
    h7 = bool(e.size == 0 or (np.all(e > 0) and np.all(e < omega0) and np.all(np.diff(e) > 0)))
    N = big_n(e, omega0)
    offending = None
    bound = 2 * N + 3
    if e.size:
        # shortest combinations first; report the sign with a positive leading entry
        cands = [np.array(mu) for mu in itertools.product(range(-bound, bound + 1), repeat=e.size)]
        cands = [mu for mu in cands if mu.any() and np.abs(mu).sum() <= bound and mu[np.flatnonzero(mu)[0]] > 0]
        cands.sort(key=lambda mu: (int(np.abs(mu).sum()), tuple(-mu)))
        for mu in cands:
            if abs(mu @ e) <= delta_res * omega0:
                offending = mu.tolist()
                break
    return {
        "H6": {"pass": h6, "max_residual": max(res) if res else 0.0,
               "note": "semisimplicity via the symmetric product reformulation"},
        "H7": {"pass": h7, "e": e.tolist(), "edge_flags": spec.resonance_flags},
        "H8": {"pass": offending is None, "bigN": N, "offending_mu": offending, "delta_res": delta_res},
    }


# --- grid eigenvectors -------------------------------------------------------

def real_sph_harm(ell: int, m: int, X, Y, Z):
    r = np.sqrt(X**2 + Y**2 + Z**2)
    theta = np.arccos(np.clip(np.divide(Z, r, out=np.zeros(np.broadcast(X, Y, Z).shape), where=r > 0), -1, 1))
    phi = np.arctan2(Y, X)
    if m == 0:
        return sph_harm_y(ell, 0, theta, phi).real
    Ylm = sph_harm_y(ell, abs(m), theta, phi)
    if m > 0:
        return np.sqrt(2) * (-1) ** m * Ylm.real
    return np.sqrt(2) * (-1) ** m * Ylm.imag


def lift_sector(r: np.ndarray, u: np.ndarray, ell: int, m: int, grid: Grid3, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Real grid function ``R(|x|) Y_lm(x/|x|)`` from ``u = r R`` on nodes ``r`` (zero beyond)."""
    R = u / r
    sign = 1.0 if ell % 2 == 0 else -1.0
    sp = CubicSpline(np.concatenate([-r[::-1], r]), np.concatenate([sign * R[::-1], R]))
    X, Y, Z = grid.mesh(center)
    rr = np.sqrt(X**2 + Y**2 + Z**2)
    vals = np.where(rr <= r[-1], sp(rr), 0.0)
    return vals * real_sph_harm(ell, m, X, Y, Z)


@dataclass
class GridMode:
    e: float
    block: str
    ell: int
    m: int
    A: SpinorField
    B: SpinorField
    residual: float = np.nan


class GridOperators:
    """Matrix-free ``L_+``/``L_-`` on the grid about a real lifted ground state ``phi``."""

    def __init__(self, phi: np.ndarray, omega: float, nl: Nonlinearity, grid: Grid3):
        self.grid = grid
        self.omega = omega
        s = phi**2
        self.Vp = nl.beta(s) + 2 * nl.beta_prime(s) * s
        self.Vm = nl.beta(s)
        self.k2 = grid.k2[:, :, : grid.n // 2 + 1]

    def _lap_neg(self, f):
        return _fft.irfftn(self.k2 * _fft.rfftn(f), f.shape)

    def Lplus(self, f):
        return self._lap_neg(f) + (self.omega + self.Vp) * f

    def Lminus(self, f):
        return self._lap_neg(f) + (self.omega + self.Vm) * f

    def precond(self, f):
        return _fft.irfftn(_fft.rfftn(f) / (self.k2 + self.omega), f.shape)


def grid_ground_state(phi0: np.ndarray, omega: float, nl: Nonlinearity, grid: Grid3,
                      tol: float = 1e-12, max_iter: int = 30) -> np.ndarray:
    """Newton-Krylov polish of a lifted profile into an exact zero of the grid equation.

    Solves ``-Lap phi + omega phi + beta(phi^2) phi = 0`` with the spectral
    Laplacian, so that the grid ``L_-`` annihilates ``phi`` and the lifted
    soliton is a stationary state of the discrete flow.
    """
    phi = np.array(phi0, dtype=float)
    n = phi.size
    shp = phi.shape
    scale = np.linalg.norm(phi)
    for _ in range(max_iter):
        ops = GridOperators(phi, omega, nl, grid)
        F = ops.Lminus(phi)
        if np.linalg.norm(F) < tol * omega * scale:
            return phi
        J = LinearOperator((n, n), matvec=lambda v: ops.Lplus(v.reshape(shp)).ravel(), dtype=float)
        M = LinearOperator((n, n), matvec=lambda v: ops.precond(v.reshape(shp)).ravel(), dtype=float)
        step, _ = minres(J, F.ravel(), M=M, rtol=1e-13, maxiter=500)
        phi = phi - step.reshape(shp)
    raise SpectrumError(f"grid ground state Newton stalled at residual {np.linalg.norm(F) / scale:.2e}")


def _inverse_iteration(apply_K, apply_S, precond, x, sigma, shape, iters, rtol):
    n = x.size
    sigma_hist = []
    for _ in range(iters):
        op = LinearOperator((n, n), matvec=lambda v: apply_K(v) - sigma * apply_S(v), dtype=float)
        M = LinearOperator((n, n), matvec=precond, dtype=float)
        y, _ = minres(op, apply_S(x), M=M, rtol=rtol, maxiter=400)
        x = y / np.sqrt(abs(y @ apply_S(y)))
        sigma = (x @ apply_K(x)) / (x @ apply_S(x))
        sigma_hist.append(sigma)
        if len(sigma_hist) > 1 and abs(sigma_hist[-1] - sigma_hist[-2]) < 1e-14 * abs(sigma):
            break
    return x, sigma


def grid_modes(spec: SpectralData, phi: np.ndarray, omega: float, nl: Nonlinearity, grid: Grid3,
               refine: bool = True, iters: int = 6, rtol: float = 1e-12, blocks=("first", "second")) -> list[GridMode]:
    """Lift every spherical-harmonic copy of the radial modes onto ``grid``.

    With ``refine`` the lifts are polished by shifted inverse iteration on the
    grid operators (first block: the pencil ``diag(L_+, L_-) x = e [[0,1],[1,0]] x``;
    second block: ``L_- w = e w``), then made Krein-orthonormal within each
    degenerate cluster.
    """
    ops = GridOperators(phi, omega, nl, grid)
    shp = (grid.n,) * 3
    size = grid.n**3
    dV = grid.cell_volume
    out = []
    for mode in spec.modes:
        if mode.block not in blocks:
            continue
        cluster = []
        for m in range(-mode.ell, mode.ell + 1):
            if mode.block == "first":
                a = lift_sector(mode.r, mode.a, mode.ell, m, grid)
                w = lift_sector(mode.r, mode.w, mode.ell, m, grid)
                e = mode.e
                if refine:
                    def K(v):
                        return np.concatenate([ops.Lplus(v[:size].reshape(shp)).ravel(),
                                               ops.Lminus(v[size:].reshape(shp)).ravel()])

                    def S(v):
                        return np.concatenate([v[size:], v[:size]])

                    def P(v):
                        return np.concatenate([ops.precond(v[:size].reshape(shp)).ravel(),
                                               ops.precond(v[size:].reshape(shp)).ravel()])

                    x, e = _inverse_iteration(K, S, P, np.concatenate([a.ravel(), w.ravel()]), e, shp, iters, rtol)
                    a, w = x[:size].reshape(shp), x[size:].reshape(shp)
                    if np.sum(a * w) < 0:
                        w = -w
                s = np.sum(a * w) * dV
                a, w = a / np.sqrt(2 * s), w / np.sqrt(2 * s)
                res = max(np.linalg.norm(ops.Lplus(a) - e * w), np.linalg.norm(ops.Lminus(w) - e * a)) / np.linalg.norm(a)
                A = SpinorField.from_components(grid, a)
                B = SpinorField.from_components(grid, 1j * w)
            else:
                w = lift_sector(mode.r, mode.w, mode.ell, m, grid)
                e = mode.e
                if refine:
                    def K(v):
                        return ops.Lminus(v.reshape(shp)).ravel()

                    def P(v):
                        return ops.precond(v.reshape(shp)).ravel()

                    w, e = _inverse_iteration(K, lambda v: v, P, w.ravel(), e, shp, iters, rtol)
                    w = w.reshape(shp)
                w = w / np.sqrt(2 * np.sum(w * w) * dV)
                res = np.linalg.norm(ops.Lminus(w) - e * w) / np.linalg.norm(w)
                A = SpinorField.from_components(grid, np.zeros(shp), w)
                B = SpinorField.from_components(grid, np.zeros(shp), -1j * w)
            cluster.append(GridMode(float(e), mode.block, mode.ell, m, A, B, float(res)))
        out += krein_orthonormalize(cluster)
    return out


def krein_orthonormalize(modes: list[GridMode]) -> list[GridMode]:
    """Symplectic Gram-Schmidt so that ``Omega(A_i, B_j) = delta_ij / 2`` within a cluster.

    ``Omega(A_i, A_j)`` and ``Omega(B_i, B_j)`` vanish identically for these
    real-profile modes, so only the mixed pairing needs fixing.
    """
    done: list[GridMode] = []
    for md in modes:
        A, B = md.A.copy(), md.B.copy()
        for q in done:
            cA = 2 * symplectic_form(A, q.B)
            cB = 2 * symplectic_form(q.A, B)
            A = A - cA * q.A
            B = B - cB * q.B
        s = symplectic_form(A, B)
        A, B = A / np.sqrt(2 * s), B / np.sqrt(2 * s)
        done.append(GridMode(md.e, md.block, md.ell, md.m, A, B, md.residual))
    return done


def save_spectrum(path, spec: SpectralData, extra: dict | None = None) -> None:
    data = spec.to_json()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=float))
