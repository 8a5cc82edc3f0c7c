"""Modulation coordinates near the soliton manifold and stability diagnostics.

A state is written ``u = T(g) (Phi_p + r)`` with ``r`` symplectically
orthogonal to the ten tangent vectors at ``p``.  The group part is reported
with ``a = sqrt(1 - |b|^2)`` real and positive, which fixes the redundancy
between the phase ``tau_4`` and the diagonal of SU(2) on ``Phi_p``.

Profiles in ``omega`` come from a :class:`LiftedFamily`: ground states solved
at Chebyshev nodes, lifted to the grid, polished to exact zeros of the grid
equation, then interpolated barycentrically.  Its mass is the grid mass, so
``p_4`` and the soliton field are consistent to roundoff.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import BarycentricInterpolator

from vnls import _fft
from vnls.fields import Grid3, SpinorField, lift_radial
from vnls.groundstate import ProfileFamily
from vnls.linearization import GridMode, GridOperators, grid_ground_state
from vnls.symmetry import GroupElement, Nonlinearity, SolitonParams, apply_group

N_TANGENT = 10
TANGENT_LABELS = ["dp1", "dp2", "dp3", "dp4", "dx1", "dx2", "dx3", "i_s2C", "s2C", "i_s3"]


class DecompositionError(RuntimeError):
    pass


class BasisError(RuntimeError):
    pass


def _omega(X0, X1, Y0, Y1, dV) -> float:
    """``Omega(X, Y)`` from component arrays (``None`` for an identically zero component)."""
    s = 0.0
    if X0 is not None and Y0 is not None:
        s += np.vdot(X0, Y0).imag
    if X1 is not None and Y1 is not None:
        s -= np.vdot(X1, Y1).imag
    return float(s * dV)


# --- soliton family on the grid ---------------------------------------------

class LiftedFamily:
    """``omega -> phi_omega`` on a :class:`Grid3`, exact for the grid equation at each node."""

    def __init__(self, family: ProfileFamily, grid: Grid3, polish: bool = True):
        self.family = family
        self.grid = grid
        self.nl = family.nl
        self.nodes = family.nodes
        vals = []
        for om in self.nodes:
            phi = lift_radial(family.profile(float(om)), grid).values[0].real
            if polish:
                phi = grid_ground_state(phi, float(om), family.nl, grid)
            vals.append(phi.ravel())
        self._interp = BarycentricInterpolator(self.nodes, np.array(vals), wi=family.weights)
        self._shape = (grid.n,) * 3
        self._memo: dict = {}
        X, Y, Z = grid.mesh()
        self.mesh = (X, Y, Z)

    @property
    def omega_range(self) -> tuple[float, float]:
        return self.family.omega_lo, self.family.omega_hi

    def _check(self, omega):
        lo, hi = self.omega_range
        if not lo <= omega <= hi:
            raise DecompositionError(f"omega={omega:.6g} left the family range [{lo:.6g}, {hi:.6g}]")

    def phi(self, omega: float) -> np.ndarray:
        self._check(omega)
        key = ("p", float(omega))
        if key not in self._memo:
            if len(self._memo) > 8:
                self._memo.clear()
            self._memo[key] = self._interp(float(omega)).reshape(self._shape)
        return self._memo[key]

    def dphi(self, omega: float) -> np.ndarray:
        self._check(omega)
        key = ("d", float(omega))
        if key not in self._memo:
            self._memo[key] = self._interp.derivative(float(omega), 1).reshape(self._shape)
        return self._memo[key]

    def mass(self, omega: float) -> float:
        return float(np.sum(self.phi(omega) ** 2) * self.grid.cell_volume)

    def mass_derivative(self, omega: float) -> float:
        return float(2 * np.sum(self.phi(omega) * self.dphi(omega)) * self.grid.cell_volume)

    def omega_of_p4(self, p4: float, guess: float | None = None) -> float:
        lo, hi = self.omega_range
        om = 0.5 * (lo + hi) if guess is None else float(guess)
        for _ in range(60):
            step = (0.5 * self.mass(om) - p4) / (0.5 * self.mass_derivative(om))
            om_new = om - step
            if not lo <= om_new <= hi:
                raise DecompositionError(f"p4={p4:.8g} maps outside the family range")
            om = om_new
            if abs(step) < 1e-15 * om:
                break
        return om

    def params(self, omega: float, v=(0.0, 0.0, 0.0)) -> SolitonParams:
        return SolitonParams(omega, np.asarray(v, float), 0.5 * self.mass(omega))

    def params_from_p(self, p4: float, pa, guess: float | None = None) -> SolitonParams:
        om = self.omega_of_p4(p4, guess)
        return SolitonParams(om, 2 * np.asarray(pa, float) / p4, p4)

    def phase(self, v) -> np.ndarray | float:
        v = np.asarray(v, float)
        if not np.any(v):
            return 1.0
        X, Y, Z = self.mesh
        return np.exp(0.5j * (v[0] * X + v[1] * Y + v[2] * Z))

    def soliton_component(self, p: SolitonParams) -> np.ndarray:
        return self.phi(p.omega) * self.phase(p.v)

    def soliton(self, p: SolitonParams) -> SpinorField:
        return SpinorField.from_components(self.grid, self.soliton_component(p))


# --- tangent space -----------------------------------------------------------

class TangentBasis:
    """The ten tangent vectors at ``Phi_p`` and the inverse of their Gram matrix under ``Omega``.

    Order: ``d_{p_1..p_4} Phi``, ``d_{x_1..x_3} Phi``, ``i sigma_2 C Phi``,
    ``sigma_2 C Phi``, ``i sigma_3 Phi``.  Each vector is stored as a pair of
    component arrays (``None`` where identically zero).
    """

    def __init__(self, p: SolitonParams, lifted: LiftedFamily, max_cond: float = 1e8):
        g = lifted.grid
        self.p = p
        self.grid = g
        phase = lifted.phase(p.v)
        Phi = lifted.phi(p.omega) * phase
        p4 = p.p4
        X, Y, Z = lifted.mesh
        xs = (X, Y, Z)
        vecs = []
        for a in range(3):
            vecs.append((1j * xs[a] * Phi / p4, None))
        dm = lifted.mass_derivative(p.omega)
        d4 = (2.0 / dm) * lifted.dphi(p.omega) * phase
        for a in range(3):
            if p.v[a]:
                d4 = d4 - (p.v[a] / p4) * 0.5j * xs[a] * Phi
        vecs.append((d4, None))
        Ph = _fft.fftn(Phi, axes=(0, 1, 2))
        for a in range(3):
            shape = [1, 1, 1]
            shape[a] = g.n
            vecs.append((_fft.ifftn(1j * g.k_deriv.reshape(shape) * Ph, axes=(0, 1, 2)), None))
        vecs.append((None, -Phi.conj()))
        vecs.append((None, 1j * Phi.conj()))
        vecs.append((1j * Phi, None))
        self.vectors = vecs
        self.Phi = Phi
        dV = g.cell_volume
        G = np.zeros((N_TANGENT, N_TANGENT))
        for i in range(N_TANGENT):
            for j in range(i + 1, N_TANGENT):
                G[i, j] = _omega(*vecs[i], *vecs[j], dV)
                G[j, i] = -G[i, j]
        self.gram = G
        self.cond = float(np.linalg.cond(G))
        if not np.isfinite(self.cond) or self.cond > max_cond:
            raise BasisError(f"tangent Gram matrix condition number {self.cond:.3e} exceeds {max_cond:.1e}")
        self.gram_inv = np.linalg.inv(G)
        self.norms = np.array([np.sqrt(sum(np.vdot(c, c).real for c in v if c is not None) * dV) for v in vecs])

    def field(self, i: int) -> SpinorField:
        a, b = self.vectors[i]
        z = np.zeros((self.grid.n,) * 3)
        return SpinorField.from_components(self.grid, z if a is None else a, z if b is None else b)

    def pairings(self, u: SpinorField) -> np.ndarray:
        """``Omega(e_i, u)`` for all ten vectors."""
        dV = self.grid.cell_volume
        return np.array([_omega(a, b, u.values[0], u.values[1], dV) for a, b in self.vectors])

    def pairings_with(self, w0, w1) -> np.ndarray:
        """``Omega(w, e_i)`` for a field given by component arrays."""
        dV = self.grid.cell_volume
        return np.array([_omega(w0, w1, a, b, dV) for a, b in self.vectors])


def tangent_basis(p: SolitonParams, lifted: LiftedFamily) -> TangentBasis:
    return TangentBasis(p, lifted)


def project_orthogonal(u: SpinorField, basis: TangentBasis) -> SpinorField:
    """``P u = u - sum_ij e_i A_ij Omega(e_j, u)`` with ``A`` the inverse Gram matrix."""
    c = basis.gram_inv @ basis.pairings(u)
    out = u.values.copy()
    for ci, (a, b) in zip(c, basis.vectors):
        if a is not None:
            out[0] -= ci * a
        if b is not None:
            out[1] -= ci * b
    return SpinorField(u.grid, out)


# --- decomposition -------------------------------------------------------------

@dataclass
class ModulationState:
    p: SolitonParams
    tau: np.ndarray
    b: complex
    r: SpinorField | None = None
    certificate: float = np.nan
    reconstruction: float = np.nan
    iterations: int = 0
    jacobian: np.ndarray | None = field(default=None, repr=False)

    @property
    def group(self) -> GroupElement:
        return GroupElement.from_b(self.b, self.tau)

    def theta(self) -> np.ndarray:
        return np.concatenate([self.p.p[:4], self.tau, [self.b.real, self.b.imag]])

    def to_dict(self) -> dict:
        return {
            "omega": self.p.omega, "v": self.p.v.tolist(), "p": self.p.p.tolist(),
            "tau": self.tau.tolist(), "b": [self.b.real, self.b.imag],
            "certificate": self.certificate, "reconstruction": self.reconstruction,
            "iterations": self.iterations,
        }


def initial_state(p: SolitonParams, tau=None, b: complex = 0j) -> ModulationState:
    return ModulationState(p, np.zeros(4) if tau is None else np.asarray(tau, float), complex(b))


def _unpack(theta, lifted: LiftedFamily, omega_guess):
    p = lifted.params_from_p(theta[3], theta[:3], omega_guess)
    b = complex(theta[8], theta[9])
    if abs(b) >= 1:
        raise DecompositionError("|b| reached 1")
    return p, GroupElement.from_b(b, theta[4:8])


def _residual(theta, u: SpinorField, lifted: LiftedFamily, omega_guess):
    p, g = _unpack(theta, lifted, omega_guess)
    w = apply_group(g.inverse(), u).values
    w0 = w[0] - lifted.soliton_component(p)
    basis = TangentBasis(p, lifted)
    return basis.pairings_with(w0, w[1]), p, basis, w0, w[1]


def _jacobian(theta, u, lifted, omega_guess, scales):
    J = np.zeros((N_TANGENT, N_TANGENT))
    for j in range(N_TANGENT):
        h = 1e-6 * scales[j]
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        J[:, j] = (_residual(tp, u, lifted, omega_guess)[0] - _residual(tm, u, lifted, omega_guess)[0]) / (2 * h)
    return J


def decompose(u: SpinorField, lifted: LiftedFamily, guess: ModulationState, tol_orth: float = 1e-9,
              max_iter: int = 40, jacobian: np.ndarray | None = None) -> ModulationState:
    """Solve ``Omega(T(g)^{-1} u - Phi_p, e_i(p)) = 0`` for ``(p_1..p_4, tau, b)``.

    A chord Newton iteration with a central-difference Jacobian (reused from
    ``guess`` or ``jacobian`` when available and refreshed on slow progress).
    The orthogonality certificate is recomputed from scratch after the loop:
    ``|Omega(r, e_i)| <= tol_orth * max(||r||, 1e-5 ||u||) * ||e_i||``; the floor
    keeps the test meaningful when ``r`` vanishes to roundoff.
    """
    theta = guess.theta()
    p4_scale = max(abs(theta[3]), 1.0)
    scales = np.array([p4_scale] * 4 + [1.0] * 4 + [1.0, 1.0])
    om_guess = guess.p.omega
    J = jacobian if jacobian is not None else guess.jacobian
    if J is None:
        J = _jacobian(theta, u, lifted, om_guess, scales)
    F, p, basis, w0, w1 = _residual(theta, u, lifted, om_guess)
    fnorm = np.linalg.norm(F)
    it = 0
    refreshed = jacobian is None and guess.jacobian is None
    for it in range(1, max_iter + 1):
        step = np.linalg.solve(J, F)
        theta_new = theta - step
        F_new, p_new, basis_new, w0n, w1n = _residual(theta_new, u, lifted, p.omega)
        fn = np.linalg.norm(F_new)
        if fn > 0.5 * fnorm and not refreshed and fnorm > 0:
            J = _jacobian(theta, u, lifted, p.omega, scales)
            refreshed = True
            continue
        theta, F, p, basis, w0, w1, fnorm = theta_new, F_new, p_new, basis_new, w0n, w1n, fn
        if np.max(np.abs(step) / scales) < 1e-14:
            break
    p, g = _unpack(theta, lifted, p.omega)
    r = SpinorField.from_components(u.grid, w0, w1)
    unorm = u.norm()
    cert = np.abs(basis.pairings_with(w0, w1)) / (max(r.norm(), 1e-5 * unorm) * basis.norms)
    rec = (u - apply_group(g, lifted.soliton(p) + r)).norm() / unorm
    state = ModulationState(p, theta[4:8].copy(), complex(theta[8], theta[9]), r,
                            float(np.max(cert)), float(rec), it, J)
    if state.certificate > tol_orth or not rec < 1e-9:
        raise DecompositionError(
            f"decomposition not certified: orthogonality {state.certificate:.2e}, reconstruction {rec:.2e}")
    return state


# --- discrete modes ------------------------------------------------------------

@dataclass
class ModeSplit:
    z: np.ndarray
    f: SpinorField
    residual: float


def extract_modes(r: SpinorField, modes: list[GridMode]) -> ModeSplit:
    """``z_l = -Omega(B_l, r) - ii Omega(A_l, r)`` and ``f = r - sum 2 (Re z_l A_l - Im z_l B_l)``.

    With ``xi = A + ii B`` and ``Omega(A_i, B_j) = delta_ij / 2`` this is the
    unique split ``r = sum z xi + conj(z) conj(xi) + f`` with ``f`` symplectically
    orthogonal to every ``A_l``, ``B_l``.
    """
    if not modes:
        raise ValueError("no modes supplied")
    z = np.zeros(len(modes), dtype=complex)
    f = r.values.copy()
    for i, m in enumerate(modes):
        zr = -_omega(m.B.values[0], m.B.values[1], r.values[0], r.values[1], r.grid.cell_volume)
        zi = -_omega(m.A.values[0], m.A.values[1], r.values[0], r.values[1], r.grid.cell_volume)
        z[i] = complex(zr, zi)
        f -= 2 * (zr * m.A.values - zi * m.B.values)
    fs = SpinorField(r.grid, f)
    rec = synthesize(z, fs, modes) - r
    return ModeSplit(z, fs, rec.norm() / max(r.norm(), 1e-300))


def synthesize(z, f: SpinorField, modes: list[GridMode]) -> SpinorField:
    out = f.values.copy()
    for zl, m in zip(z, modes):
        out += 2 * (zl.real * m.A.values - zl.imag * m.B.values)
    return SpinorField(f.grid, out)


def hessian_form(x: SpinorField, ops: GridOperators) -> float:
    """``<i sigma_3 H x, x>``: ``L_+`` on ``Re x_1`` and ``L_-`` on ``Im x_1``, ``Re x_2``, ``Im x_2``."""
    v = x.values
    s = 0.0
    for part, L in ((v[0].real, ops.Lplus), (v[0].imag, ops.Lminus), (v[1].real, ops.Lminus), (v[1].imag, ops.Lminus)):
        s += np.sum(L(part) * part)
    return float(s * x.grid.cell_volume)


def energy_split(r: SpinorField, split: ModeSplit, modes: list[GridMode], ops: GridOperators) -> tuple[float, float]:
    """Both sides of ``1/2 Q(r) = sum e_l |z_l|^2 + 1/2 Q(f)``."""
    lhs = 0.5 * hessian_form(r, ops)
    rhs = sum(m.e * abs(zl) ** 2 for m, zl in zip(modes, split.z)) + 0.5 * hessian_form(split.f, ops)
    return lhs, rhs


# --- tracking -------------------------------------------------------------------

def local_norm(f: SpinorField, s: float = 2.0) -> float:
    """``|| <x>^{-s} f ||`` in the soliton frame (soliton at the origin)."""
    r2 = f.grid.radius() ** 2
    w = (1.0 + r2) ** (-0.5 * s)
    return float(np.sqrt(np.sum(w**2 * (np.abs(f.values) ** 2).sum(axis=0)) * f.grid.cell_volume))


@dataclass
class StabilitySeries:
    t: np.ndarray
    omega: np.ndarray
    v: np.ndarray
    b: np.ndarray
    z_abs: np.ndarray
    lyapunov: np.ndarray
    local_norm: np.ndarray
    certificate: np.ndarray
    e: np.ndarray
    failures: list = field(default_factory=list)
    trusted_until: float = np.inf

    def to_csv(self, path, header_extra: dict | None = None) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            if header_extra:
                for k, val in sorted(header_extra.items()):
                    fh.write(f"# {k}: {val}\n")
            w.writerow(["t", "omega", "v1", "v2", "v3", "b_re", "b_im",
                        *[f"abs_z{l}" for l in range(self.z_abs.shape[1])], "lyapunov", "local_norm", "certificate"])
            for i in range(len(self.t)):
                w.writerow([repr(float(self.t[i])), repr(float(self.omega[i])), *map(repr, map(float, self.v[i])),
                            repr(float(self.b[i].real)), repr(float(self.b[i].imag)),
                            *map(repr, map(float, self.z_abs[i])), repr(float(self.lyapunov[i])),
                            repr(float(self.local_norm[i])), repr(float(self.certificate[i]))])

    def window(self) -> np.ndarray:
        return self.t <= self.trusted_until

    def omega_plus(self) -> float:
        """Terminal mean of ``omega(t)`` over the last 20% of the trusted window."""
        m = self.window()
        t, om = self.t[m], self.omega[m]
        if t.size == 0:
            return float("nan")
        tail = t >= t[0] + 0.8 * (t[-1] - t[0])
        return float(np.mean(om[tail]))


def fit_decay(t: np.ndarray, y: np.ndarray) -> dict:
    """Fit ``y = |z|^2`` by ``A exp(-lam t)`` and by ``1 / (c0 + c1 t)``; report both with AIC."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    ok = y > 0
    t, y = t[ok], y[ok]
    n = t.size
    out = {"n": int(n)}
    if n < 3:
        return out

    def aic(pred, k):
        rss = float(np.sum((y - pred) ** 2))
        return n * np.log(max(rss, 1e-300) / n) + 2 * k

    c = np.polyfit(t, np.log(y), 1)
    pe = np.exp(np.polyval(c, t))
    out["exponential"] = {"A": float(np.exp(c[1])), "rate": float(-c[0]), "aic": float(aic(pe, 2))}
    d = np.polyfit(t, 1.0 / y, 1)
    pa = 1.0 / np.polyval(d, t)
    out["inverse_t"] = {"c0": float(d[1]), "c1": float(d[0]), "aic": float(aic(pa, 2))}
    return out


def track(frames, lifted: LiftedFamily, modes: list[GridMode], p0: SolitonParams,
          trusted_until: float = np.inf, tol_orth: float = 1e-9) -> StabilitySeries:
    """Decompose every ``(t, u)`` frame by continuation and split ``r`` into modes and radiation.

    The guess for each frame extrapolates ``tau`` linearly from the previous
    two frames (the phase advances at rate ``omega``).  A failing frame is
    recorded and ends the series.
    """
    rows = []
    failures = []
    prev: list[tuple[float, ModulationState]] = []
    e = np.array([m.e for m in modes])
    for t, u in frames:
        if not prev:
            guess = initial_state(p0, [0.0, 0.0, 0.0, p0.omega * t])
        else:
            t1, s1 = prev[-1]
            tau = s1.tau.copy()
            if len(prev) > 1:
                t0, s0 = prev[-2]
                tau = tau + (s1.tau - s0.tau) * (t - t1) / (t1 - t0)
            else:
                tau[3] += s1.p.omega * (t - t1)
            guess = ModulationState(s1.p, tau, s1.b, jacobian=s1.jacobian)
        try:
            st = decompose(u, lifted, guess, tol_orth=tol_orth)
        except (DecompositionError, np.linalg.LinAlgError) as exc:
            failures.append({"t": float(t), "error": str(exc)})
            break
        split = extract_modes(st.r, modes)
        rows.append((t, st.p.omega, st.p.v.copy(), st.b, np.abs(split.z), float(np.sum(e * np.abs(split.z) ** 2)),
                     local_norm(split.f), st.certificate))
        prev = (prev + [(t, st)])[-2:]
    k = len(modes)
    if rows:
        cols = list(zip(*rows))
        return StabilitySeries(np.array(cols[0]), np.array(cols[1]), np.array(cols[2]), np.array(cols[3]),
                               np.array(cols[4]).reshape(-1, k), np.array(cols[5]), np.array(cols[6]),
                               np.array(cols[7]), e, failures, trusted_until)
    return StabilitySeries(np.zeros(0), np.zeros(0), np.zeros((0, 3)), np.zeros(0, complex), np.zeros((0, k)),
                           np.zeros(0), np.zeros(0), np.zeros(0), e, failures, trusted_until)
