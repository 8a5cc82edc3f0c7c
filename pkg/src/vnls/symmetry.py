"""Symmetry group, conserved quantities, energy and solitary waves.

The group ``G = R^3 x T x SU(2)`` acts by

    T(g) u = exp(i sigma_3 sum_j tau_j D_j) (a + b sigma_2 C) u,

where ``D_1..3 = -i sigma_3 d/dx_a`` (so the first factor is the translation
``u(x) -> u(x + tau)``), ``D_4 = 1`` and ``C`` is complex conjugation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from vnls import _fft
from vnls.fields import (
    Grid3,
    RadialProfile,
    SpinorField,
    inner_product,
    lift_radial,
    sigma2_conj,
    sigma3,
)


# --- nonlinearity ------------------------------------------------------------

@dataclass
class Nonlinearity:
    """``beta(s)`` with derivative and antiderivative ``B`` (``B(0) = 0``, ``B' = beta``).

    ``poly`` holds coefficients ``c_k`` of ``beta(s) = sum_k c_k s^k`` when the
    nonlinearity is polynomial; the shooting solver uses it for its compiled path.
    """

    beta: Callable
    beta_prime: Callable
    B: Callable
    poly: tuple | None = None
    descriptor: dict = field(default_factory=dict)

    def check(self, samples=None) -> dict:
        """Numerical check of smoothness at 0, ``B' = beta`` and the growth bound."""
        s = np.linspace(0.05, 4.0, 17) if samples is None else np.asarray(samples, float)
        eps = 1e-5
        fd = (self.B(s + eps) - self.B(s - eps)) / (2 * eps)
        antideriv_err = float(np.max(np.abs(fd - self.beta(s)) / (1 + np.abs(self.beta(s)))))
        fdp = (self.beta(s + eps) - self.beta(s - eps)) / (2 * eps)
        deriv_err = float(np.max(np.abs(fdp - self.beta_prime(s)) / (1 + np.abs(self.beta_prime(s)))))
        v = np.logspace(1, 3, 9)
        g = np.abs(self.beta(v**2)) + 1e-300
        slope = float(np.polyfit(np.log(v), np.log(g), 1)[0])
        alpha_min = max(1.0, 1.0 + slope)
        return {
            "beta0": float(self.beta(0.0)),
            "B0": float(self.B(0.0)),
            "antiderivative_error": antideriv_err,
            "derivative_error": deriv_err,
            "growth_exponent_alpha_min": alpha_min,
            "H1": bool(abs(self.beta(0.0)) < 1e-14 and abs(self.B(0.0)) < 1e-14),
            "H2": bool(alpha_min < 5.0 - 1e-3),
            "B_matches_beta": antideriv_err < 1e-6 and deriv_err < 1e-6,
        }


def _num(s) -> np.ndarray:
    # complex arguments pass through (complexified fields in the resonant-source expansion)
    s = np.asarray(s)
    return s if np.iscomplexobj(s) else s.astype(float)


def polynomial_nonlinearity(coeffs, descriptor: dict | None = None) -> Nonlinearity:
    """``beta(s) = sum_k coeffs[k] s^k`` (``coeffs[0]`` must be 0)."""
    c = np.asarray(coeffs, dtype=float)
    if c.size == 0 or c[0] != 0.0:
        raise ValueError("beta(0) must vanish: coeffs[0] == 0 required")
    P = np.polynomial.Polynomial(c)
    dP = P.deriv()
    iP = P.integ()
    desc = descriptor or {"kind": "polynomial", "coeffs": c.tolist()}
    return Nonlinearity(
        beta=lambda s: P(_num(s)),
        beta_prime=lambda s: dP(_num(s)),
        B=lambda s: iP(_num(s)),
        poly=tuple(c.tolist()),
        descriptor=desc,
    )


def cubic_quintic(gamma: float = 1.0) -> Nonlinearity:
    """``beta(s) = -s + gamma s^2``: focusing cubic, defocusing quintic."""
    return polynomial_nonlinearity([0.0, -1.0, gamma], {"kind": "cubic_quintic", "gamma": gamma})


def cubic() -> Nonlinearity:
    return polynomial_nonlinearity([0.0, -1.0], {"kind": "cubic"})


def expression_nonlinearity(expr: str) -> Nonlinearity:
    """Nonlinearity from a sympy expression in ``s``; ``B`` is integrated symbolically."""
    import sympy

    s = sympy.Symbol("s")
    b = sympy.sympify(expr, locals={"s": s})
    db = sympy.diff(b, s)
    Bx = sympy.integrate(b, (s, 0, s))
    f = sympy.lambdify(s, b, "numpy")
    fp = sympy.lambdify(s, db, "numpy")
    fB = sympy.lambdify(s, Bx, "numpy")

    def wrap(fn):
        def call(x):
            x = _num(x)
            return np.broadcast_to(fn(x), np.shape(x)).astype(x.dtype)

        return call

    poly = None
    if b.is_polynomial(s):
        cs = sympy.Poly(b, s).all_coeffs()[::-1]
        poly = tuple(float(c) for c in cs)
    return Nonlinearity(wrap(f), wrap(fp), wrap(fB), poly, {"kind": "expression", "expr": expr})


def nonlinearity_from_config(cfg: dict) -> Nonlinearity:
    kind = cfg.get("kind", "cubic_quintic")
    if kind == "cubic_quintic":
        return cubic_quintic(float(cfg.get("gamma", 1.0)))
    if kind == "cubic":
        return cubic()
    if kind == "polynomial":
        return polynomial_nonlinearity(cfg["coeffs"])
    if kind == "expression":
        return expression_nonlinearity(cfg["expr"])
    raise ValueError(f"unknown nonlinearity kind {kind!r}")


# --- group -------------------------------------------------------------------

@dataclass
class GroupElement:
    """``(tau, a, b)`` with ``tau`` in R^4 and ``|a|^2 + |b|^2 = 1`` (renormalized on construction)."""

    tau: np.ndarray = field(default_factory=lambda: np.zeros(4))
    a: complex = 1.0 + 0j
    b: complex = 0j

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float).reshape(4)
        a, b = complex(self.a), complex(self.b)
        nrm = np.sqrt(abs(a) ** 2 + abs(b) ** 2)
        if nrm == 0:
            raise ValueError("SU(2) part must be nonzero")
        self.a, self.b = a / nrm, b / nrm

    @classmethod
    def identity(cls) -> "GroupElement":
        return cls()

    @classmethod
    def from_b(cls, b: complex, tau=None) -> "GroupElement":
        b = complex(b)
        if abs(b) > 1:
            raise ValueError("|b| must not exceed 1")
        return cls(np.zeros(4) if tau is None else tau, np.sqrt(1 - abs(b) ** 2), b)

    def su2_matrix(self) -> np.ndarray:
        a, b = self.a, self.b
        return np.array([[a, b], [-np.conj(b), np.conj(a)]])

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        a1, b1, a2, b2 = self.a, self.b, other.a, other.b
        return GroupElement(
            self.tau + other.tau,
            a1 * a2 - b1 * np.conj(b2),
            a1 * b2 + b1 * np.conj(a2),
        )

    def inverse(self) -> "GroupElement":
        return GroupElement(-self.tau, np.conj(self.a), -self.b)

    def to_json(self) -> str:
        return json.dumps(
            {"tau": self.tau.tolist(), "a": [self.a.real, self.a.imag], "b": [self.b.real, self.b.imag]}
        )

    @classmethod
    def from_json(cls, text: str) -> "GroupElement":
        d = json.loads(text)
        return cls(d["tau"], complex(*d["a"]), complex(*d["b"]))


def quaternion(g: GroupElement) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` of the SU(2) part; the map is multiplicative."""
    a, b = g.a, g.b
    return np.array([a.real, a.imag, b.real, b.imag])


def quaternion_product(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = p
    w2, x2, y2, z2 = q
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def translate(u: SpinorField, shift) -> SpinorField:
    """``u(x) -> u(x + shift)`` by a spectral phase multiplier (exactly unitary)."""
    shift = np.asarray(shift, dtype=float)
    if not np.any(shift):
        return u.copy()
    g = u.grid
    # odd symbol: the unpaired Nyquist mode is left in place so that the shift
    # commutes with complex conjugation (needed for the sigma_2 C part of T(g))
    k = g.k_deriv
    ph = (
        np.exp(1j * k * shift[0])[:, None, None]
        * np.exp(1j * k * shift[1])[None, :, None]
        * np.exp(1j * k * shift[2])[None, None, :]
    )
    return SpinorField(g, _fft.ifftn(ph * _fft.fftn(u.values)))


def apply_su2(a: complex, b: complex, u: SpinorField) -> SpinorField:
    """``(a + b sigma_2 C) u``."""
    return a * u + b * sigma2_conj(u)


def apply_group(g: GroupElement, u: SpinorField) -> SpinorField:
    w = apply_su2(g.a, g.b, u)
    w = translate(w, g.tau[:3])
    if g.tau[3]:
        ph = np.exp(1j * g.tau[3])
        w.values[0] *= ph
        w.values[1] *= np.conj(ph)
    return w


# --- invariants --------------------------------------------------------------

def diamond(j: int, u: SpinorField) -> SpinorField:
    """The operators ``D_j`` (1-based) whose quadratic forms give ``Pi_j``."""
    from vnls.fields import derivative

    if j in (1, 2, 3):
        d = derivative(u, j - 1)
        return -1j * sigma3(d)
    if j == 4:
        return u.copy()
    if j == 5:
        return sigma3(sigma2_conj(u))
    if j == 6:
        return 1j * sigma3(sigma2_conj(u))
    if j == 7:
        return sigma3(u)
    raise ValueError(f"no operator D_{j}")


@dataclass
class InvariantVector:
    pi: np.ndarray
    energy: float

    def as_row(self) -> list[float]:
        return [*map(float, self.pi), float(self.energy)]


def momenta(u: SpinorField) -> np.ndarray:
    g = u.grid
    uh = _fft.fftn(u.values)
    dens = np.abs(uh[0]) ** 2 - np.abs(uh[1]) ** 2
    scale = 0.5 * g.cell_volume / g.n**3
    kd = g.k_deriv
    return np.array([
        scale * np.sum(kd[:, None, None] * dens),
        scale * np.sum(kd[None, :, None] * dens),
        scale * np.sum(kd[None, None, :] * dens),
    ])


def pi_internal(u: SpinorField) -> np.ndarray:
    """``(Pi_5, Pi_6, Pi_7)``."""
    return np.array([0.5 * inner_product(diamond(j, u), u) for j in (5, 6, 7)])


def kinetic_energy(u: SpinorField) -> float:
    g = u.grid
    uh = _fft.fftn(u.values)
    return float(0.5 * g.cell_volume / g.n**3 * np.sum(g.k2 * (np.abs(uh) ** 2).sum(axis=0)))


def potential_energy(u: SpinorField, nl: Nonlinearity) -> float:
    rho = (np.abs(u.values) ** 2).sum(axis=0)
    return float(0.5 * np.sum(nl.B(rho)) * u.grid.cell_volume)


def energy(u: SpinorField, nl: Nonlinearity) -> float:
    """``E = 1/2 <-Lap u, u> + 1/2 int B(|u|^2)``; the sign makes ``grad E = -Lap u + beta u``."""
    return kinetic_energy(u) + potential_energy(u, nl)


def invariants(u: SpinorField, nl: Nonlinearity) -> InvariantVector:
    pi = np.zeros(7)
    pi[:3] = momenta(u)
    pi[3] = 0.5 * inner_product(u, u)
    pi[4:] = pi_internal(u)
    return InvariantVector(pi, energy(u, nl))


def energy_gradient(u: SpinorField, nl: Nonlinearity) -> SpinorField:
    from vnls.fields import laplacian

    rho = (np.abs(u.values) ** 2).sum(axis=0)
    return SpinorField(u.grid, -laplacian(u).values + nl.beta(rho) * u.values)


# --- solitary waves ----------------------------------------------------------

@dataclass
class SolitonParams:
    """``(omega, v)`` together with ``p4 = ||phi_omega||^2 / 2`` (needed for ``p``)."""

    omega: float
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p4: float | None = None

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        if not self.omega > 0:
            raise ValueError("omega must be positive")

    @property
    def p(self) -> np.ndarray:
        if self.p4 is None:
            raise ValueError("p4 unknown: construct with a profile or family")
        out = np.zeros(7)
        out[:3] = 0.5 * self.v * self.p4
        out[3] = self.p4
        out[6] = self.p4
        return out

    @classmethod
    def from_profile(cls, omega, profile: RadialProfile, v=(0.0, 0.0, 0.0)) -> "SolitonParams":
        return cls(omega, np.asarray(v, float), 0.5 * profile.l2_norm_sq())


def lambda_of_p(p: SolitonParams) -> np.ndarray:
    """Multipliers with ``grad E(Phi_p) = sum_j lambda_j D_j Phi_p``.

    With ``D_a = -i sigma_3 d_a`` the translation multipliers are ``+v_a``: this
    is the sign for which ``exp(-i sigma_3 t lambda.D) Phi_p`` moves along ``+v``.
    """
    lam = np.zeros(7)
    lam[:3] = p.v
    lam[3] = -p.omega - 0.25 * float(p.v @ p.v)
    return lam


def make_soliton(p: SolitonParams, profile: RadialProfile, grid: Grid3, center=(0.0, 0.0, 0.0)) -> SpinorField:
    """``Phi_p(x) = exp(i v.x / 2) phi_omega(|x|) e_1`` centred at ``center``."""
    if np.max(np.abs(p.v)) / 2 > grid.k_max:
        raise ValueError(f"velocity phase |v|/2 = {np.max(np.abs(p.v)) / 2:.3g} beyond Nyquist {grid.k_max:.3g}")
    u = lift_radial(profile, grid, center)
    if np.any(p.v):
        X, Y, Z = grid.mesh(center)
        u.values[0] *= np.exp(0.5j * (p.v[0] * X + p.v[1] * Y + p.v[2] * Z))
    return u


def su2_pi_transform(b: complex, pi) -> np.ndarray:
    """``(Pi_5, Pi_6, Pi_7)`` of ``(sqrt(1-|b|^2) + b sigma_2 C) psi`` from those of ``psi``."""
    b = complex(b)
    if abs(b) > 1 + 1e-15:
        raise ValueError("|b| must not exceed 1")
    bR, bI = b.real, b.imag
    a = np.sqrt(max(0.0, 1 - abs(b) ** 2))
    M = np.array([
        [1 - 2 * bR**2, -2 * bI * bR, -2 * a * bR],
        [-2 * bI * bR, 1 - 2 * bI**2, -2 * a * bI],
        [2 * a * bR, 2 * a * bI, 1 - 2 * abs(b) ** 2],
    ])
    return M @ np.asarray(pi, float)
