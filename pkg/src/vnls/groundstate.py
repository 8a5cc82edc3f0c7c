"""Radial ground states of ``-Lap phi + omega phi + beta(phi^2) phi = 0`` and their families.

Shooting (RK4 with a series start) locates the nodeless solution; the
trajectory, whose tail is unreliable once the growing mode takes over, is then
polished by Newton's method on a sixth-order discretization of
``-psi'' + omega psi + beta(phi^2) psi = 0`` for ``psi = r phi``, with odd
reflection at the origin and exact exponential ghosts beyond ``r_max``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.interpolate import BarycentricInterpolator
from scipy.linalg import solve_banded

from vnls.fields import RadialGrid, RadialProfile
from vnls.symmetry import Nonlinearity


class NoGroundStateError(RuntimeError):
    pass


class ToleranceError(RuntimeError):
    pass


@dataclass
class ShootingConfig:
    """``r_max`` and ``ode_steps`` default to ``30/sqrt(omega)`` and a step of ``0.005/sqrt(omega)``."""

    r_max: float | None = None
    tolerance: float = 1e-12
    max_bisections: int = 200
    ode_steps: int | None = None
    amplitude_min: float = 1e-3
    amplitude_max: float | None = None
    n_scan: int = 240
    newton_tol: float = 1e-10

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")

    def resolve(self, omega: float) -> tuple[float, int]:
        r_max = 30.0 / np.sqrt(omega) if self.r_max is None else float(self.r_max)
        if r_max * np.sqrt(omega) < 20.0:
            raise ValueError(f"r_max*sqrt(omega) = {r_max * np.sqrt(omega):.3g} < 20")
        n = int(round(r_max * np.sqrt(omega) / 0.005)) if self.ode_steps is None else int(self.ode_steps)
        return r_max, n


# --- shooting ----------------------------------------------------------------

CROSS, TURN, BLOWUP, END = 0, 1, 2, 3


@numba.njit(cache=True)
def _poly(c, s):
    out = 0.0
    for k in range(c.size - 1, -1, -1):
        out = out * s + c[k]
    return out


@numba.njit(cache=True)
def _shoot_poly(a, omega, c, h, n, out):
    """RK4 for ``y = (phi, phi')``; fills ``out[j] = phi(r_j)`` and returns ``(event, j)``."""
    r0 = h
    f0 = omega * a + _poly(c, a * a) * a
    y0 = a + f0 * r0 * r0 / 6.0
    y1 = f0 * r0 / 3.0
    out[0] = y0
    for j in range(1, n):
        r = r0 + (j - 1) * h
        k1a = y1
        k1b = -2.0 / r * y1 + omega * y0 + _poly(c, y0 * y0) * y0
        p0 = y0 + 0.5 * h * k1a
        p1 = y1 + 0.5 * h * k1b
        rm = r + 0.5 * h
        k2a = p1
        k2b = -2.0 / rm * p1 + omega * p0 + _poly(c, p0 * p0) * p0
        p0 = y0 + 0.5 * h * k2a
        p1 = y1 + 0.5 * h * k2b
        k3a = p1
        k3b = -2.0 / rm * p1 + omega * p0 + _poly(c, p0 * p0) * p0
        p0 = y0 + h * k3a
        p1 = y1 + h * k3b
        k4a = p1
        k4b = -2.0 / (r + h) * p1 + omega * p0 + _poly(c, p0 * p0) * p0
        y0 = y0 + h / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
        y1 = y1 + h / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b)
        out[j] = y0
        if y0 < 0.0:
            return CROSS, j
        if y1 > 0.0:
            return TURN, j
        if y0 > 10.0 * abs(a) + 10.0 or not np.isfinite(y0):
            return BLOWUP, j
    return END, n - 1


def _shoot_generic(a, omega, nl: Nonlinearity, h, n, out):
    def rhs(r, y0, y1):
        return y1, -2.0 / r * y1 + omega * y0 + float(nl.beta(y0 * y0)) * y0

    f0 = omega * a + float(nl.beta(a * a)) * a
    y0, y1 = a + f0 * h * h / 6.0, f0 * h / 3.0
    out[0] = y0
    for j in range(1, n):
        r = h * j
        k1 = rhs(r, y0, y1)
        k2 = rhs(r + h / 2, y0 + h / 2 * k1[0], y1 + h / 2 * k1[1])
        k3 = rhs(r + h / 2, y0 + h / 2 * k2[0], y1 + h / 2 * k2[1])
        k4 = rhs(r + h, y0 + h * k3[0], y1 + h * k3[1])
        y0 += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        y1 += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        out[j] = y0
        if y0 < 0:
            return CROSS, j
        if y1 > 0:
            return TURN, j
        if y0 > 10 * abs(a) + 10 or not np.isfinite(y0):
            return BLOWUP, j
    return END, n - 1


def shoot(a: float, omega: float, nl: Nonlinearity, r_max: float, n: int):
    """Integrate from ``phi(0) = a``; return ``(event, index, phi on r_j = j h)``."""
    h = r_max / n
    out = np.zeros(n)
    if nl.poly is not None:
        ev, j = _shoot_poly(float(a), float(omega), np.asarray(nl.poly, float), h, n, out)
    else:
        ev, j = _shoot_generic(float(a), float(omega), nl, h, n, out)
    return int(ev), int(j), out


def _amplitude_ceiling(omega, nl: Nonlinearity, cfg: ShootingConfig) -> float:
    if cfg.amplitude_max is not None:
        return float(cfg.amplitude_max)
    if nl.poly is not None and len(nl.poly) > 2 and nl.poly[-1] > 0:
        # beyond the largest root of omega + beta(s) the start is convex and the orbit escapes
        roots = np.polynomial.Polynomial([omega, *nl.poly[1:]]).roots()
        real = roots[np.abs(roots.imag) < 1e-12].real
        real = real[real > 0]
        if real.size:
            return float(np.sqrt(real.max()))
    return 30.0 * np.sqrt(omega) + 10.0


def find_amplitude(omega, nl: Nonlinearity, cfg: ShootingConfig):
    """Bisection for the infimum of zero-crossing amplitudes; returns ``(a_lo, a_hi, n_bisect)``."""
    r_max, n = cfg.resolve(omega)
    a_max = _amplitude_ceiling(omega, nl, cfg)
    scan = np.geomspace(cfg.amplitude_min * np.sqrt(omega), a_max * (1 - 1e-3), cfg.n_scan)
    # flat-topped states sit exponentially close to the ceiling
    scan = np.concatenate([scan, a_max * (1 - np.logspace(-3.5, -15, 24))])
    prev = None
    bracket = None
    for a in scan:
        ev = shoot(a, omega, nl, r_max, n)[0]
        if ev == CROSS and prev is not None:
            bracket = (prev, a)
            break
        if ev != CROSS:
            prev = a
    if bracket is None:
        raise NoGroundStateError(f"no ground state found for omega={omega:g} in amplitudes up to {a_max:.3g}")
    lo, hi = bracket
    it = 0
    while hi - lo > cfg.tolerance * hi and it < cfg.max_bisections:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if shoot(mid, omega, nl, r_max, n)[0] == CROSS:
            hi = mid
        else:
            lo = mid
        it += 1
    if hi - lo > cfg.tolerance * hi and np.nextafter(lo, hi) < hi:
        raise ToleranceError(f"bisection stagnated at width {hi - lo:.3e} after {it} steps")
    return lo, hi, it


def _initial_guess(omega, nl, lo, hi, r_max, n):
    """Agreeing prefix of the two bracketing trajectories, continued by ``A exp(-k r)/r``."""
    e_lo, j_lo, p_lo = shoot(lo, omega, nl, r_max, n)
    e_hi, j_hi, p_hi = shoot(hi, omega, nl, r_max, n)
    stop = min(j_lo, j_hi)
    avg = 0.5 * (p_lo + p_hi)
    gap = np.abs(p_lo - p_hi)
    bad = np.nonzero(gap[:stop] > 1e-3 * np.abs(avg[:stop]))[0]
    if bad.size:
        stop = bad[0]
    # keep only the monotone, positive part
    d = np.diff(avg[: stop + 1])
    up = np.nonzero(d >= 0)[0]
    if up.size:
        stop = min(stop, up[0])
    stop = max(stop, 2)
    r = r_max / n * np.arange(1, n + 1)
    k = np.sqrt(omega)
    phi = avg.copy()
    A = phi[stop - 1] * r[stop - 1] * np.exp(k * r[stop - 1])
    phi[stop:] = A * np.exp(-k * r[stop:]) / r[stop:]
    return phi


# --- sixth-order polishing ---------------------------------------------------

_D6 = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90])
_D8 = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])
_D1_8 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


def _extend(psi, h, k, m):
    """Pad ``psi`` on ``r_1..r_n`` with the odd reflection (and 0 at the origin) and exponential ghosts."""
    left = -psi[:m][::-1]
    right = psi[-1] * np.exp(-k * h * np.arange(1, m + 1))
    return np.concatenate([left, [0.0], psi, right])


def second_derivative(psi, h, k, order=8):
    w = _D8 if order == 8 else _D6
    m = (w.size - 1) // 2
    ext = _extend(psi, h, k, m)
    n = psi.size
    out = np.zeros(n)
    for i, c in enumerate(w):
        out += c * ext[1 + i : 1 + i + n]
    return out / h**2


def first_derivative_phi(phi, r, h, k):
    """``phi'`` by the eighth-order stencil on the even extension with exponential ghosts."""
    m = 4
    left = phi[:m][::-1]
    ghost_r = r[-1] + h * np.arange(1, m + 1)
    right = phi[-1] * r[-1] * np.exp(-k * (ghost_r - r[-1])) / ghost_r
    # phi(0) from the even polynomial of degree 6 through the first four nodes
    V = np.vander(r[:4] ** 2, 4, increasing=True)
    phi0 = np.linalg.solve(V, phi[:4])[0]
    ext = np.concatenate([left, [phi0], phi, right])
    n = phi.size
    out = np.zeros(n)
    for i, c in enumerate(_D1_8):
        out += c * ext[1 + i : 1 + i + n]
    return out / h


def _banded_d2(n, h, k):
    """Banded (3,3) storage of the sixth-order ``d^2/dr^2`` including the boundary closures."""
    ab = np.zeros((7, n))
    for off in range(-3, 4):
        c = _D6[off + 3] / h**2
        # ab[3 + i - j, j] = A[i, j]; diagonal offset off = j - i
        if off >= 0:
            ab[3 - off, off:] = c
        else:
            ab[3 - off, : n + off] = c
    # odd reflection: psi_{-j} = -psi_j contributes to rows 0..2
    for i in range(3):
        for g in range(1, 4):
            src = i - g  # node index (0-based, r_1 is 0) reached by offset -g
            if src < -1:
                mirror = -src - 2
                ab[3 + i - mirror, mirror] -= _D6[3 - g] / h**2
    # exponential ghosts beyond r_max contribute to the last three rows through psi_n
    for i in range(n - 3, n):
        for g in range(1, 4):
            dst = i + g
            if dst > n - 1:
                ab[3 + i - (n - 1), n - 1] += _D6[3 + g] / h**2 * np.exp(-k * h * (dst - n + 1))
    return ab


def _banded_matvec(ab, x):
    n = x.size
    out = np.zeros(n)
    for d in range(7):
        off = 3 - d
        if off >= 0:
            out[: n - off] += ab[d, off:] * x[off:]
        else:
            out[-off:] += ab[d, : n + off] * x[: n + off]
    return out


def polish(phi0, omega, nl: Nonlinearity, grid: RadialGrid, tol=1e-13, max_iter=40):
    """Newton on the sixth-order discretization; returns ``(phi, iterations, discrete residual)``.

    Stops once the Newton update is below ``tol`` relative to ``max psi`` (the
    discrete residual itself bottoms out at roundoff times ``1/h^2``).
    """
    r = grid.r
    h = grid.h
    k = np.sqrt(omega)
    D = _banded_d2(r.size, h, k)
    psi = phi0 * r
    res_norm = np.inf
    for it in range(max_iter):
        phi = psi / r
        s = phi * phi
        F = -_banded_matvec(D, psi) + (omega + nl.beta(s)) * psi
        res_norm = np.sqrt(np.sum(F**2) / np.sum(psi**2))
        J = -D.copy()
        J[3] += omega + nl.beta(s) + 2 * nl.beta_prime(s) * s
        step = solve_banded((3, 3), J, F)
        psi = psi - step
        if np.max(np.abs(step)) < tol * np.max(np.abs(psi)):
            return psi / r, it + 1, res_norm
    raise ToleranceError(f"Newton polish did not converge: residual {res_norm:.3e}")


def residual_norm(profile: RadialProfile, omega: float, nl: Nonlinearity) -> float:
    """``|| -Lap phi + omega phi + beta(phi^2) phi ||`` in radial L^2 via an eighth-order stencil.

    Nodes whose stencil reaches past ``r_max`` use the exact decaying continuation.
    """
    g = profile.grid
    r = g.r
    psi = profile.values * r
    res = -second_derivative(psi, g.h, np.sqrt(omega), order=8) + (omega + nl.beta(profile.values**2)) * psi
    return float(np.sqrt(4 * np.pi * g.h * np.sum(res**2)))


def virial_balances(profile: RadialProfile, omega: float, nl: Nonlinearity) -> tuple[float, float]:
    """Relative defects of the two integral identities of an exact solution:

    ``K + omega M + int beta(phi^2) phi^2 = 0`` (multiplier ``phi``) and
    ``K + 3 omega M + 3 int B(phi^2) = 0`` (multiplier ``r phi'``),
    with ``K = int |grad phi|^2`` and ``M = int phi^2``.
    """
    g = profile.grid
    r, h, phi = g.r, g.h, profile.values
    w = 4 * np.pi * h * r**2
    dphi = first_derivative_phi(phi, r, h, np.sqrt(omega))
    K = np.sum(w * dphi**2)
    M = np.sum(w * phi**2)
    s = phi**2
    P1 = np.sum(w * nl.beta(s) * s)
    P2 = np.sum(w * nl.B(s))
    v1 = (K + omega * M + P1) / (abs(K) + abs(omega * M) + abs(P1))
    v2 = (K + 3 * omega * M + 3 * P2) / (abs(K) + 3 * abs(omega * M) + 3 * abs(P2))
    return float(v1), float(v2)


@dataclass
class GroundStateInfo:
    omega: float
    a_star: float
    bisections: int
    newton_iterations: int
    residual: float
    norm: float


def solve_ground_state(omega: float, nl: Nonlinearity, cfg: ShootingConfig | None = None,
                       grid: RadialGrid | None = None, return_info: bool = False):
    """Nodeless positive radial solution at ``omega``.

    ``grid`` overrides the radial grid implied by ``cfg`` (the shooting still runs
    on the ``cfg`` grid and is interpolated as a Newton starting point).
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    cfg = cfg or ShootingConfig()
    r_max, n = cfg.resolve(omega)
    lo, hi, nb = find_amplitude(omega, nl, cfg)
    guess = _initial_guess(omega, nl, lo, hi, r_max, n)
    shoot_grid = RadialGrid(r_max, n)
    if grid is None:
        grid = shoot_grid
    else:
        guess = RadialProfile(shoot_grid, guess)(grid.r)
        tail = grid.r > r_max
        if np.any(tail):
            j = np.nonzero(~tail)[0][-1]
            guess[tail] = guess[j] * grid.r[j] * np.exp(-np.sqrt(omega) * (grid.r[tail] - grid.r[j])) / grid.r[tail]
    phi, it, _ = polish(guess, omega, nl, grid, cfg.newton_tol)
    prof = RadialProfile(grid, phi)
    if np.any(phi <= 0) or np.any(np.diff(phi) >= 0):
        raise ToleranceError("polished profile is not positive and strictly decreasing")
    res = residual_norm(prof, omega, nl)
    nrm = float(np.sqrt(prof.l2_norm_sq()))
    if return_info:
        return prof, GroundStateInfo(omega, 0.5 * (lo + hi), nb, it, res, nrm)
    return prof


# --- families ----------------------------------------------------------------

@dataclass
class GroundStateFamily:
    omegas: np.ndarray
    profiles: list
    masses: np.ndarray
    failed: list = field(default_factory=list)


def build_family(omega_range, n_samples: int, nl: Nonlinearity, cfg: ShootingConfig | None = None,
                 grid: RadialGrid | None = None) -> GroundStateFamily:
    if n_samples < 3:
        raise ValueError("n_samples must be at least 3")
    lo, hi = omega_range
    oms, profs, masses, failed = [], [], [], []
    for om in np.linspace(lo, hi, n_samples):
        try:
            p = solve_ground_state(float(om), nl, cfg, grid)
        except (NoGroundStateError, ToleranceError) as exc:
            failed.append((float(om), str(exc)))
            continue
        oms.append(float(om))
        profs.append(p)
        masses.append(p.l2_norm_sq())
    return GroundStateFamily(np.array(oms), profs, np.array(masses), failed)


def check_h4(family: GroundStateFamily, rel_floor: float = 1e-8) -> dict:
    """Central-difference slopes of ``m(omega)`` and the longest run of positive slopes."""
    om, m = np.asarray(family.omegas, float), np.asarray(family.masses, float)
    if om.size < 3:
        raise ValueError("need at least 3 valid samples")
    slopes = np.gradient(m, om)
    floor = rel_floor * np.max(np.abs(m)) / max(om[-1] - om[0], 1e-300)
    pos = slopes > floor
    best, start = (0, -1, -1), None
    for i, ok in enumerate(np.append(pos, False)):
        if ok and start is None:
            start = i
        if not ok and start is not None:
            if i - start > best[0]:
                best = (i - start, start, i - 1)
            start = None
    window = (float(om[best[1]]), float(om[best[2]])) if best[0] >= 2 else None
    return {
        "omegas": om.tolist(),
        "masses": m.tolist(),
        "slopes": slopes.tolist(),
        "window": window,
        "pass": window is not None,
        "min_slope_in_window": float(np.min(slopes[best[1] : best[2] + 1])) if window else None,
    }


def chebyshev_weights(n: int) -> np.ndarray:
    """Barycentric weights of the first-kind Chebyshev points (closed form, so evaluation is deterministic)."""
    j = np.arange(n)
    return (-1.0) ** j * np.sin(np.pi * (j + 0.5) / n)


class ProfileFamily:
    """Smooth ``omega -> phi_omega`` on a fixed radial grid by Chebyshev interpolation.

    Profiles are solved at Chebyshev points of ``[omega_lo, omega_hi]`` on one
    common grid, so ``phi_omega(r_j)`` and ``d phi / d omega`` are evaluated by
    barycentric interpolation with spectral accuracy in ``omega``.
    """

    def __init__(self, omega_lo, omega_hi, nl: Nonlinearity, n_cheb: int = 12,
                 grid: RadialGrid | None = None, cfg: ShootingConfig | None = None):
        self.omega_lo, self.omega_hi = float(omega_lo), float(omega_hi)
        self.nl = nl
        if grid is None:
            r_max = 30.0 / np.sqrt(self.omega_lo)
            grid = RadialGrid(r_max, int(round(r_max * np.sqrt(self.omega_hi) / 0.005)))
        self.grid = grid
        j = np.arange(n_cheb)
        c = 0.5 * (self.omega_lo + self.omega_hi)
        w = 0.5 * (self.omega_hi - self.omega_lo)
        self.nodes = c - w * np.cos(np.pi * (j + 0.5) / n_cheb)
        cfg = cfg or ShootingConfig()
        vals = np.array([solve_ground_state(float(o), nl, cfg, grid).values for o in self.nodes])
        self.weights = chebyshev_weights(n_cheb)
        self._interp = BarycentricInterpolator(self.nodes, vals, wi=self.weights)
        self._cache: dict = {}

    def _check(self, omega):
        if not self.omega_lo <= omega <= self.omega_hi:
            raise ValueError(f"omega={omega} outside interpolation range [{self.omega_lo}, {self.omega_hi}]")

    def profile(self, omega: float) -> RadialProfile:
        self._check(omega)
        key = ("p", float(omega))
        if key not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = RadialProfile(self.grid, self._interp(float(omega)))
        return self._cache[key]

    def d_omega(self, omega: float) -> RadialProfile:
        self._check(omega)
        key = ("d", float(omega))
        if key not in self._cache:
            self._cache[key] = RadialProfile(self.grid, self._interp.derivative(float(omega), 1))
        return self._cache[key]

    def mass(self, omega: float) -> float:
        return self.profile(omega).l2_norm_sq()

    def mass_derivative(self, omega: float) -> float:
        g = self.grid
        return float(8 * np.pi * g.h * np.sum(self.profile(omega).values * self.d_omega(omega).values * g.r**2))

    def omega_of_p4(self, p4: float, guess: float | None = None) -> float:
        """Invert ``p4 = m(omega)/2`` by Newton's method."""
        om = 0.5 * (self.omega_lo + self.omega_hi) if guess is None else float(guess)
        for _ in range(50):
            f = 0.5 * self.mass(om) - p4
            df = 0.5 * self.mass_derivative(om)
            step = f / df
            om = min(max(om - step, self.omega_lo), self.omega_hi)
            if abs(step) < 1e-15 * max(1.0, abs(om)):
                return om
        return om


# --- persistence -------------------------------------------------------------

def save_profile(path, profile: RadialProfile, meta: dict) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "phi"])
        for r, v in zip(profile.grid.r, profile.values):
            w.writerow([repr(float(r)), repr(float(v))])
    data = {"r_max": profile.grid.r_max, "n_points": profile.grid.n_points, **meta}
    path.with_suffix(".json").write_text(json.dumps(data, indent=2, sort_keys=True))


def load_profile(path) -> tuple[RadialProfile, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    arr = np.loadtxt(path, delimiter=",", skiprows=1)
    return RadialProfile(RadialGrid(meta["r_max"], meta["n_points"]), arr[:, 1]), meta
