"""Strang split-step integration of ``i sigma_3 u_t + Lap u - beta(|u|^2) u = 0``.

The linear flow is diagonal in Fourier space (``u_1`` hat picks up
``exp(-i |k|^2 t)``, ``u_2`` hat ``exp(+i |k|^2 t)``); the nonlinear flow is
the exact pointwise rotation ``u_1 -> exp(-i beta dt) u_1``,
``u_2 -> exp(+i beta dt) u_2`` since ``|u_1|`` and ``|u_2|`` do not change
along it.  Consecutive linear half steps between outputs are merged.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vnls import _fft
from vnls.fields import Grid3, SpinorField, field_hash, load_field, random_field, save_field
from vnls.linearization import GridMode
from vnls.symmetry import InvariantVector, Nonlinearity, SolitonParams, invariants

INVARIANT_HEADER = ["t", "Pi1", "Pi2", "Pi3", "Pi4", "Pi5", "Pi6", "Pi7", "E"]


class BlowUpError(RuntimeError):
    def __init__(self, message: str, last_time: float, last_field: SpinorField | None = None):
        super().__init__(message)
        self.last_time = last_time
        self.last_field = last_field


class ConstraintError(RuntimeError):
    pass


@dataclass
class Sponge:
    """Non-conservative absorbing layer: ``u -> exp(-sigma(x) dt) u`` once per step."""

    strength: float
    width: float

    def profile(self, grid: Grid3) -> np.ndarray:
        half = 0.5 * grid.box_length
        s = np.zeros((grid.n,) * 3)
        for d in grid.mesh():
            depth = np.clip((np.abs(d) - (half - self.width)) / self.width, 0.0, None)
            s = s + depth**2
        return self.strength * s


@dataclass
class EvolutionConfig:
    dt: float
    t_final: float
    output_every: int = 10
    splitting: str = "strang"
    sponge: Sponge | None = None

    def __post_init__(self):
        if self.splitting != "strang":
            raise ValueError(f"unsupported splitting {self.splitting!r}")
        if self.dt == 0 or self.output_every < 1:
            raise ValueError("dt must be nonzero and output_every >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def check_resolution(self, grid: Grid3) -> None:
        if abs(self.dt) * 3 * grid.k_max**2 >= 2 * np.pi:
            warnings.warn(f"dt |k|^2_max = {abs(self.dt) * 3 * grid.k_max ** 2:.3g} >= 2 pi: "
                          "the fastest Fourier phases are not resolved", stacklevel=2)


class Stepper:
    """Cached Fourier multipliers for a fixed grid and time step."""

    def __init__(self, grid: Grid3, dt: float, nl: Nonlinearity, sponge: Sponge | None = None):
        self.grid = grid
        self.dt = dt
        self.nl = nl
        k2 = grid.k2
        self._half = np.stack([np.exp(-0.5j * k2 * dt), np.exp(0.5j * k2 * dt)])
        self._full = self._half**2
        self._damp = None if sponge is None else np.exp(-sponge.profile(grid) * dt)

    def linear(self, v: np.ndarray, full: bool) -> np.ndarray:
        return _fft.ifftn((self._full if full else self._half) * _fft.fftn(v))

    def nonlinear(self, v: np.ndarray) -> np.ndarray:
        rho = (v.real**2 + v.imag**2).sum(axis=0)
        ph = np.exp(-1j * self.nl.beta(rho) * self.dt)
        v[0] *= ph
        v[1] *= ph.conj()
        if self._damp is not None:
            v *= self._damp
        return v

    def advance(self, v: np.ndarray, n: int) -> np.ndarray:
        """``n`` Strang steps with the inner linear half steps merged."""
        if n <= 0:
            return v
        v = self.linear(v, False)
        for i in range(n):
            v = self.nonlinear(v)
            v = self.linear(v, i < n - 1)
        return v


def step(u: SpinorField, dt: float, nl: Nonlinearity) -> SpinorField:
    """One Strang step (half linear, full nonlinear, half linear)."""
    st = Stepper(u.grid, dt, nl)
    out = st.advance(u.values.copy(), 1)
    if not np.isfinite(out).all():
        raise BlowUpError("non-finite values after one step", 0.0, u)
    return SpinorField(u.grid, out)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    series: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    hashes: list = field(default_factory=list)
    final: SpinorField | None = None

    def append(self, t: float, inv: InvariantVector | None, snap: SpinorField | None, keep: bool):
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must increase")
        self.times.append(float(t))
        self.series.append(inv)
        self.hashes.append(field_hash(snap) if snap is not None else None)
        self.snapshots.append(snap if keep else None)

    def frames(self):
        for t, s in zip(self.times, self.snapshots):
            if s is not None:
                yield t, s

    def invariant_array(self) -> np.ndarray:
        return np.array([[t, *inv.as_row()] for t, inv in zip(self.times, self.series) if inv is not None])

    def write_invariants(self, path, header_extra: dict | None = None) -> None:
        with Path(path).open("w", newline="") as fh:
            for k, val in sorted((header_extra or {}).items()):
                fh.write(f"# {k}: {val}\n")
            w = csv.writer(fh)
            w.writerow(INVARIANT_HEADER)
            for row in self.invariant_array():
                w.writerow([repr(float(x)) for x in row])

    def drift(self) -> dict:
        """Maximum invariant drift: absolute for ``Pi_j`` scaled by ``Pi_4(0)``, relative for ``E``."""
        a = self.invariant_array()
        if a.shape[0] == 0:
            return {}
        d = np.max(np.abs(a - a[0]), axis=0)
        scale = abs(a[0, 4]) or 1.0
        out = {f"Pi{j}": float(d[j] / scale) for j in range(1, 8)}
        out["E"] = float(d[8] / (abs(a[0, 8]) or 1.0))
        return out


def evolve(u0: SpinorField, cfg: EvolutionConfig, nl: Nonlinearity, observers=(), keep_snapshots: bool = False,
           record_invariants: bool = True, checkpoint_dir=None, checkpoint_every: int = 0,
           resume: bool = False) -> Trajectory:
    """Integrate to ``cfg.t_final``; observers ``f(t, u)`` run every ``output_every`` steps.

    Checkpoints are written at output boundaries, where the split-step state
    is synchronized, so resuming reproduces the uninterrupted run bit for bit.
    """
    cfg.check_resolution(u0.grid)
    st = Stepper(u0.grid, cfg.dt, nl, cfg.sponge)
    traj = Trajectory()
    v = u0.values.copy()
    done = 0
    ck = Path(checkpoint_dir) if checkpoint_dir else None
    if ck is not None:
        ck.mkdir(parents=True, exist_ok=True)
    if resume and ck is not None and (ck / "state.json").exists():
        state = json.loads((ck / "state.json").read_text())
        v = load_field(ck / "checkpoint.bin").values.copy()
        done = int(state["steps_done"])
        traj.times, traj.hashes = state["times"], state["hashes"]
        traj.series = [InvariantVector(np.array(r[1:8]), r[8]) if r is not None else None for r in state["series"]]
        traj.snapshots = [None] * len(traj.times)
    else:
        _record(traj, 0.0, u0, nl, observers, keep_snapshots, record_invariants)
    n_total = cfg.n_steps
    chunk = 0
    while done < n_total:
        n = min(cfg.output_every, n_total - done)
        last_good = v.copy()
        v = st.advance(v, n)
        if not np.isfinite(v).all():
            t_last = done * cfg.dt
            raise BlowUpError(f"non-finite field between t={t_last:.6g} and t={(done + n) * cfg.dt:.6g}",
                              t_last, SpinorField(u0.grid, last_good))
        done += n
        chunk += 1
        u = SpinorField(u0.grid, v)
        _record(traj, done * cfg.dt, u, nl, observers, keep_snapshots, record_invariants)
        if ck is not None and checkpoint_every and chunk % checkpoint_every == 0:
            _checkpoint(ck, u, done, traj)
    traj.final = SpinorField(u0.grid, v)
    return traj


def _record(traj, t, u, nl, observers, keep, record_invariants):
    inv = invariants(u, nl) if record_invariants else None
    traj.append(t, inv, u.copy(), keep)
    for obs in observers:
        obs(t, u)


def _checkpoint(ck: Path, u: SpinorField, done: int, traj: Trajectory) -> None:
    save_field(ck / "checkpoint.bin", u)
    state = {
        "steps_done": done,
        "times": traj.times,
        "hashes": traj.hashes,
        "series": [[t, *inv.as_row()] if inv is not None else None for t, inv in zip(traj.times, traj.series)],
    }
    (ck / "state.json").write_text(json.dumps(state))


def exact_soliton_at(t: float, p: SolitonParams, grid: Grid3, phi) -> SpinorField:
    """``exp(i t (omega + v^2/4)) exp(i v.(x - t v)/2) phi(x - t v)`` with minimal-image ``x - t v``.

    ``phi`` is a radial callable (e.g. a :class:`RadialProfile`).
    """
    c = t * p.v
    X, Y, Z = grid.mesh(c)
    r = np.sqrt(X**2 + Y**2 + Z**2)
    ph = np.exp(1j * t * (p.omega + 0.25 * float(p.v @ p.v))) * np.exp(0.5j * (p.v[0] * X + p.v[1] * Y + p.v[2] * Z))
    return SpinorField.from_components(grid, ph * phi(r))


# --- initial data -------------------------------------------------------------

@dataclass
class PerturbationSpec:
    """Mode kicks ``{index: z}`` into a list of grid modes plus an optional radiation seed."""

    kicks: dict = field(default_factory=dict)
    radiation_amplitude: float = 0.0
    radiation_width: float = 2.0
    seed: int = 0


@dataclass
class PreparedData:
    u0: SpinorField
    params: SolitonParams
    iterations: int
    residual: np.ndarray
    adjusted: dict


def _kick_field(grid: Grid3, spec: PerturbationSpec, modes: list[GridMode]) -> np.ndarray:
    out = np.zeros((2, grid.n, grid.n, grid.n), dtype=complex)
    for idx, z in spec.kicks.items():
        idx = int(idx)
        if not 0 <= idx < len(modes):
            raise ConstraintError(f"kick index {idx} out of range (have {len(modes)} modes)")
        m = modes[idx]
        if m.block != "first":
            raise ConstraintError(
                "second-block kicks are incompatible with the constraint Pi(u0) = p0: "
                "Pi_4 = Pi_7 forces the second component to vanish identically")
        z = complex(z)
        out += 2 * (z.real * m.A.values - z.imag * m.B.values)
    if spec.radiation_amplitude:
        rng = np.random.default_rng(spec.seed)
        seed = random_field(grid, rng).values
        seed[1] = 0.0
        r2 = grid.radius() ** 2
        seed[0] *= np.exp(-0.5 * r2 / spec.radiation_width**2)
        seed[0] *= spec.radiation_amplitude / np.sqrt(np.sum(np.abs(seed[0]) ** 2) * grid.cell_volume)
        out += seed
    return out


def prepare_initial_data(p0: SolitonParams, spec: PerturbationSpec, modes: list[GridMode], lifted,
                         tol: float = 1e-10, max_iter: int = 50) -> PreparedData:
    """``u0 = Phi_{p(omega0 + d_omega, v)} + kick`` with ``(d_omega, v)`` solved so that ``Pi(u0) = p0``.

    The base soliton and kick live in the first component only, so ``Pi_5``,
    ``Pi_6`` vanish and ``Pi_7 = Pi_4`` identically; the Newton iteration acts on
    ``Pi_1..Pi_4`` with unknowns ``(d_omega, v_1, v_2, v_3)``.
    """
    grid = lifted.grid
    kick = _kick_field(grid, spec, modes)
    target = p0.p

    def build(q):
        p = SolitonParams(p0.omega + q[0], q[1:4], None)
        u = SpinorField(grid, kick.copy())
        u.values[0] += lifted.soliton_component(p)
        return u

    def resid(q):
        u = build(q)
        inv = invariants(u, lifted.nl).pi
        return inv - target, u

    q = np.zeros(4)
    F, u = resid(q)
    it = 0
    scale = np.array([1e-6, 1e-6, 1e-6, 1e-6])
    while np.max(np.abs(F[:4])) > tol:
        if it >= max_iter:
            raise ConstraintError(f"constraint Newton did not converge; residual {np.max(np.abs(F)):.3e}")
        J = np.zeros((4, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = scale[j]
            J[:, j] = (resid(q + e)[0][:4] - resid(q - e)[0][:4]) / (2 * scale[j])
        q = q - np.linalg.solve(J, F[:4])
        F, u = resid(q)
        it += 1
    if np.max(np.abs(F)) > tol:
        raise ConstraintError(f"constraints Pi_5..Pi_7 violated by {np.max(np.abs(F[4:])):.3e}")
    p = SolitonParams(p0.omega + q[0], q[1:4], 0.5 * lifted.mass(p0.omega + q[0]))
    return PreparedData(u, p, it, F, {"d_omega": float(q[0]), "v": q[1:4].tolist()})
