"""Periodic grids, spinor fields, spectral transforms and the two bilinear pairings.

A :class:`SpinorField` stores ``values`` with shape ``(2, n, n, n)`` indexed as
``[component, ix, iy, iz]``.  Integrals are uniform grid sums times the cell
volume, which is exact for trigonometric polynomials resolved by the grid.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from vnls import _fft


class GridMismatchError(ValueError):
    pass


class AliasingError(ValueError):
    pass


def _smooth(n: int) -> bool:
    for p in (2, 3, 5):
        while n % p == 0:
            n //= p
    return n == 1


@dataclass(frozen=True)
class Grid3:
    """Periodic cube ``[-L/2, L/2)^3`` with ``n`` nodes per axis (origin is a node)."""

    n: int
    box_length: float

    def __post_init__(self):
        if self.n < 2 or self.n % 2 or not _smooth(self.n):
            raise ValueError(f"n_per_axis must be even with prime factors 2, 3, 5 only, got {self.n}")
        if not self.box_length > 0:
            raise ValueError("box_length must be positive")

    @property
    def spacing(self) -> float:
        return self.box_length / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def volume(self) -> float:
        return self.box_length**3

    @cached_property
    def x(self) -> np.ndarray:
        return -0.5 * self.box_length + self.spacing * np.arange(self.n)

    @cached_property
    def k(self) -> np.ndarray:
        # FFT ordering; the Nyquist entry is +n/2 so offsets lie in (-n/2, n/2]
        m = np.fft.fftfreq(self.n, d=1.0 / self.n)
        m[self.n // 2] = self.n // 2
        return 2 * np.pi / self.box_length * m

    @cached_property
    def k_deriv(self) -> np.ndarray:
        # odd derivative symbol with the unpaired Nyquist mode removed
        k = self.k.copy()
        k[self.n // 2] = 0.0
        return k

    @cached_property
    def k2(self) -> np.ndarray:
        k = self.k
        return k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2

    @property
    def k_max(self) -> float:
        return np.pi / self.spacing

    def mesh(self, center=(0.0, 0.0, 0.0)):
        """Minimal-image displacement ``x - center`` as three broadcastable arrays."""
        out = []
        for axis, c in enumerate(center):
            d = self.x - c
            d = d - self.box_length * np.round(d / self.box_length)
            shape = [1, 1, 1]
            shape[axis] = self.n
            out.append(d.reshape(shape))
        return tuple(out)

    def radius(self, center=(0.0, 0.0, 0.0)) -> np.ndarray:
        X, Y, Z = self.mesh(center)
        return np.sqrt(X**2 + Y**2 + Z**2)

    def to_dict(self) -> dict:
        return {"n_per_axis": self.n, "box_length": self.box_length}


@dataclass(frozen=True)
class RadialGrid:
    """Uniform nodes ``r_j = j h`` for ``j = 1..n_points`` with ``h = r_max / n_points``."""

    r_max: float
    n_points: int

    def __post_init__(self):
        if not self.r_max > 0 or self.n_points < 2:
            raise ValueError("invalid radial grid")

    @property
    def h(self) -> float:
        return self.r_max / self.n_points

    @cached_property
    def r(self) -> np.ndarray:
        return self.h * np.arange(1, self.n_points + 1)


class SpinorField:
    """Complex 2-vector field on a :class:`Grid3`."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid3, values: np.ndarray):
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != (2, grid.n, grid.n, grid.n):
            raise ValueError(f"values shape {values.shape} does not match grid n={grid.n}")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: Grid3) -> "SpinorField":
        return cls(grid, np.zeros((2, grid.n, grid.n, grid.n), dtype=np.complex128))

    @classmethod
    def from_components(cls, grid: Grid3, u1, u2=None) -> "SpinorField":
        vals = np.zeros((2, grid.n, grid.n, grid.n), dtype=np.complex128)
        vals[0] = u1
        if u2 is not None:
            vals[1] = u2
        return cls(grid, vals)

    def copy(self) -> "SpinorField":
        return SpinorField(self.grid, self.values.copy())

    def _check(self, other: "SpinorField"):
        if other.grid != self.grid:
            raise GridMismatchError(f"grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other):
        self._check(other)
        return SpinorField(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return SpinorField(self.grid, self.values - other.values)

    def __mul__(self, c):
        return SpinorField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return SpinorField(self.grid, self.values / c)

    def __neg__(self):
        return SpinorField(self.grid, -self.values)

    def __repr__(self):
        return f"SpinorField(n={self.grid.n}, L={self.grid.box_length})"

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def norm(self) -> float:
        return float(np.sqrt(inner_product(self, self)))

    def conj(self) -> "SpinorField":
        return SpinorField(self.grid, self.values.conj())


@dataclass
class RadialProfile:
    """Real radial function sampled on a :class:`RadialGrid`."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_points,):
            raise ValueError("profile length does not match radial grid")

    @cached_property
    def _spline(self) -> CubicSpline:
        # even extension keeps the interpolant smooth through r = 0
        r = self.grid.r
        return CubicSpline(np.concatenate([-r[::-1], r]), np.concatenate([self.values[::-1], self.values]))

    def __call__(self, r, nu: int = 0) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = self._spline(r, nu)
        return np.where(r <= self.grid.r_max, out, 0.0)

    @property
    def origin_value(self) -> float:
        return float(self._spline(0.0))

    def l2_norm_sq(self) -> float:
        """``4 pi int phi^2 r^2 dr`` by the trapezoid rule on the nodes (phi(r_max) ~ 0)."""
        r = self.grid.r
        return float(4 * np.pi * self.grid.h * np.sum(self.values**2 * r**2))


def inner_product(u: SpinorField, v: SpinorField) -> float:
    """``Re int conj(u) . v dx``."""
    if u.grid != v.grid:
        raise GridMismatchError(f"grid mismatch: {u.grid} vs {v.grid}")
    return float(np.vdot(u.values, v.values).real * u.grid.cell_volume)


def symplectic_form(X: SpinorField, Y: SpinorField) -> float:
    """``Omega(X, Y) = <i sigma_3 X, Y>``."""
    if X.grid != Y.grid:
        raise GridMismatchError(f"grid mismatch: {X.grid} vs {Y.grid}")
    s = np.vdot(X.values[0], Y.values[0]).imag - np.vdot(X.values[1], Y.values[1]).imag
    return float(s * X.grid.cell_volume)


def laplacian(u: SpinorField) -> SpinorField:
    g = u.grid
    return SpinorField(g, _fft.ifftn(-g.k2 * _fft.fftn(u.values)))


def derivative(u: SpinorField, axis: int) -> SpinorField:
    """Spectral ``d/dx_axis`` (axis 0, 1, 2) applied componentwise."""
    g = u.grid
    shape = [1, 1, 1]
    shape[axis] = g.n
    kk = g.k_deriv.reshape(shape)
    return SpinorField(g, _fft.ifftn(1j * kk * _fft.fftn(u.values)))


def sigma3(u: SpinorField) -> SpinorField:
    out = u.values.copy()
    out[1] *= -1
    return SpinorField(u.grid, out)


def sigma2_conj(u: SpinorField) -> SpinorField:
    """``sigma_2 C``: ``(u1, u2) -> (-i conj(u2), i conj(u1))``."""
    out = np.empty_like(u.values)
    out[0] = -1j * u.values[1].conj()
    out[1] = 1j * u.values[0].conj()
    return SpinorField(u.grid, out)


def lift_radial(profile: RadialProfile, grid: Grid3, center=(0.0, 0.0, 0.0), floor: float = 1e-4) -> SpinorField:
    """Place ``profile(|x - center|)`` in the first component using minimal-image distance.

    Raises :class:`AliasingError` if the profile has not decayed below
    ``floor * max|profile|`` at half the box length.
    """
    peak = np.max(np.abs(profile.values)) if profile.values.size else 0.0
    if peak > 0:
        half = 0.5 * grid.box_length
        tail = abs(float(profile(half))) if half <= profile.grid.r_max else 0.0
        if tail > floor * peak:
            raise AliasingError(
                f"profile value {tail:.3e} at half box exceeds {floor:g} x peak; enlarge the box"
            )
    r = grid.radius(center)
    return SpinorField.from_components(grid, profile(r))


def random_field(grid: Grid3, rng: np.random.Generator, band: float | None = None, amplitude: float = 1.0) -> SpinorField:
    """Random band-limited field with Fourier support ``|k_i| <= band`` (default ``k_max / 6``).

    Products of up to six such fields stay alias-free on the grid, so grid sums of
    polynomial densities are exact.
    """
    band = grid.k_max / 6 if band is None else band
    k = grid.k
    mask = (np.abs(k)[:, None, None] <= band) & (np.abs(k)[None, :, None] <= band) & (np.abs(k)[None, None, :] <= band)
    coeffs = rng.standard_normal((2, grid.n, grid.n, grid.n)) + 1j * rng.standard_normal((2, grid.n, grid.n, grid.n))
    coeffs *= mask
    vals = _fft.ifftn(coeffs)
    scale = np.sqrt(np.mean(np.abs(vals) ** 2))
    return SpinorField(grid, amplitude * vals / scale)


# --- persistence -----------------------------------------------------------

def _field_bytes(u: SpinorField) -> bytes:
    # node order z, y, x (x fastest); per node Re u1, Im u1, Re u2, Im u2
    arr = np.ascontiguousarray(u.values.transpose(3, 2, 1, 0))
    return arr.view(np.float64).astype("<f8", copy=False).tobytes()


def field_hash(u: SpinorField) -> str:
    return hashlib.sha256(_field_bytes(u)).hexdigest()


def save_field(path, u: SpinorField, extra: dict | None = None) -> str:
    """Write ``path`` (raw little-endian float64) and ``path.json`` (metadata); return the hash."""
    path = Path(path)
    data = _field_bytes(u)
    digest = hashlib.sha256(data).hexdigest()
    path.write_bytes(data)
    meta = {
        "grid": u.grid.to_dict(),
        "dtype": "<f8",
        "layout": "z,y,x nodes with x fastest; interleaved Re u1, Im u1, Re u2, Im u2",
        "sha256": digest,
    }
    if extra:
        meta.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return digest


def load_field(path) -> SpinorField:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    data = path.read_bytes()
    if hashlib.sha256(data).hexdigest() != meta["sha256"]:
        raise ValueError(f"content hash mismatch for {path}")
    g = Grid3(meta["grid"]["n_per_axis"], meta["grid"]["box_length"])
    arr = np.frombuffer(data, dtype="<f8").astype(np.float64).view(np.complex128)
    arr = arr.reshape(g.n, g.n, g.n, 2).transpose(3, 2, 1, 0)
    return SpinorField(g, np.ascontiguousarray(arr))
