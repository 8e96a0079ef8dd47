"""Trajectory generation: spectral KS solver, Hopf-bifurcation surrogate,
even/odd splitting, normalisation and the on-disk trajectory format."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"UPDR"
FORMAT_VERSION = 1


class SolverError(RuntimeError):
    """Raised when an integrator blows up; carries the first bad step."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class ParamPoint:
    """Named external-parameter vector; keys kept in sorted order."""

    values: tuple = ()

    @classmethod
    def of(cls, **kwargs) -> "ParamPoint":
        for k, v in kwargs.items():
            if not np.isfinite(v):
                raise ValueError(f"non-finite parameter {k}={v}")
        return cls(tuple(sorted((k, float(v)) for k, v in kwargs.items())))

    def as_dict(self) -> dict:
        return dict(self.values)

    def vector(self) -> np.ndarray:
        return np.array([v for _, v in self.values], dtype=np.float64)

    def names(self) -> tuple:
        return tuple(k for k, _ in self.values)

    def __getitem__(self, name: str) -> float:
        return dict(self.values)[name]


@dataclass
class Grid:
    length: float
    n_points: int

    @property
    def dx(self) -> float:
        return self.length / self.n_points


@dataclass
class Trajectory:
    """Dense space-time state array with grid metadata; the dataset unit."""

    states: np.ndarray  # (n_t, n_xy) float64
    dt: float
    grid: Grid
    param: ParamPoint = field(default_factory=ParamPoint)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] < 2:
            raise ValueError(f"states must be (n_t>=2, n_xy), got {self.states.shape}")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("non-finite states")

    @property
    def n_t(self) -> int:
        return self.states.shape[0]

    @property
    def n_xy(self) -> int:
        return self.states.shape[1]


# ---------------------------------------------------------------------------
# Kuramoto-Sivashinsky, Fourier pseudo-spectral + ETDRK4


def _etdrk4_coeffs(lin: np.ndarray, dt: float, n_contour: int = 32):
    """phi-function coefficients via contour integration on the unit circle."""
    e_full = np.exp(dt * lin)
    e_half = np.exp(0.5 * dt * lin)
    r = np.exp(1j * np.pi * (np.arange(1, n_contour + 1) - 0.5) / n_contour)
    lr = dt * lin[:, None] + r[None, :]
    q = dt * np.real(np.mean((np.exp(lr / 2) - 1) / lr, axis=1))
    f1 = dt * np.real(np.mean((-4 - lr + np.exp(lr) * (4 - 3 * lr + lr ** 2)) / lr ** 3, axis=1))
    f2 = dt * np.real(np.mean((2 + lr + np.exp(lr) * (-2 + lr)) / lr ** 3, axis=1))
    f3 = dt * np.real(np.mean((-4 - 3 * lr - lr ** 2 + np.exp(lr) * (4 - lr)) / lr ** 3, axis=1))
    return e_full, e_half, q, f1, f2, f3


def _dealiased_square(v_hat: np.ndarray, n_x: int) -> np.ndarray:
    """u^2 in spectral space via 3/2-rule zero padding."""
    m = 3 * n_x // 2
    pad = np.zeros(m, dtype=complex)
    half = n_x // 2
    pad[:half] = v_hat[:half]
    pad[-half:] = v_hat[-half:]
    u_pad = np.fft.ifft(pad).real * (m / n_x)
    sq_hat = np.fft.fft(u_pad * u_pad) * (n_x / m)
    out = np.zeros(n_x, dtype=complex)
    out[:half] = sq_hat[:half]
    out[-half:] = sq_hat[-half:]
    return out


def solve_ks(nu: float, n_x: int = 64, domain_length: float = 22.0,
             dt: float = 0.05, n_t: int = 1000,
             init: Optional[np.ndarray] = None, seed: int = 0,
             init_scale: float = 0.1) -> Trajectory:
    """Integrate u_t + u u_x + u_xx + nu u_xxxx = 0 on a periodic domain.

    ETDRK4 in Fourier space with 3/2-rule dealiasing of the nonlinear term.
    ``init`` defaults to a small random smooth profile drawn from ``seed``.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    if n_x & (n_x - 1) != 0:
        raise ValueError("n_x must be a power of two")
    x = domain_length * np.arange(n_x) / n_x
    if init is None:
        rng = np.random.default_rng(seed)
        init = np.zeros(n_x)
        for m in range(1, 4):
            init += init_scale * rng.standard_normal() * np.cos(2 * np.pi * m * x / domain_length)
            init += init_scale * rng.standard_normal() * np.sin(2 * np.pi * m * x / domain_length)
    u = np.asarray(init, dtype=np.float64)
    if u.shape != (n_x,):
        raise ValueError(f"init shape {u.shape} != ({n_x},)")

    k = 2 * np.pi * np.fft.fftfreq(n_x, d=domain_length / n_x)
    lin = k ** 2 - nu * k ** 4
    e_full, e_half, q, f1, f2, f3 = _etdrk4_coeffs(lin, dt)
    ik_half = -0.5j * k

    def nonlin(v_hat):
        return ik_half * _dealiased_square(v_hat, n_x)

    v = np.fft.fft(u)
    states = np.empty((n_t, n_x), dtype=np.float64)
    states[0] = u
    for step in range(1, n_t):
        n_v = nonlin(v)
        a = e_half * v + q * n_v
        n_a = nonlin(a)
        b = e_half * v + q * n_a
        n_b = nonlin(b)
        c = e_half * a + q * (2 * n_b - n_v)
        n_c = nonlin(c)
        v = e_full * v + n_v * f1 + 2 * (n_a + n_b) * f2 + n_c * f3
        u = np.fft.ifft(v).real
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > 1e6:
            raise SolverError("KS solution blow-up", step)
        states[step] = u

    return Trajectory(states=states, dt=dt, grid=Grid(domain_length, n_x),
                      param=ParamPoint.of(ks_nu=nu))


# ---------------------------------------------------------------------------
# Hopf-bifurcation surrogate (Stuart-Landau oscillator lifted to a field)


def stuart_landau(mu: float, omega: float, dt: float, n_t: int,
                  init_amplitude: float, c: float = 0.0) -> np.ndarray:
    """RK4 integration of dA/dt = (mu + i omega) A - (1 + i c) |A|^2 A."""
    coef_lin = complex(mu, omega)
    coef_cub = complex(1.0, c)

    def f(a):
        return coef_lin * a - coef_cub * (a.real ** 2 + a.imag ** 2) * a

    a = complex(init_amplitude, 0.0)
    out = np.empty(n_t, dtype=complex)
    out[0] = a
    for step in range(1, n_t):
        k1 = f(a)
        k2 = f(a + 0.5 * dt * k1)
        k3 = f(a + 0.5 * dt * k2)
        k4 = f(a + dt * k3)
        a = a + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(a.real) or abs(a) > 1e6:
            raise SolverError("Stuart-Landau divergence", step)
        out[step] = a
    return out


def hopf_mode_shapes(n_x: int):
    """Fixed spatial lift: first-harmonic sin/cos plus a Gaussian base bump."""
    x = 2 * np.pi * np.arange(n_x) / n_x
    g1 = np.sin(x)
    g2 = np.cos(x)
    s = np.exp(-0.5 * ((x - np.pi) / (np.pi / 4)) ** 2)
    return g1, g2, s


def solve_hopf_surrogate(mu: float, omega: float = 1.0, n_x: int = 64,
                         dt: float = 0.05, n_t: int = 1000,
                         init_amplitude: float = 0.1) -> Trajectory:
    """Desk-scale bifurcation benchmark: mu < 0 decays to the base state,
    mu > 0 settles on a limit cycle of amplitude sqrt(mu)."""
    if init_amplitude <= 0:
        raise ValueError("init_amplitude must be positive")
    amps = stuart_landau(mu, omega, dt, n_t, init_amplitude)
    g1, g2, s = hopf_mode_shapes(n_x)
    states = np.outer(amps.real, g1) + np.outer(amps.imag, g2) + s[None, :]
    return Trajectory(states=states, dt=dt, grid=Grid(2 * np.pi, n_x),
                      param=ParamPoint.of(mu=mu, omega=omega))


# ---------------------------------------------------------------------------
# dataset utilities


def split_even_odd(traj: Trajectory):
    """Even-index snapshots to train, odd to test; both at doubled dt."""
    if traj.n_t < 4:
        raise ValueError("need at least 4 snapshots to split")
    train = Trajectory(states=traj.states[0::2].copy(), dt=2 * traj.dt,
                       grid=traj.grid, param=traj.param)
    test = Trajectory(states=traj.states[1::2].copy(), dt=2 * traj.dt,
                      grid=traj.grid, param=traj.param)
    return train, test


VARIANCE_FLOOR = 1e-8


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    floored: np.ndarray  # bool mask of variance-floored features

    def forward(self, states: np.ndarray) -> np.ndarray:
        return (states - self.mean) / self.std

    def inverse(self, states: np.ndarray) -> np.ndarray:
        return states * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "floored": self.floored.astype(int).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(mean=np.array(d["mean"], dtype=np.float64),
                   std=np.array(d["std"], dtype=np.float64),
                   floored=np.array(d["floored"], dtype=bool))


def normalize(dataset: list):
    """Per-feature zero-mean unit-variance map fit on ``dataset``.

    Returns the transformed trajectories and the stats for the inverse map.
    Zero-variance features have their variance floored at 1e-8 and flagged.
    """
    stacked = np.concatenate([t.states for t in dataset], axis=0)
    mean = stacked.mean(axis=0)
    var = stacked.var(axis=0)
    floored = var < VARIANCE_FLOOR
    std = np.sqrt(np.maximum(var, VARIANCE_FLOOR))
    stats = NormStats(mean=mean, std=std, floored=floored)
    out = [Trajectory(states=stats.forward(t.states), dt=t.dt, grid=t.grid,
                      param=t.param) for t in dataset]
    return out, stats


# ---------------------------------------------------------------------------
# on-disk format


def write_trajectory(path, traj: Trajectory):
    """Bit-exact binary trajectory file plus a human-readable .meta.json."""
    path = Path(path)
    params = traj.param.values
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", traj.n_t))
        f.write(struct.pack("<Q", traj.n_xy))
        f.write(struct.pack("<d", traj.dt))
        f.write(struct.pack("<I", len(params)))
        for name, value in params:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<d", value))
        f.write(traj.states.astype("<f4").tobytes())
    meta = {
        "format_version": FORMAT_VERSION,
        "n_t": traj.n_t,
        "n_xy": traj.n_xy,
        "dt": traj.dt,
        "params": {k: v for k, v in params},
        "grid": {"length": traj.grid.length, "n_points": traj.grid.n_points},
    }
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        version, = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported format version {version}")
        n_t, = struct.unpack("<Q", f.read(8))
        n_xy, = struct.unpack("<Q", f.read(8))
        dt, = struct.unpack("<d", f.read(8))
        n_params, = struct.unpack("<I", f.read(4))
        params = {}
        for _ in range(n_params):
            name_len, = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            value, = struct.unpack("<d", f.read(8))
            params[name] = value
        payload = np.frombuffer(f.read(n_t * n_xy * 4), dtype="<f4")
    states = payload.reshape(n_t, n_xy).astype(np.float64)
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    grid = Grid(1.0, n_xy)
    if meta_path.exists():
        with open(meta_path) as f:
            meta = json.load(f)
        grid = Grid(meta["grid"]["length"], meta["grid"]["n_points"])
    return Trajectory(states=states, dt=dt, grid=grid,
                      param=ParamPoint.of(**params))
