"""Second-pass ensemble uncertainty quantification.

The predicted trajectory is re-encoded snapshot by snapshot; each latent
Gaussian is sampled n times and decoded, and the ensemble standard
deviation gives the uncertainty field nu over (space, time).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import ParamPoint
from .training import ModelCheckpoint


@dataclass
class UncertaintyField:
    nu: np.ndarray  # (n_t, n_xy), >= 0
    param: ParamPoint
    ensemble_size: int
    seed: int


def member_noise(seed: int, member: int, t: int, dim: int) -> np.ndarray:
    """Reproducible per-(member, time) standard-normal stream."""
    ss = np.random.SeedSequence((seed, member, t))
    return np.random.Generator(np.random.PCG64(ss)).standard_normal(dim)


def ensemble_noise(seed: int, n: int, n_t: int, dim: int) -> np.ndarray:
    noise = np.empty((n, n_t, dim))
    for i in range(n):
        for t in range(n_t):
            noise[i, t] = member_noise(seed, i, t, dim)
    return noise


def second_pass(predicted_states: np.ndarray, ckpt: ModelCheckpoint,
                xi: ParamPoint, n: int = 64, seed: int = 0):
    """Ensemble UQ over a decoded prediction window (physical space).

    Returns the UncertaintyField and the decoded ensemble (n, n_t, n_xy),
    the latter feeding CRPS. Uses encoder/decoder only; the transformer is
    never invoked.
    """
    if n < 2:
        raise ValueError("ensemble size must be >= 2")
    states = np.asarray(predicted_states, dtype=np.float64)
    n_t = states.shape[0]
    z_dim = ckpt.config.vae.latent_dim

    norm = ckpt.stats.forward(states)
    dist = ckpt.vae.encode(norm, xi)
    mu, sigma = dist.mu.data, dist.sigma()

    noise = ensemble_noise(seed, n, n_t, z_dim)
    z = mu[None, :, :] + sigma[None, :, :] * noise
    decoded = ckpt.vae.decode(z.reshape(n * n_t, z_dim), xi).data
    ensemble = ckpt.stats.inverse(decoded).reshape(n, n_t, states.shape[1])

    mean = ensemble.mean(axis=0)
    nu = np.sqrt(np.mean((ensemble - mean[None]) ** 2, axis=0))
    field = UncertaintyField(nu=nu, param=xi, ensemble_size=n, seed=seed)
    return field, ensemble


def aggregate_time(field: UncertaintyField) -> np.ndarray:
    """Spatially averaged uncertainty per time step."""
    return field.nu.mean(axis=1)


def aggregate_param(field: UncertaintyField) -> float:
    """Uncertainty collapsed over space and time to one scalar per xi."""
    return float(field.nu.mean())


def confidence_interval(mean_traj: np.ndarray, field: UncertaintyField,
                        k: float = 2.0):
    """Elementwise mean +/- k * nu bounds."""
    if k <= 0:
        raise ValueError("k must be positive")
    return mean_traj - k * field.nu, mean_traj + k * field.nu


def _fmt(v: float) -> str:
    return repr(float(v))


def write_uq_csvs(directory, field: UncertaintyField):
    """Emit uq_field.csv (t, d, nu) and nu_t.csv for plotting."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "uq_field.csv", "w") as f:
        f.write("t,d,nu\n")
        for t in range(field.nu.shape[0]):
            for d in range(field.nu.shape[1]):
                f.write(f"{t},{d},{_fmt(field.nu[t, d])}\n")
    nu_t = aggregate_time(field)
    with open(directory / "nu_t.csv", "w") as f:
        f.write("t,nu_t\n")
        for t, v in enumerate(nu_t):
            f.write(f"{t},{_fmt(v)}\n")


def write_nu_xi_csv(path, rows):
    """Per-xi scalar table; ``rows`` is a list of (ParamPoint, nu_xi)."""
    path = Path(path)
    names = rows[0][0].names() if rows else ()
    with open(path, "w") as f:
        f.write(",".join(names) + ",nu_xi\n")
        for point, value in rows:
            vals = ",".join(_fmt(v) for v in point.vector())
            f.write(f"{vals},{_fmt(value)}\n")
