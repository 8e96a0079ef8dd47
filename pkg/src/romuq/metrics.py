"""Evaluation quantities: kinetic energy, relative MSE, pointwise scaled
MSE, ensemble CRPS and Pearson correlation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import ParamPoint

SCALED_MSE_EPS = 1e-8


class ZeroVarianceError(ValueError):
    pass


def kinetic_energy(states: np.ndarray, channels: int = 1) -> np.ndarray:
    """Per-step kinetic energy of the state vector.

    For a single scalar channel, k_t = (1/(2 n_xy)) sum_d u^2. With two
    stacked velocity channels the state splits in half into (u, v) and
    k_t = (1/(2 n_pts)) sum_d (u^2 + v^2).
    """
    states = np.asarray(states, dtype=np.float64)
    if channels == 1:
        return 0.5 * np.mean(states ** 2, axis=-1)
    if channels == 2:
        if states.shape[-1] % 2 != 0:
            raise ValueError("state dim must be even for two channels")
        half = states.shape[-1] // 2
        u, v = states[..., :half], states[..., half:]
        return 0.5 * np.mean(u ** 2 + v ** 2, axis=-1)
    raise ValueError(f"unsupported channel count {channels}")


def relative_mse(pred: np.ndarray, truth: np.ndarray) -> float:
    """sum (pred - truth)^2 / sum truth^2, as a percentage."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    denom = np.sum(truth ** 2)
    if denom <= 0:
        raise ZeroVarianceError("truth has zero energy")
    return float(np.sum((pred - truth) ** 2) / denom * 100.0)


def scaled_mse(pred: np.ndarray, truth: np.ndarray, eps: float = SCALED_MSE_EPS):
    """Per-point temporal MSE scaled by the squared temporal range.

    Returns (per-point map over space, mean over space). Points whose truth
    signal is constant fall back to the eps floor in the denominator.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    mse_d = np.mean((pred - truth) ** 2, axis=0)
    rng_d = truth.max(axis=0) - truth.min(axis=0)
    per_point = mse_d / (rng_d ** 2 + eps)
    return per_point, float(per_point.mean())


def crps(ensemble: np.ndarray, truth: np.ndarray, form: str = "printed") -> float:
    """Ensemble CRPS averaged over all elements.

    ``printed`` uses squared differences:
        (1/n) sum_i (e_i - t)^2 - (1/(2 n^2)) sum_{i != j} (e_i - e_j)^2
    ``abs`` is the standard absolute-value ensemble form.
    """
    ensemble = np.asarray(ensemble, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    n = ensemble.shape[0]
    if n < 2:
        raise ValueError("ensemble needs at least two members")
    if ensemble.shape[1:] != truth.shape:
        raise ValueError(f"shape mismatch {ensemble.shape[1:]} vs {truth.shape}")

    if form == "printed":
        term1 = np.mean((ensemble - truth[None]) ** 2, axis=0)
        # sum_{i,j} (e_i - e_j)^2 = 2n sum e^2 - 2 (sum e)^2
        s1 = ensemble.sum(axis=0)
        s2 = (ensemble ** 2).sum(axis=0)
        pair = 2.0 * n * s2 - 2.0 * s1 ** 2
        term2 = pair / (2.0 * n * n)
        return float(np.mean(term1 - term2))
    if form == "abs":
        term1 = np.mean(np.abs(ensemble - truth[None]), axis=0)
        srt = np.sort(ensemble, axis=0)
        k = np.arange(n).reshape((n,) + (1,) * truth.ndim)
        # sum_{i,j} |e_i - e_j| = 2 sum_k e_(k) (2k - n + 1), 0-indexed
        pair = 2.0 * np.sum(srt * (2 * k - n + 1), axis=0)
        term2 = pair / (2.0 * n * n)
        return float(np.mean(term1 - term2))
    raise ValueError(f"unknown CRPS form {form!r}")


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation coefficient in [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two equal-length series of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc ** 2))
    sy = np.sqrt(np.sum(yc ** 2))
    if sx == 0 or sy == 0:
        raise ZeroVarianceError("zero variance input")
    return float(np.clip(np.sum(xc * yc) / (sx * sy), -1.0, 1.0))


@dataclass
class MetricReport:
    """Per-xi evaluation summary written to metrics.csv."""

    entries: list = field(default_factory=list)

    def add(self, point: ParamPoint, relative_mse_percent: float,
            crps_printed: float, crps_abs: float, scaled_mse_mean: float):
        self.entries.append({
            "param": point,
            "relative_mse_percent": relative_mse_percent,
            "crps_printed": crps_printed,
            "crps_abs": crps_abs,
            "scaled_mse_mean": scaled_mse_mean,
        })

    def write_csv(self, path):
        path = Path(path)
        if not self.entries:
            raise ValueError("empty report")
        names = self.entries[0]["param"].names()
        cols = ["relative_mse_percent", "crps_printed", "crps_abs", "scaled_mse_mean"]
        with open(path, "w") as f:
            f.write(",".join(names) + "," + ",".join(cols) + "\n")
            for e in self.entries:
                vals = [repr(float(v)) for v in e["param"].vector()]
                vals += [repr(float(e[c])) for c in cols]
                f.write(",".join(vals) + "\n")
