"""Joint optimisation of the VAE and latent transformer, checkpointing,
and replay-based retraining."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .datagen import NormStats, ParamPoint, Trajectory, normalize
from .optim import Adam
from .tensor import Tape, Tensor
from .transformer import LatentTransformer, TransformerConfig, rollout
from .vae import LatentDistribution, Vae, VaeConfig, kld, reparameterize


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int):
        super().__init__(f"NaN loss at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


@dataclass
class LossWeights:
    lam: float = 100.0
    kld_weight: float = 1e-4

    def __post_init__(self):
        if self.lam < 0 or self.kld_weight < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self):
        return {"lam": self.lam, "kld_weight": self.kld_weight}


@dataclass
class TrainConfig:
    vae: VaeConfig
    transformer: TransformerConfig
    loss: LossWeights = field(default_factory=LossWeights)
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3

    def to_dict(self):
        return {"vae": self.vae.to_dict(), "transformer": self.transformer.to_dict(),
                "loss": self.loss.to_dict(), "epochs": self.epochs,
                "batch_size": self.batch_size, "lr": self.lr}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(vae=VaeConfig(**d["vae"]),
                   transformer=TransformerConfig(**d["transformer"]),
                   loss=LossWeights(**d["loss"]), epochs=d["epochs"],
                   batch_size=d["batch_size"], lr=d["lr"])


def total_loss(vae: Vae, transformer: LatentTransformer,
               phi_window: np.ndarray, phi_target: np.ndarray,
               xi: np.ndarray, weights: LossWeights,
               noise: np.ndarray):
    """Composite loss over a batch of (lookback, target) windows.

    phi_window: (B, q, n_xy) normalised snapshots, phi_target: (B, h, n_xy),
    xi: (B, param_dim), noise: (B, q, latent_dim) standard normal draws.
    Returns the total scalar tensor and the three components: the weighted
    reconstruction+KLD branch, latent prediction, and decoded prediction.
    All norms are mean-squared per element.
    """
    b, q, n_xy = phi_window.shape
    h = phi_target.shape[1]
    z_dim = vae.config.latent_dim

    xi_q = np.repeat(xi, q, axis=0)
    xi_h = np.repeat(xi, h, axis=0)
    phi_lb = Tensor(phi_window.reshape(b * q, n_xy))
    phi_tg = Tensor(phi_target.reshape(b * h, n_xy))

    dist = vae.encode(phi_lb, xi_q)
    kl = kld(dist)
    z = reparameterize(dist, noise.reshape(b * q, z_dim))
    recon = vae.decode(z, xi_q)
    rec_term = T.mse(recon, phi_lb)

    target_mu = vae.encode(phi_tg, xi_h).mu
    z_pred = transformer.forecast(T.reshape(z, (b, q, z_dim)), Tensor(xi))
    z_pred_flat = T.reshape(z_pred, (b * h, z_dim))
    latent_term = T.mse(z_pred_flat, target_mu)

    decoded_pred = vae.decode(z_pred_flat, xi_h)
    pred_term = T.mse(decoded_pred, phi_tg)

    first = T.scale(T.add(rec_term, T.scale(kl, weights.kld_weight)), weights.lam)
    total = T.add(T.add(first, latent_term), pred_term)
    components = {
        "reconstruction_kld": float(first.data),
        "latent_prediction": float(latent_term.data),
        "decoded_prediction": float(pred_term.data),
        "kld": float(kl.data),
    }
    return total, components


@dataclass
class ModelCheckpoint:
    """All weights plus the configuration and provenance needed to rerun."""

    vae: Vae
    transformer: LatentTransformer
    config: TrainConfig
    stats: NormStats
    seed: int
    lineage: list = field(default_factory=list)
    loss_curve: list = field(default_factory=list)

    def named_parameters(self):
        return self.vae.named_parameters() + self.transformer.named_parameters()

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names, shapes, blobs = [], [], []
        for name, p in self.named_parameters():
            names.append(name)
            shapes.append(list(p.data.shape))
            blobs.append(p.data.astype("<f8").tobytes())
        manifest = {
            "format_version": 1,
            "config": self.config.to_dict(),
            "stats": self.stats.to_dict(),
            "seed": self.seed,
            "lineage": self.lineage,
            "loss_curve": self.loss_curve,
            "weights": [{"name": n, "shape": s} for n, s in zip(names, shapes)],
        }
        with open(directory / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
        with open(directory / "weights.bin", "wb") as f:
            for blob in blobs:
                f.write(blob)

    @classmethod
    def load(cls, directory) -> "ModelCheckpoint":
        directory = Path(directory)
        with open(directory / "manifest.json") as f:
            manifest = json.load(f)
        config = TrainConfig.from_dict(manifest["config"])
        rng = np.random.default_rng(manifest["seed"])
        vae = Vae(config.vae, rng)
        transformer = LatentTransformer(config.transformer, rng)
        ckpt = cls(vae=vae, transformer=transformer, config=config,
                   stats=NormStats.from_dict(manifest["stats"]),
                   seed=manifest["seed"], lineage=manifest["lineage"],
                   loss_curve=manifest["loss_curve"])
        raw = (directory / "weights.bin").read_bytes()
        offset = 0
        params = dict(ckpt.named_parameters())
        for entry in manifest["weights"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            offset += count * 8
            params[entry["name"]].data = arr.reshape(shape).copy()
        return ckpt


def extract_windows(traj: Trajectory, q: int, h: int):
    """Start indices of all (lookback, target) windows in a trajectory."""
    n = traj.n_t - q - h + 1
    if n < 1:
        raise ValueError(
            f"trajectory too short for lookback {q} + horizon {h}: n_t={traj.n_t}")
    return list(range(n))


def _gather_batch(trajs, window_index, batch_ids, q, h):
    phi_w = np.stack([trajs[ti].states[s:s + q] for ti, s in (window_index[i] for i in batch_ids)])
    phi_t = np.stack([trajs[ti].states[s + q:s + q + h] for ti, s in (window_index[i] for i in batch_ids)])
    xi = np.stack([trajs[ti].param.vector() for ti, s in (window_index[i] for i in batch_ids)])
    return phi_w, phi_t, xi


def _run_epochs(ckpt: ModelCheckpoint, trajs_norm, window_index, epochs,
                rng: np.random.Generator, curve: list):
    cfg = ckpt.config
    q, h = cfg.transformer.lookback, cfg.transformer.horizon
    z_dim = cfg.vae.latent_dim
    params = [p for _, p in ckpt.named_parameters()]
    opt = Adam(params, lr=cfg.lr)
    n_windows = len(window_index)
    for epoch in range(epochs):
        order = rng.permutation(n_windows)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n_windows, cfg.batch_size):
            batch_ids = order[start:start + cfg.batch_size]
            phi_w, phi_t, xi = _gather_batch(trajs_norm, window_index, batch_ids, q, h)
            noise = rng.standard_normal((len(batch_ids), q, z_dim))
            opt.zero_grad()
            with Tape() as tape:
                loss, _ = total_loss(ckpt.vae, ckpt.transformer, phi_w, phi_t,
                                     xi, cfg.loss, noise)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(epoch, n_batches)
                T.backward(tape, loss)
            opt.step()
            epoch_loss += float(loss.data)
            n_batches += 1
        curve.append(epoch_loss / max(n_batches, 1))


def train(dataset: Sequence[Trajectory], config: TrainConfig, seed: int,
          dataset_id: str = "initial") -> ModelCheckpoint:
    """Joint Adam optimisation over shuffled windows; deterministic per seed."""
    if not dataset:
        raise ValueError("empty dataset")
    q, h = config.transformer.lookback, config.transformer.horizon
    for traj in dataset:
        extract_windows(traj, q, h)  # validates length

    trajs_norm, stats = normalize(list(dataset))
    rng = np.random.default_rng(seed)
    vae = Vae(config.vae, rng)
    transformer = LatentTransformer(config.transformer, rng)
    ckpt = ModelCheckpoint(vae=vae, transformer=transformer, config=config,
                           stats=stats, seed=seed)

    window_index = [(ti, s) for ti, traj in enumerate(trajs_norm)
                    for s in extract_windows(traj, q, h)]
    _run_epochs(ckpt, trajs_norm, window_index, config.epochs, rng, ckpt.loss_curve)
    ckpt.lineage.append({"dataset": dataset_id, "epochs": config.epochs})
    return ckpt


def retrain(ckpt: ModelCheckpoint, new_data: Sequence[Trajectory],
            prior_data: Sequence[Trajectory], replay_fraction: float,
            epochs: int, seed: int, dataset_id: str = "retrain") -> ModelCheckpoint:
    """Continue optimisation on new data plus a replayed subsample of the
    prior windows; appends one lineage entry. Normalisation stats are kept
    from the initial fit so latent coordinates stay comparable."""
    if not 0.0 <= replay_fraction <= 1.0:
        raise ValueError("replay_fraction must lie in [0, 1]")
    cfg = ckpt.config
    q, h = cfg.transformer.lookback, cfg.transformer.horizon
    rng = np.random.default_rng(seed)

    new_norm = [Trajectory(states=ckpt.stats.forward(t.states), dt=t.dt,
                           grid=t.grid, param=t.param) for t in new_data]
    prior_norm = [Trajectory(states=ckpt.stats.forward(t.states), dt=t.dt,
                             grid=t.grid, param=t.param) for t in prior_data]
    trajs = new_norm + prior_norm
    window_index = [(ti, s) for ti in range(len(new_norm))
                    for s in extract_windows(trajs[ti], q, h)]
    prior_windows = [(ti + len(new_norm), s) for ti in range(len(prior_norm))
                     for s in extract_windows(prior_norm[ti], q, h)]
    n_replay = int(round(replay_fraction * len(prior_windows)))
    if n_replay > 0:
        chosen = rng.choice(len(prior_windows), size=n_replay, replace=False)
        window_index += [prior_windows[i] for i in sorted(chosen)]

    _run_epochs(ckpt, trajs, window_index, epochs, rng, ckpt.loss_curve)
    ckpt.lineage.append({"dataset": dataset_id, "epochs": epochs})
    return ckpt


def predict_rollout(ckpt: ModelCheckpoint, init_states: np.ndarray,
                    xi: ParamPoint, steps: int):
    """Encode the first lookback window, roll out in latent space, decode.

    ``init_states`` are physical-space snapshots of shape (lookback, n_xy).
    Returns (decoded physical states (steps, n_xy), latent trajectory).
    """
    q = ckpt.config.transformer.lookback
    if init_states.shape[0] != q:
        raise ValueError(f"need {q} initial snapshots, got {init_states.shape[0]}")
    norm = ckpt.stats.forward(init_states)
    mu = ckpt.vae.encode(norm, xi).mu.data
    z_traj = rollout(ckpt.transformer, mu, xi, steps)
    decoded = ckpt.vae.decode(z_traj, xi).data
    return ckpt.stats.inverse(decoded), z_traj
