"""Uncertainty-driven adaptive sampling over a parameter grid.

Each iteration rolls the model out at every grid point, aggregates the
uncertainty per point, and retrains with replay at the most uncertain
untrained point until the uncertainty converges or the budget runs out.
Validation error is recorded for diagnostics only and never influences
selection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .datagen import ParamPoint, Trajectory
from .metrics import ZeroVarianceError, pearson, scaled_mse
from .training import ModelCheckpoint, predict_rollout, retrain
from .uq import aggregate_param, second_pass


@dataclass
class AdaptiveState:
    param_grid: list
    trained_set: list
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "param_grid": [p.as_dict() for p in self.param_grid],
            "trained_set": [p.as_dict() for p in self.trained_set],
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdaptiveState":
        return cls(param_grid=[ParamPoint.of(**p) for p in d["param_grid"]],
                   trained_set=[ParamPoint.of(**p) for p in d["trained_set"]],
                   history=d["history"])

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "AdaptiveState":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def select_next(nu_grid: Sequence, trained_set: Sequence[ParamPoint]) -> ParamPoint:
    """Argmax of nu over untrained grid points; ties break to the smallest
    parameter vector in lexicographic order. ``nu_grid`` is a sequence of
    (ParamPoint, nu_xi) pairs."""
    trained = set(trained_set)
    candidates = [(p, v) for p, v in nu_grid if p not in trained]
    if not candidates:
        raise ValueError("no untrained grid points left")
    best = max(candidates, key=lambda pv: (pv[1], tuple(-x for x in pv[0].vector())))
    return best[0]


def evaluate_grid(ckpt: ModelCheckpoint, truths: dict, grid, ensemble_n: int,
                  seed: int):
    """Rollout + second-pass UQ at every grid point.

    Returns per-point lists of (nu_xi, scaled mse, predicted states).
    """
    q = ckpt.config.transformer.lookback
    nu_list, mse_list, preds = [], [], {}
    for point in grid:
        truth = truths[point]
        steps = truth.n_t - q
        predicted, _ = predict_rollout(ckpt, truth.states[:q], point, steps)
        field, _ = second_pass(predicted, ckpt, point, n=ensemble_n, seed=seed)
        nu_list.append(aggregate_param(field))
        _, smse = scaled_mse(predicted, truth.states[q:q + steps])
        mse_list.append(smse)
        preds[point] = predicted
    return nu_list, mse_list, preds


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_iter_csvs(out_dir: Path, iteration: int, grid, nu_list, mse_list):
    names = grid[0].names()
    with open(out_dir / f"iter{iteration}_nu.csv", "w") as f:
        f.write(",".join(names) + ",nu_xi\n")
        for p, v in zip(grid, nu_list):
            f.write(",".join(_fmt(x) for x in p.vector()) + f",{_fmt(v)}\n")
    with open(out_dir / f"iter{iteration}_mse.csv", "w") as f:
        f.write(",".join(names) + ",scaled_mse\n")
        for p, v in zip(grid, mse_list):
            f.write(",".join(_fmt(x) for x in p.vector()) + f",{_fmt(v)}\n")


def run_loop(ckpt: ModelCheckpoint, generator: Callable[[ParamPoint], Trajectory],
             grid: Sequence[ParamPoint], budget: int, threshold: float,
             initial_data: Sequence[Trajectory], retrain_epochs: int = 40,
             replay_fraction: float = 0.25, ensemble_n: int = 64,
             seed: int = 0, out_dir=None):
    """Adaptive sampling loop; returns (AdaptiveState, final checkpoint).

    ``generator`` supplies ground-truth trajectories on demand. Stops when
    the maximum uncertainty over untrained points falls below ``threshold``
    or after ``budget`` iterations.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    grid = list(grid)
    state = AdaptiveState(param_grid=grid,
                          trained_set=[t.param for t in initial_data])
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    replay_pool = list(initial_data)
    truths: dict = {}

    def fetch(point):
        if point not in truths:
            try:
                truths[point] = generator(point)
            except Exception:
                if out_path is not None:
                    state.save(out_path / "adaptive_history.json")
                raise
        return truths[point]

    for iteration in range(budget + 1):
        for point in grid:
            fetch(point)
        nu_list, mse_list, _ = evaluate_grid(ckpt, truths, grid, ensemble_n,
                                             seed + iteration)
        try:
            r = pearson(np.array(nu_list), np.array(mse_list))
        except ZeroVarianceError:
            r = float("nan")

        trained = set(state.trained_set)
        untrained = [(p, v) for p, v in zip(grid, nu_list) if p not in trained]
        record = {
            "iteration": iteration,
            "nu_xi": [{"param": p.as_dict(), "nu": v} for p, v in zip(grid, nu_list)],
            "scaled_mse": [{"param": p.as_dict(), "mse": v} for p, v in zip(grid, mse_list)],
            "pearson_r": r,
            "chosen": None,
        }
        if out_path is not None:
            _write_iter_csvs(out_path, iteration, grid, nu_list, mse_list)

        converged = not untrained or max(v for _, v in untrained) < threshold
        if converged or iteration == budget:
            state.history.append(record)
            break

        chosen = select_next(list(zip(grid, nu_list)), state.trained_set)
        record["chosen"] = chosen.as_dict()
        state.history.append(record)

        new_traj = fetch(chosen)
        retrain(ckpt, [new_traj], replay_pool, replay_fraction, retrain_epochs,
                seed=seed + 1000 + iteration,
                dataset_id=f"adaptive_iter{iteration}")
        replay_pool.append(new_traj)
        state.trained_set.append(chosen)

    if out_path is not None:
        state.save(out_path / "adaptive_history.json")
    return state, ckpt
