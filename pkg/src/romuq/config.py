"""Run configuration: strict section parsing with declared defaults.

Unknown keys are rejected; every command writes the fully resolved
configuration beside its outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


def _strict(cls, section: str, d: dict):
    allowed = set(cls.__dataclass_fields__)
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cls(**d)


@dataclass
class DatagenSection:
    case: str = "ks"
    n_x: int = 64
    dt: float = 0.05
    n_t: int = 1000
    domain_length: float = 22.0
    omega: float = 1.0
    init_amplitude: float = 0.1
    init_scale: float = 0.1


@dataclass
class VaeSection:
    latent_dim: int = 8
    hidden: list = field(default_factory=lambda: [64])
    embed_dim: int = 8


@dataclass
class TransformerSection:
    lookback: int = 10
    horizon: int = 10
    width: int = 64
    heads: int = 4
    blocks: int = 1
    ff_mult: int = 2


@dataclass
class LossSection:
    lam: float = 100.0
    kld_weight: float = 1e-4


@dataclass
class TrainingSection:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    replay_fraction: float = 0.25
    retrain_epochs: int = 40


@dataclass
class UqSection:
    ensemble_n: int = 64
    interval_k: float = 2.0


@dataclass
class AdaptiveSection:
    budget: int = 5
    threshold: float = 0.0
    grid: list = field(default_factory=list)  # list of {name: value} maps


@dataclass
class RunConfig:
    datagen: DatagenSection = field(default_factory=DatagenSection)
    vae: VaeSection = field(default_factory=VaeSection)
    transformer: TransformerSection = field(default_factory=TransformerSection)
    loss: LossSection = field(default_factory=LossSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    uq: UqSection = field(default_factory=UqSection)
    adaptive: AdaptiveSection = field(default_factory=AdaptiveSection)
    seed: int = 0
    out_dir: str = "runs"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {
            "datagen": DatagenSection, "vae": VaeSection,
            "transformer": TransformerSection, "loss": LossSection,
            "training": TrainingSection, "uq": UqSection,
            "adaptive": AdaptiveSection,
        }
        unknown = set(d) - set(sections) - {"seed", "out_dir"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in sections.items():
            raw = d.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(f"section [{name}] must be a mapping")
            kwargs[name] = _strict(section_cls, name, raw)
        return cls(seed=d.get("seed", 0), out_dir=d.get("out_dir", "runs"),
                   **kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def write_resolved(config: RunConfig, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "resolved_config.json")
