"""Single JSON config covering every stage of the pipeline."""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ValidationError


@dataclass
class PathsConfig:
    dataset: str = ""
    predicate_vocab: str = ""
    entity_vocab: str = ""
    predictions: str = ""
    confusion: str = ""
    embeddings: str | None = None   # external embedding CSV; None = built-in featurizer

    def resolve(self, base):
        base = Path(base)
        out = PathsConfig(**asdict(self))
        for name in ("dataset", "predicate_vocab", "entity_vocab", "predictions", "confusion"):
            value = getattr(out, name)
            if value:
                setattr(out, name, str((base / value).resolve()))
        if out.embeddings:
            out.embeddings = str((base / out.embeddings).resolve())
        return out


@dataclass
class EmbeddingConfig:
    dim: int = 256
    featurizer_seed: int = 0


@dataclass
class TrainSection:
    temperature: float = 0.05
    margin_degrees: float = 10.0
    lam: float = 0.3
    learning_rate: float = 2e-5
    epochs: int = 10
    batch_size: int = 32
    momentum: float = 0.9
    projected_dim: int | None = None


@dataclass
class PrototypeSection:
    # The source material quotes beta = 5e5, which cannot act as a momentum
    # in a moving average; 0.9 is used and the quoted value stays unresolved.
    beta: float = 0.9
    gamma: float = 1.5
    mu: float = 1.0
    drop_percent: float = 50.0
    min_class_size: int = 100
    update_cadence: str = "batch"


@dataclass
class TransferSection:
    kg: float = 0.05
    direction_constraint: bool = True
    indistinguishable: bool = True


@dataclass
class ResampleSection:
    t: float = 3e7
    scarcity_source: str = "enhanced"   # or "original"


@dataclass
class AuditSection:
    recall: float | None = None
    mean_recall: float | None = None
    pq: float | None = None


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    train: TrainSection = field(default_factory=TrainSection)
    prototype: PrototypeSection = field(default_factory=PrototypeSection)
    transfer: TransferSection = field(default_factory=TransferSection)
    resample: ResampleSection = field(default_factory=ResampleSection)
    audit: AuditSection = field(default_factory=AuditSection)

    def validate(self):
        if self.embedding.dim < 2:
            raise ValidationError("embedding.dim must be >= 2")
        if self.prototype.update_cadence not in ("batch", "epoch"):
            raise ValidationError("prototype.update_cadence must be 'batch' or 'epoch'")
        if self.resample.scarcity_source not in ("enhanced", "original"):
            raise ValidationError("resample.scarcity_source must be 'enhanced' or 'original'")
        if not 0 <= self.transfer.kg <= 1:
            raise ValidationError("transfer.kg must lie in [0, 1]")
        if not 0 <= self.prototype.drop_percent <= 100:
            raise ValidationError("prototype.drop_percent must lie in [0, 100]")
        return self

    def to_dict(self):
        return asdict(self)


_SECTIONS = {
    "paths": PathsConfig,
    "embedding": EmbeddingConfig,
    "train": TrainSection,
    "prototype": PrototypeSection,
    "transfer": TransferSection,
    "resample": ResampleSection,
    "audit": AuditSection,
}

# JSON key "lambda" maps to the field name "lam" (keyword clash).
_KEY_ALIASES = {"train": {"lambda": "lam"}}


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ValidationError("config root must be a JSON object")
    kwargs = {}
    for key, value in data.items():
        if key == "seed":
            kwargs["seed"] = int(value)
        elif key in _SECTIONS:
            cls = _SECTIONS[key]
            aliases = _KEY_ALIASES.get(key, {})
            fields = {f for f in cls.__dataclass_fields__}
            section_kwargs = {}
            for k, v in value.items():
                k = aliases.get(k, k)
                if k not in fields:
                    raise ValidationError(f"unknown config key {key}.{k}")
                section_kwargs[k] = v
            kwargs[key] = cls(**section_kwargs)
        else:
            raise ValidationError(f"unknown config key {key!r}")
    return PipelineConfig(**kwargs).validate()


def load_config(path):
    """Load a pipeline config; relative paths resolve against the config's directory."""
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    cfg = config_from_dict(data)
    cfg.paths = cfg.paths.resolve(path.parent)
    return cfg


def save_config(cfg, path):
    data = cfg.to_dict()
    data["train"]["lambda"] = data["train"].pop("lam")
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
