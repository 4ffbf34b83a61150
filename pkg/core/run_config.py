# crowd_counting_desk/core/run_config.py

"""
RunConfig: alle Modul-Konfigurationen in einem Objekt, verlustfrei
nach YAML und zurück. Unbekannte Schlüssel werden mit Datei und
gepunktetem Pfad abgelehnt.
"""

import copy
from dataclasses import asdict, dataclass, field, fields

import yaml

from core.backbone import ModelConfig
from core.clm import ClmConfig
from core.datagen_io import SceneConfig
from core.evalmetrics import EvalConfig
from core.losses import LossWeights, SinkhornConfig
from core.mpm import MaskConfig
from core.optim import OptimConfig
from utils.errors import ConfigError
from utils.yaml_loader import find_unknown_keys, read_yaml


@dataclass
class DatasetConfig:
    n_images: int = 250
    val_fraction: float = 0.2

    def validate(self):
        if self.n_images < 1 or not 0 <= self.val_fraction < 1:
            raise ConfigError(f"❌ dataset: n_images={self.n_images}, val_fraction={self.val_fraction} ungültig")
        return self


SECTIONS = {
    "model": ModelConfig,
    "mask": MaskConfig,
    "clm": ClmConfig,
    "loss": LossWeights,
    "sinkhorn": SinkhornConfig,
    "scene": SceneConfig,
    "dataset": DatasetConfig,
    "optim": OptimConfig,
    "eval": EvalConfig,
}

# frei belegbare Abschnitte (nur Metadaten / Pfade)
FREE_SECTIONS = ("project", "paths")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    clm: ClmConfig = field(default_factory=ClmConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    project: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    # ------------------------------------------------------------
    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"❌ seed={self.seed} muss eine ganze Zahl >= 0 sein")
        return self

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False, allow_unicode=True)
        return path

    def copy(self):
        return copy.deepcopy(self)

    # ------------------------------------------------------------
    @classmethod
    def from_dict(cls, data, sources=None):
        sources = sources or {}
        unknown = find_unknown_keys(data, schema())
        if unknown:
            key = unknown[0]
            where = sources.get(key.split(".")[0], "<config>")
            raise ConfigError(f"❌ Unbekannter Schlüssel '{key}' in {where}"
                              + (f" (+{len(unknown) - 1} weitere)" if len(unknown) > 1 else ""))

        kwargs = {}
        for name, section_cls in SECTIONS.items():
            values = data.get(name) or {}
            if not isinstance(values, dict):
                raise ConfigError(f"❌ Abschnitt '{name}' in {sources.get(name, '<config>')} muss ein Mapping sein")
            kwargs[name] = section_cls(**values)
        for name in FREE_SECTIONS:
            kwargs[name] = dict(data.get(name) or {})
        if "seed" in data:
            kwargs["seed"] = data["seed"]
        return cls(**kwargs)

    def set(self, dotted, value):
        """Einzelnen Wert per 'abschnitt.feld' setzen (CLI-Overrides, Sweeps)."""
        section, _, key = dotted.partition(".")
        if section == "seed" and not key:
            self.seed = int(value)
            return self
        if section not in SECTIONS or key not in {f.name for f in fields(SECTIONS[section])}:
            raise ConfigError(f"❌ Unbekannter Schlüssel '{dotted}'")
        setattr(getattr(self, section), key, value)
        return self


def schema():
    out = {name: {f.name: None for f in fields(cls)} for name, cls in SECTIONS.items()}
    out.update({name: None for name in FREE_SECTIONS})
    out["seed"] = None
    return out


def load_run_config(path):
    data = read_yaml(path)
    return RunConfig.from_dict(data, sources={k: path for k in data}).validate()
