"""Run configuration: one JSON document covering every pipeline stage.

Stage seeds are derived from the global seed by fixed offsets (mod 2**64)::

    synth    seed + 0
    cbow     seed + 1
    cohort   seed + 2
    cnn      seed + 3   (weight initialisation)
    train    seed + 4   (batch order)
    suite    seed + 5   (forests, random embeddings)
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .cnn import CnnConfig
from .cohort import CohortSpec
from .embedding import CbowConfig
from .synth import SynthConfig
from .training import TrainConfig

STAGE_OFFSETS = {"synth": 0, "cbow": 1, "cohort": 2, "cnn": 3, "train": 4, "suite": 5}
_U64 = 2**64


class ConfigError(ValueError):
    pass


def stage_seed(seed: int, stage: str) -> int:
    return (seed + STAGE_OFFSETS[stage]) % _U64


@dataclass
class SuiteConfig:
    modes: tuple = ("BofW", "W2vAve", "W2vSum", "W2vMax", "W2vAll", "RandSum")
    classifiers: tuple = ("LR", "SVM", "RF")
    lambdas: tuple = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
    enabled: bool = True


_SECTIONS = {
    "synth": SynthConfig,
    "cbow": CbowConfig,
    "cohort": CohortSpec,
    "cnn": CnnConfig,
    "train": TrainConfig,
    "suite": SuiteConfig,
}


@dataclass
class RunConfig:
    task: str = "synthetic"
    seed: int = 0
    synth: dict = field(default_factory=dict)
    cbow: dict = field(default_factory=dict)
    cohort: dict = field(default_factory=lambda: {"target_codes": ["TARGET"]})
    cnn: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    suite: dict = field(default_factory=dict)
    early_prediction: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        cfg = cls(**copy.deepcopy(d))
        cfg.check()
        return cfg

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    def check(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        for name, typ in _SECTIONS.items():
            section = getattr(self, name)
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            unknown = set(section) - set(typ.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"unknown {name} option(s): {sorted(unknown)}")
        try:
            self.synth_config().validate(cohort=bool(self.synth.get("target_code")))
            self.cbow_config().validate()
            self.cohort_spec().validate()
            self.cnn_config().validate()
            self.train_config().validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if any(not isinstance(h, int) or h < 0 for h in self.early_prediction):
            raise ConfigError("early_prediction must list non-negative day counts")

    def _section(self, name: str, seeded: bool = True):
        values = dict(getattr(self, name))
        if seeded:
            values["seed"] = stage_seed(self.seed, name)
        return _SECTIONS[name](**values)

    def synth_config(self) -> SynthConfig:
        return self._section("synth")

    def cbow_config(self) -> CbowConfig:
        return self._section("cbow")

    def cohort_spec(self, holdoff_days: int | None = None) -> CohortSpec:
        spec = self._section("cohort")
        if holdoff_days is not None:
            spec.holdoff_days = holdoff_days
        return spec

    def cnn_config(self) -> CnnConfig:
        return self._section("cnn")

    def train_config(self) -> TrainConfig:
        return self._section("train")

    def suite_config(self) -> SuiteConfig:
        return self._section("suite", seeded=False)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides: dict) -> dict:
    """Set dotted keys such as ``cbow.window`` on a nested dict."""
    out = copy.deepcopy(d)
    for key, value in overrides.items():
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {key}: {p} is not a section")
        node[parts[-1]] = value
    return out


def load_run_config(path=None, overrides: dict | None = None, seed: int | None = None) -> RunConfig:
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    if overrides:
        d = apply_overrides(d, overrides)
    if seed is not None:
        d["seed"] = seed
    return RunConfig.from_dict(d)


def bundled_config(name: str = "desk") -> Path:
    return Path(__file__).parent / "configs" / f"{name}.json"


def report_header(cfg: RunConfig) -> dict:
    return {"task": cfg.task, "config_fingerprint": cfg.fingerprint(), "seed": cfg.seed,
            "version": __version__}
