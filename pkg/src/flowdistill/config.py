"""Experiment configuration: YAML file <-> validated dataclasses.

Annotated example (every key optional except where noted)::

    seed: 0                      # model init + batch order
    output_dir: runs/student     # all artifacts land here
    model:
      architecture: glow_tabular # glow_tabular | maf
      depth: 3                   # number of blocks K
      hidden: 32                 # conditioner / MADE width
      n_hidden: 2                # hidden layers per conditioner
    dataset:
      kind: toy                  # toy | csv
      name: two_rings            # toy: gaussian_mixture | two_rings | checkerboard
      path: null                 # csv: path to a numeric CSV (required for kind=csv)
      n: 20000                   # toy: number of events drawn
      split: [0.81, 0.09, 0.10]  # train / val / test fractions
      seed: 0                    # data draw + split permutation
      dequantize: false          # csv: integer data in [0, 255], no standardization
    optimizer:
      iterations: 3000
      batch_size: 512
      lr: 0.0005
      weight_decay: 1.0e-5
      warmup_frac: 0.05
      clip_norm: 10.0
      select_every: 0            # >0: keep best-validation weights, scored every N steps
    distillation:
      mode: none                 # none | lkd | ilkd | skd
      teacher: null              # teacher checkpoint, required unless mode=none
      lambdas: null              # [nll, latent, skd]; null installs the mode preset
      correspondence: null       # [[teacher_tap, student_tap], ...]; null = default
      skd_batch: 256
      skd_temperature: 1.0
      skd_warmup: 0              # steps before the SKD term switches on
    benchmark:
      batch: 512
      repeats: 30
"""

import dataclasses
import os
import re
from dataclasses import dataclass, field

import yaml

from .data import DEFAULT_SPLIT, TOY_DENSITIES
from .distill import MODES, PRESETS
from .errors import ConfigError
from .flow_model import ARCHITECTURES


@dataclass
class ModelSection:
    architecture: str = "glow_tabular"
    depth: int = 3
    hidden: int = 32
    n_hidden: int = 2


@dataclass
class DatasetSection:
    kind: str = "toy"
    name: str = "two_rings"
    path: str = None
    n: int = 20000
    split: list = field(default_factory=lambda: list(DEFAULT_SPLIT))
    seed: int = 0
    dequantize: bool = False


@dataclass
class OptimizerSection:
    iterations: int = 3000
    batch_size: int = 512
    lr: float = 5e-4
    weight_decay: float = 1e-5
    warmup_frac: float = 0.05
    clip_norm: float = 10.0
    select_every: int = 0


@dataclass
class DistillationSection:
    mode: str = "none"
    teacher: str = None
    lambdas: list = None
    correspondence: list = None
    skd_batch: int = 256
    skd_temperature: float = 1.0
    skd_warmup: int = 0

    def weights(self):
        return tuple(float(w) for w in (self.lambdas if self.lambdas is not None else PRESETS[self.mode]))


@dataclass
class BenchmarkSection:
    batch: int = 512
    repeats: int = 30


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/experiment"
    model: ModelSection = field(default_factory=ModelSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    distillation: DistillationSection = field(default_factory=DistillationSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)

    def to_dict(self):
        return dataclasses.asdict(self)

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def apply_preset(self, preset):
        if preset not in PRESETS or preset == "none":
            raise ConfigError(f"unknown preset {preset!r}; expected lkd, ilkd or skd", "preset")
        self.distillation.mode = preset
        self.distillation.lambdas = list(PRESETS[preset])
        return self


_SECTIONS = {
    "model": ModelSection,
    "dataset": DatasetSection,
    "optimizer": OptimizerSection,
    "distillation": DistillationSection,
    "benchmark": BenchmarkSection,
}


def _build(cls, raw, prefix):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError("must be a mapping", prefix)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError("unknown key", f"{prefix}.{key}" if prefix else key)
    return cls(**raw)


def from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping", "<root>")
    top = {k: v for k, v in raw.items() if k not in _SECTIONS}
    cfg = _build(ExperimentConfig, top, "")
    for name, cls in _SECTIONS.items():
        setattr(cfg, name, _build(cls, raw.get(name), name))
    return validate(cfg)


class _Loader(yaml.SafeLoader):
    pass


# PyYAML follows YAML 1.1, which reads "5e-4" as a string.
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+$"),
    list("-+0123456789."),
)


def parse(text):
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", "<file>") from None
    return from_dict(raw or {})


def load(path):
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def _int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", name)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}, got {value}", name)


def _number(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", name)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}, got {value}", name)


def validate(cfg, check_files=True):
    """Check every field; errors name the offending key."""
    _int(cfg.seed, "seed", 0)
    if not isinstance(cfg.output_dir, str) or not cfg.output_dir:
        raise ConfigError("must be a non-empty path", "output_dir")

    m = cfg.model
    if m.architecture not in ARCHITECTURES:
        raise ConfigError(f"expected one of {ARCHITECTURES}, got {m.architecture!r}", "model.architecture")
    _int(m.depth, "model.depth", 1)
    _int(m.hidden, "model.hidden", 1)
    _int(m.n_hidden, "model.n_hidden", 1)

    d = cfg.dataset
    if d.kind not in ("toy", "csv"):
        raise ConfigError(f"expected toy or csv, got {d.kind!r}", "dataset.kind")
    if d.kind == "toy" and d.name not in TOY_DENSITIES:
        raise ConfigError(f"unknown toy density {d.name!r}", "dataset.name")
    if d.kind == "csv":
        if not d.path:
            raise ConfigError("required for csv datasets", "dataset.path")
        if check_files and not os.path.exists(d.path):
            raise ConfigError(f"file {d.path} does not exist", "dataset.path")
    _int(d.n, "dataset.n", 3)
    _int(d.seed, "dataset.seed", 0)
    if not isinstance(d.split, (list, tuple)) or len(d.split) != 3 or abs(sum(d.split) - 1.0) > 1e-9:
        raise ConfigError("must be three fractions summing to 1", "dataset.split")
    d.split = [float(f) for f in d.split]

    o = cfg.optimizer
    _int(o.iterations, "optimizer.iterations", 1)
    _int(o.batch_size, "optimizer.batch_size", 2)
    _number(o.lr, "optimizer.lr", 0)
    _number(o.weight_decay, "optimizer.weight_decay", 0)
    _number(o.warmup_frac, "optimizer.warmup_frac", 0)
    if o.warmup_frac > 1:
        raise ConfigError("must be <= 1", "optimizer.warmup_frac")
    _number(o.clip_norm, "optimizer.clip_norm", 0)
    _int(o.select_every, "optimizer.select_every", 0)

    k = cfg.distillation
    if k.mode not in MODES:
        raise ConfigError(f"expected one of {MODES}, got {k.mode!r}", "distillation.mode")
    if k.mode == "none":
        if k.teacher:
            raise ConfigError("must be absent when mode is none", "distillation.teacher")
    else:
        if not k.teacher:
            raise ConfigError(f"a teacher checkpoint is required for mode {k.mode}", "distillation.teacher")
        if check_files and not os.path.exists(k.teacher):
            raise ConfigError(f"teacher checkpoint {k.teacher} does not exist", "distillation.teacher")
    if k.lambdas is not None:
        if not isinstance(k.lambdas, (list, tuple)) or len(k.lambdas) != 3:
            raise ConfigError("must be [nll, latent, skd]", "distillation.lambdas")
        for i, w in enumerate(k.lambdas):
            _number(w, f"distillation.lambdas[{i}]", 0)
        if sum(k.lambdas) <= 0:
            raise ConfigError("at least one weight must be positive", "distillation.lambdas")
        k.lambdas = [float(w) for w in k.lambdas]
    if k.correspondence is not None:
        if not isinstance(k.correspondence, list) or not all(
            isinstance(p, (list, tuple)) and len(p) == 2 for p in k.correspondence
        ):
            raise ConfigError("must be a list of [teacher_tap, student_tap] pairs", "distillation.correspondence")
        k.correspondence = [[int(a), int(b)] for a, b in k.correspondence]
    _int(k.skd_batch, "distillation.skd_batch", 1)
    _number(k.skd_temperature, "distillation.skd_temperature", 0)
    _int(k.skd_warmup, "distillation.skd_warmup", 0)

    _int(cfg.benchmark.batch, "benchmark.batch", 1)
    _int(cfg.benchmark.repeats, "benchmark.repeats", 10)
    return cfg
