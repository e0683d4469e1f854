"""Experiment configuration: strict JSON schema, defaults in one place.

Every section is optional; omitted keys take the defaults below. Unknown
keys, wrong types and out-of-range values are all reported together in a
single :class:`ConfigError`.

Defaults (desk-scale Class-IL)::

    method               esmer              (esmer | er | logit_replay)
    ablation             weighting, stable, sensitive_sampling all true
    source.kind          synthetic
      num_classes 10, dim 32, separation 3.0, std 1.0,
      train_per_class 500, test_per_class 200
    source.kind          idx: train_images, train_labels, test_images, test_labels
    stream.mode          class_il           (class_il | gcil_uniform | gcil_longtail)
      n_tasks 5, noise_rate 0.0, c_max 10, samples_per_task 1000,
      zipf_exponent 1.0, dataset_seed null (= run seed)
    hyper                see DEFAULT_HYPER
    network.hidden_dims  [128, 128]
    logit_replay         w_mse 0.2, w_ce 0.5
    seeds                [0, 1, 2]
    probes               drift_every 20, memorization true, purity_every 50,
                         record_offers false
    output_dir           runs
    workers              1
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .learners import METHODS, Ablation, HyperParams

STREAM_MODES = ("class_il", "gcil_uniform", "gcil_longtail")

# ema_decay/update_rate/error_decay are rescaled so the stable-model and
# error-memory horizons, measured in tasks and epochs, match a 50-epoch run
# with 32-sample batches at alpha=0.999, r=0.1, alpha_l=0.99.
DEFAULT_HYPER = HyperParams(
    lr=0.03, ema_decay=0.98, update_rate=0.5, consistency_weight=0.15, margin=1.0,
    error_decay=0.9, warmup_epochs=1, batch_size=32, memory_batch_size=32,
    buffer_capacity=100, epochs_per_task=5,
)


@dataclass
class SourceConfig:
    kind: str = "synthetic"
    num_classes: int = 10
    dim: int = 32
    separation: float = 3.0
    std: float = 1.0
    train_per_class: int = 500
    test_per_class: int = 200
    train_images: str = None
    train_labels: str = None
    test_images: str = None
    test_labels: str = None


@dataclass
class StreamConfig:
    mode: str = "class_il"
    n_tasks: int = 5
    noise_rate: float = 0.0
    c_max: int = 10
    samples_per_task: int = 1000
    zipf_exponent: float = 1.0
    dataset_seed: int = None


@dataclass
class NetworkConfig:
    hidden_dims: list = field(default_factory=lambda: [128, 128])


@dataclass
class ReplayConfig:
    w_mse: float = 0.2
    w_ce: float = 0.5


@dataclass
class ProbeConfig:
    drift_every: int = 20
    memorization: bool = True
    purity_every: int = 50
    record_offers: bool = False


@dataclass
class ExperimentConfig:
    method: str = "esmer"
    ablation: Ablation = field(default_factory=Ablation)
    source: SourceConfig = field(default_factory=SourceConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    hyper: HyperParams = field(default_factory=lambda: HyperParams(**asdict(DEFAULT_HYPER)))
    network: NetworkConfig = field(default_factory=NetworkConfig)
    logit_replay: ReplayConfig = field(default_factory=ReplayConfig)
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    probes: ProbeConfig = field(default_factory=ProbeConfig)
    output_dir: str = "runs"
    workers: int = 1

    def to_dict(self):
        return asdict(self)

    def hash(self):
        """Digest of everything that influences results (not output_dir/workers)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @property
    def method_label(self):
        return self.method + (self.ablation.label if self.method == "esmer" else "")


_SECTIONS = {"ablation": Ablation, "source": SourceConfig, "stream": StreamConfig,
             "hyper": HyperParams, "network": NetworkConfig, "logit_replay": ReplayConfig,
             "probes": ProbeConfig}

_NULLABLE = {("stream", "dataset_seed"), ("source", "train_images"), ("source", "train_labels"),
             ("source", "test_images"), ("source", "test_labels"), ("probes", "drift_every"),
             ("probes", "purity_every")}


def _type_ok(value, expected):
    if expected is bool:
        return isinstance(value, bool)
    if expected is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if expected is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if expected is str:
        return isinstance(value, str)
    if expected is list:
        return isinstance(value, list)
    return True


def _build(cls, data, path, errors):
    if not isinstance(data, dict):
        errors.append(f"{path}: expected an object")
        return cls()
    known = {f.name: f.type for f in fields(cls)}
    for key in sorted(set(data) - set(known)):
        errors.append(f"{path}.{key}: unknown key")
    kwargs = {}
    for name, expected in known.items():
        if name not in data:
            continue
        value = data[name]
        if value is None and (path, name) in _NULLABLE:
            kwargs[name] = None
        elif not _type_ok(value, expected):
            errors.append(f"{path}.{name}: expected {expected.__name__}, got {value!r}")
        else:
            kwargs[name] = float(value) if expected is float else value
    return cls(**kwargs)


def parse_config(data):
    """Validate a decoded JSON object into an :class:`ExperimentConfig`."""
    errors = []
    if not isinstance(data, dict):
        raise ConfigError(["config: expected a JSON object"])
    known = {f.name for f in fields(ExperimentConfig)}
    for key in sorted(set(data) - known):
        errors.append(f"config.{key}: unknown key")
    kw = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kw[name] = _build(cls, data[name], name, errors)
    for name, expected in (("method", str), ("output_dir", str), ("workers", int),
                           ("seeds", list)):
        if name in data:
            if _type_ok(data[name], expected):
                kw[name] = data[name]
            else:
                errors.append(f"{name}: expected {expected.__name__}, got {data[name]!r}")
    cfg = ExperimentConfig(**kw)
    errors.extend(_check_ranges(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def _check_ranges(cfg):
    errs = []
    if cfg.method not in METHODS:
        errs.append(f"method: must be one of {list(METHODS)}, got {cfg.method!r}")
    src = cfg.source
    if src.kind == "synthetic":
        if src.num_classes < 2:
            errs.append("source.num_classes: must be >= 2")
        if src.dim < 1:
            errs.append("source.dim: must be >= 1")
        if not src.separation > 0:
            errs.append("source.separation: must be > 0")
        if src.std < 0:
            errs.append("source.std: must be >= 0")
        if src.train_per_class < 1 or src.test_per_class < 1:
            errs.append("source.train_per_class/test_per_class: must be >= 1")
    elif src.kind == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(src, key):
                errs.append(f"source.{key}: required for idx sources")
    else:
        errs.append(f"source.kind: must be 'synthetic' or 'idx', got {src.kind!r}")
    st = cfg.stream
    if st.mode not in STREAM_MODES:
        errs.append(f"stream.mode: must be one of {list(STREAM_MODES)}, got {st.mode!r}")
    if st.n_tasks < 1:
        errs.append("stream.n_tasks: must be >= 1")
    elif st.mode == "class_il" and src.kind == "synthetic" and src.num_classes % st.n_tasks:
        errs.append(f"stream.n_tasks: {src.num_classes} classes do not split into "
                    f"{st.n_tasks} equal tasks")
    if not 0.0 <= st.noise_rate <= 1.0:
        errs.append("stream.noise_rate: must lie in [0, 1]")
    if st.mode != "class_il":
        if st.c_max < 2 or (src.kind == "synthetic" and st.c_max > src.num_classes):
            errs.append("stream.c_max: must lie in [2, num_classes]")
        if st.samples_per_task < 2:
            errs.append("stream.samples_per_task: must be >= 2")
    errs.extend(f"hyper.{p}" for p in cfg.hyper.validate())
    if not all(isinstance(h, int) and not isinstance(h, bool) and h >= 1
               for h in cfg.network.hidden_dims):
        errs.append("network.hidden_dims: must be a list of positive integers")
    rp = cfg.logit_replay
    if rp.w_mse < 0 or rp.w_ce < 0:
        errs.append("logit_replay: w_mse and w_ce must be >= 0")
    if not cfg.seeds or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0
                                for s in cfg.seeds):
        errs.append("seeds: must be a non-empty list of nonnegative integers")
    elif len(set(cfg.seeds)) != len(cfg.seeds):
        errs.append("seeds: duplicates are not allowed")
    pr = cfg.probes
    for key in ("drift_every", "purity_every"):
        v = getattr(pr, key)
        if v is not None and v < 1:
            errs.append(f"probes.{key}: must be >= 1 or null")
    if cfg.workers < 1:
        errs.append("workers: must be >= 1")
    return errs


def load_config(path):
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: invalid JSON ({exc})"]) from None
    return parse_config(data)
