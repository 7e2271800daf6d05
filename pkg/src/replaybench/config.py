"""Run configuration, stream configuration and config fingerprints."""
from dataclasses import asdict, dataclass, field, fields
import hashlib
import json

from . import data
from .strategies import MODES, STRATEGIES

REPLAY_KINDS = ("experience", "generative", "none")
DATASETS = ("mnist", "synthetic")


@dataclass(frozen=True)
class StreamConfig:
    dataset: str = "mnist"
    scenario: str = "class_incremental"
    n_tasks: int = 5
    per_task_train_cap: int | None = 1000
    downscale: bool = False
    # synthetic only
    classes_per_task: int = 2
    dims: int = 20
    cluster_spread: float = 0.1
    domain_shift: float = 0.0
    per_task_n: int = 500
    test_n: int = 200
    data_seed: int = 0
    difficulty: tuple = ()

    def validate(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset == "mnist" and self.scenario != "class_incremental":
            raise ValueError("the MNIST stream is class-incremental only")
        if self.n_tasks < 1:
            raise ValueError("n_tasks must be positive")
        if self.difficulty and len(self.difficulty) != self.n_tasks:
            raise ValueError("difficulty needs one tag per task")

    def synth_spec(self):
        return data.SynthSpec(self.scenario, self.n_tasks, self.classes_per_task, self.dims,
                              self.cluster_spread, self.domain_shift, self.per_task_n, self.test_n)


def build_stream(cfg, data_root=None):
    cfg.validate()
    if cfg.dataset == "mnist":
        train, test = data.load_mnist(data_root, downscale=cfg.downscale)
        stream = data.make_class_incremental(train, test, cfg.n_tasks, cfg.per_task_train_cap,
                                             seed=cfg.data_seed, n_classes=10)
    else:
        stream = data.synth_stream(cfg.synth_spec(), cfg.data_seed)
    if cfg.difficulty:
        stream = data.with_difficulty(stream, list(cfg.difficulty))
    return stream


@dataclass(frozen=True)
class RunConfig:
    strategy: str | None = "random"
    mode: str = "simple"
    replay_kind: str = "experience"
    n_subsample: int = 50
    n_replay: int = 10
    epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.05
    dropout_rate: float = 0.0
    mc_passes: int = 10
    mc_dropout_rate: float = 0.5
    buffer_capacity: int | None = None
    hidden: tuple = (128, 64)
    kmeans_iters: int = 50
    vae_latent: int = 8
    vae_hidden: int = 128
    vae_learning_rate: float = 0.01
    vae_steps: int = 1
    seed: int = 0
    order: str | tuple = "identity"
    stream: StreamConfig = field(default_factory=StreamConfig)

    def validate(self):
        if self.replay_kind not in REPLAY_KINDS:
            raise ValueError(f"replay_kind must be one of {REPLAY_KINDS}, got {self.replay_kind!r}")
        if self.replay_kind == "experience" and self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; valid: {', '.join(STRATEGIES)}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("n_subsample", "epochs", "batch_size", "mc_passes", "kmeans_iters",
                     "vae_latent", "vae_hidden", "vae_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_replay < 0:
            raise ValueError("n_replay must be non-negative")
        if self.replay_kind == "experience" and self.n_replay > self.n_subsample:
            raise ValueError("n_replay cannot exceed n_subsample")
        if self.learning_rate <= 0 or self.vae_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.dropout_rate < 1 or not 0 <= self.mc_dropout_rate < 1:
            raise ValueError("dropout rates must be in [0, 1)")
        if self.buffer_capacity is not None and self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be positive")
        if len(self.hidden) < 1:
            raise ValueError("need at least one hidden layer")
        self.stream.validate()
        return self

    @property
    def label(self):
        """Strategy column for tables; only experience replay has a strategy."""
        return self.strategy if self.replay_kind == "experience" else "-"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        stream = dict(d.pop("stream", {}))
        stream["difficulty"] = tuple(stream.get("difficulty", ()))
        stream = StreamConfig(**stream)
        d["hidden"] = tuple(d.get("hidden", cls.hidden))
        if isinstance(d.get("order"), list):
            d["order"] = tuple(d["order"])
        return cls(stream=stream, **d)

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


RUN_FIELDS = tuple(f.name for f in fields(RunConfig) if f.name != "stream")
STREAM_FIELDS = tuple(f.name for f in fields(StreamConfig))
