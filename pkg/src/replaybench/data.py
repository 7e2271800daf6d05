"""Dataset ingestion and task-stream construction."""
from dataclasses import dataclass, field, replace
import gzip
import os
from pathlib import Path
import struct

import numpy as np

from .errors import FormatError
from .nn import Batch
from .seeding import make_rng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SCENARIOS = ("class_incremental", "domain_incremental", "instance_incremental")

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Task:
    task_id: int
    train: Batch
    test: Batch
    class_set: tuple
    difficulty: str | None = None

    def __post_init__(self):
        classes = tuple(sorted(int(c) for c in self.class_set))
        object.__setattr__(self, "class_set", classes)
        allowed = set(classes)
        for split in (self.train, self.test):
            bad = set(np.unique(split.labels).tolist()) - allowed
            if bad:
                raise ValueError(f"task {self.task_id}: labels {sorted(bad)} not in class set {classes}")
        if self.difficulty not in (None, "easy", "hard"):
            raise ValueError(f"difficulty must be 'easy', 'hard' or None, got {self.difficulty!r}")


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple
    scenario: str
    n_classes: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError("task ids must be unique")
        sets = [set(t.class_set) for t in self.tasks]
        if self.scenario == "class_incremental":
            seen = set()
            for s in sets:
                if seen & s:
                    raise ValueError("class-incremental tasks must have disjoint class sets")
                seen |= s
        elif any(s != sets[0] for s in sets):
            raise ValueError(f"{self.scenario} tasks must share one class set")

    def __len__(self):
        return len(self.tasks)

    @property
    def task_ids(self):
        return [t.task_id for t in self.tasks]

    @property
    def dim(self):
        return self.tasks[0].train.dim


# --- IDX ---------------------------------------------------------------------

def _read_bytes(path):
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def parse_idx(raw, expected_magic=None):
    """Decode an IDX byte string into a uint8 array."""
    if len(raw) < 4:
        raise FormatError("file too short for the magic number", offset=len(raw))
    magic = struct.unpack_from(">I", raw, 0)[0]
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    if magic >> 8 != 0x08:
        raise FormatError(f"unsupported IDX type in magic 0x{magic:08x}", offset=0)
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError("truncated dimension header", offset=len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims)) if dims else 0
    if len(raw) - header_end < size:
        raise FormatError(f"truncated payload: need {size} bytes, found {len(raw) - header_end}",
                          offset=len(raw))
    if len(raw) - header_end > size:
        raise FormatError("trailing bytes after payload", offset=header_end + size)
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header_end).reshape(dims)


def load_idx(images_path, labels_path):
    """Read an IDX image/label file pair; pixels are scaled to [0, 1]."""
    images = parse_idx(_read_bytes(images_path), IMAGE_MAGIC)
    labels = parse_idx(_read_bytes(labels_path), LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4)
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Batch(x, labels.astype(np.int64))


def _find(root, stem):
    for name in (stem, stem + ".gz"):
        p = Path(root) / name
        if p.exists():
            return p
    raise FileNotFoundError(f"{stem}[.gz] not found under {root}")


_REPO_DATA = Path(__file__).resolve().parents[2] / "data" / "mnist-5k"


def default_data_root():
    """``$REPLAYBENCH_DATA`` if set, else ``./data/mnist-5k``, else the copy next to the sources."""
    env = os.environ.get("REPLAYBENCH_DATA")
    if env:
        return Path(env)
    local = Path("data/mnist-5k")
    return local if local.exists() else _REPO_DATA


def load_mnist(root=None, downscale=False):
    """Return ``(train, test)`` batches from the standard four MNIST files."""
    root = Path(root) if root is not None else default_data_root()
    out = []
    for split in ("train", "test"):
        img, lab = MNIST_FILES[split]
        b = load_idx(_find(root, img), _find(root, lab))
        out.append(downscale_batch(b, 28, 2) if downscale else b)
    return tuple(out)


def downscale_batch(batch, side, factor):
    """Mean-pool square images by ``factor`` (28x28 -> 14x14 with factor 2)."""
    n = len(batch)
    s = side // factor
    x = batch.features.reshape(n, s, factor, s, factor).mean(axis=(2, 4))
    return Batch(x.reshape(n, s * s), batch.labels)


# --- stream constructors -------------------------------------------------------

def _restrict(batch, classes):
    return batch.take(np.flatnonzero(np.isin(batch.labels, classes)))


def make_class_incremental(train, test, n_tasks, per_task_train_cap=None, seed=0, n_classes=None):
    """Split classes into ``n_tasks`` contiguous groups ({0,1}, {2,3}, ...)."""
    n_classes = int(n_classes or train.labels.max() + 1)
    if n_tasks < 1 or n_classes % n_tasks:
        raise ValueError(f"{n_classes} classes cannot be split evenly into {n_tasks} tasks")
    per = n_classes // n_tasks
    rng = make_rng(seed)
    tasks = []
    for t in range(n_tasks):
        classes = list(range(t * per, (t + 1) * per))
        tr = _restrict(train, classes)
        if per_task_train_cap is not None and len(tr) > per_task_train_cap:
            keep = np.sort(rng.choice(len(tr), per_task_train_cap, replace=False))
            tr = tr.take(keep)
        tasks.append(Task(t, tr, _restrict(test, classes), tuple(classes)))
    return TaskStream(tasks, "class_incremental", n_classes)


def make_domain_incremental(domains, difficulties=None):
    """One task per ``(train, test)`` pair; every domain must cover the same labels."""
    domains = list(domains)
    if not domains:
        raise ValueError("need at least one domain")
    universes = [set(np.unique(np.concatenate([tr.labels, te.labels])).tolist()) for tr, te in domains]
    if any(u != universes[0] for u in universes):
        raise ValueError("domains do not share the same label universe")
    classes = tuple(sorted(universes[0]))
    difficulties = difficulties or [None] * len(domains)
    tasks = [Task(i, tr, te, classes, d) for i, ((tr, te), d) in enumerate(zip(domains, difficulties))]
    return TaskStream(tasks, "domain_incremental", max(classes) + 1)


def make_instance_incremental(train, test, n_tasks, seed=0):
    """Disjoint random pools of the same classes; every task tests on the full test split."""
    rng = make_rng(seed)
    order = rng.permutation(len(train))
    classes = tuple(np.unique(train.labels).tolist())
    tasks = [Task(i, train.take(np.sort(chunk)), test, classes)
             for i, chunk in enumerate(np.array_split(order, n_tasks))]
    return TaskStream(tasks, "instance_incremental", max(classes) + 1)


@dataclass(frozen=True)
class SynthSpec:
    scenario: str = "class_incremental"
    n_tasks: int = 2
    classes_per_task: int = 2
    dims: int = 8
    cluster_spread: float = 0.1
    domain_shift: float = 0.0
    per_task_n: int = 200
    test_n: int = 100
    mean_range: tuple = (0.2, 0.8)

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        for name in ("n_tasks", "classes_per_task", "dims", "per_task_n", "test_n"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.cluster_spread < 0 or self.domain_shift < 0:
            raise ValueError("cluster_spread and domain_shift must be non-negative")


def _draw(rng, means, labels, spread, shift=0.0):
    x = means[labels] + shift + rng.normal(0.0, 1.0, (len(labels), means.shape[1])) * spread
    return Batch(np.clip(x, 0.0, 1.0), labels)


def _balanced_labels(rng, classes, n):
    labels = np.resize(np.asarray(classes), n)
    return rng.permutation(labels)


def synth_stream(spec, seed):
    """Gaussian class clusters in the unit cube, arranged as a task stream.

    Domain streams keep the class means fixed and, for task ``t``, add a
    random offset of norm ``t * domain_shift`` and scale the noise by
    ``1 + t * domain_shift``.
    """
    spec.validate()
    rng = make_rng(seed)
    lo, hi = spec.mean_range
    c = spec.classes_per_task
    if spec.scenario == "class_incremental":
        n_classes = c * spec.n_tasks
    else:
        n_classes = c
    means = rng.uniform(lo, hi, (n_classes, spec.dims))

    tasks = []
    for t in range(spec.n_tasks):
        if spec.scenario == "class_incremental":
            classes = list(range(t * c, (t + 1) * c))
            spread, shift = spec.cluster_spread, 0.0
        else:
            classes = list(range(c))
            if spec.scenario == "domain_incremental":
                direction = rng.normal(size=spec.dims)
                direction /= np.linalg.norm(direction)
                shift = direction * t * spec.domain_shift
                spread = spec.cluster_spread * (1.0 + t * spec.domain_shift)
            else:
                spread, shift = spec.cluster_spread, 0.0
        tr = _draw(rng, means, _balanced_labels(rng, classes, spec.per_task_n), spread, shift)
        te = _draw(rng, means, _balanced_labels(rng, classes, spec.test_n), spread, shift)
        tasks.append(Task(t, tr, te, tuple(classes)))
    return TaskStream(tasks, spec.scenario, n_classes, meta={"class_means": means})


def reorder(stream, order):
    """Permute tasks; ``order`` is a permutation or ``"easy_first"``/``"hard_first"``.

    Task ids are kept so results can still be traced to the original tasks.
    """
    n = len(stream)
    if isinstance(order, str):
        if order == "identity":
            perm = list(range(n))
        elif order in ("easy_first", "hard_first"):
            tags = [t.difficulty for t in stream.tasks]
            if any(tag is None for tag in tags):
                raise ValueError(f"{order} needs a difficulty tag on every task")
            first = "easy" if order == "easy_first" else "hard"
            perm = sorted(range(n), key=lambda i: (tags[i] != first, i))
        else:
            raise ValueError(f"unknown order {order!r}")
    else:
        perm = [int(i) for i in order]
        if sorted(perm) != list(range(n)):
            raise ValueError(f"{order!r} is not a permutation of {n} task indices")
    return replace(stream, tasks=tuple(stream.tasks[i] for i in perm))


def with_difficulty(stream, tags):
    if len(tags) != len(stream):
        raise ValueError("need one difficulty tag per task")
    return replace(stream, tasks=tuple(replace(t, difficulty=g) for t, g in zip(stream.tasks, tags)))
