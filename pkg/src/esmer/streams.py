"""Task streams: Gaussian and IDX sources, Class-IL / GCIL splits, label noise.

Samples are held column-wise in :class:`SampleSet` (ids, features, observed
labels, true labels, noise flags). Every generator here is a pure function of
its arguments and seed.
"""

import logging
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, RejectedInputError

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledSample:
    id: int
    features: np.ndarray
    label: int
    true_label: int
    is_noisy: bool


@dataclass
class SampleSet:
    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    true_labels: np.ndarray = None
    is_noisy: np.ndarray = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.true_labels is None:
            self.true_labels = self.labels.copy()
        if self.is_noisy is None:
            self.is_noisy = np.zeros(len(self.ids), dtype=bool)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.is_noisy = np.asarray(self.is_noisy, dtype=bool)

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return LabeledSample(int(self.ids[idx]), self.features[idx], int(self.labels[idx]),
                                 int(self.true_labels[idx]), bool(self.is_noisy[idx]))
        return SampleSet(self.ids[idx], self.features[idx], self.labels[idx],
                         self.true_labels[idx], self.is_noisy[idx])

    def with_classes(self, classes):
        return self[np.isin(self.true_labels, list(classes))]

    @classmethod
    def concat(cls, sets):
        sets = list(sets)
        return cls(np.concatenate([s.ids for s in sets]),
                   np.concatenate([s.features for s in sets]),
                   np.concatenate([s.labels for s in sets]),
                   np.concatenate([s.true_labels for s in sets]),
                   np.concatenate([s.is_noisy for s in sets]))


@dataclass
class SamplePool:
    train: SampleSet
    test: SampleSet
    num_classes: int

    @property
    def dim(self):
        return self.train.features.shape[1]


@dataclass(frozen=True)
class SyntheticSource:
    num_classes: int = 10
    dim: int = 32
    separation: float = 3.0
    std: float = 1.0
    train_per_class: int = 500
    test_per_class: int = 200

    def __post_init__(self):
        if not self.separation > 0:
            raise RejectedInputError("separation must be > 0")
        if self.std < 0:
            raise RejectedInputError("std must be >= 0")


@dataclass(frozen=True)
class IdxSource:
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str


@dataclass(frozen=True)
class TaskSpec:
    task_index: int
    class_set: tuple
    sample_count_per_class: dict = field(default_factory=dict)

    @property
    def size(self):
        return sum(self.sample_count_per_class.values())


@dataclass
class Task:
    spec: TaskSpec
    train: SampleSet
    test: SampleSet

    @property
    def classes(self):
        return self.spec.class_set


@dataclass
class TaskStream:
    tasks: list
    num_classes_total: int
    seed: int
    mode: str = "class_il"

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def class_map(self):
        return [t.classes for t in self.tasks]

    def full_test(self):
        return SampleSet.concat(t.test for t in self.tasks)


def derive_seed(*parts):
    """Stable 63-bit seed from integer parts (order matters)."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


# -- sources -----------------------------------------------------------------

def make_gaussian_source(spec, seed):
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((spec.num_classes, spec.dim))
    means *= spec.separation / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(per_class):
        labels = np.repeat(np.arange(spec.num_classes), per_class)
        noise = rng.standard_normal((len(labels), spec.dim))
        return means[labels] + spec.std * noise, labels

    xtr, ytr = draw(spec.train_per_class)
    xte, yte = draw(spec.test_per_class)
    ntr = len(ytr)
    return SamplePool(SampleSet(np.arange(ntr), xtr, ytr),
                      SampleSet(np.arange(ntr, ntr + len(yte)), xte, yte),
                      spec.num_classes)


def _read_idx(path, magic, kind):
    with open(path, "rb") as f:
        data = f.read()
    header = 16 if magic == IDX_IMAGES_MAGIC else 8
    if len(data) < header:
        raise FormatError(f"{path}: truncated {kind} header ({len(data)} bytes)")
    found = struct.unpack(">I", data[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: bad {kind} magic 0x{found:08x}, expected 0x{magic:08x}")
    if magic == IDX_IMAGES_MAGIC:
        count, rows, cols = struct.unpack(">III", data[4:16])
        shape = (count, rows * cols)
    else:
        (count,) = struct.unpack(">I", data[4:8])
        shape = (count,)
    expected = header + math.prod(shape)
    if len(data) != expected:
        raise FormatError(f"{path}: {kind} body has {len(data) - header} bytes, "
                          f"header declares {expected - header}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(shape)


def load_idx(spec):
    """Parse big-endian IDX image/label pairs into a pool with features in [0, 1]."""
    parts = []
    for img_path, lab_path in ((spec.train_images, spec.train_labels),
                               (spec.test_images, spec.test_labels)):
        images = _read_idx(img_path, IDX_IMAGES_MAGIC, "images")
        labels = _read_idx(lab_path, IDX_LABELS_MAGIC, "labels")
        if len(images) != len(labels):
            raise FormatError(f"{img_path}: {len(images)} images but {lab_path} has "
                              f"{len(labels)} labels")
        parts.append((images.astype(np.float64) / 255.0, labels.astype(np.int64)))
    (xtr, ytr), (xte, yte) = parts
    ntr = len(ytr)
    num_classes = int(max(ytr.max(initial=0), yte.max(initial=0))) + 1
    return SamplePool(SampleSet(np.arange(ntr), xtr, ytr),
                      SampleSet(np.arange(ntr, ntr + len(yte)), xte, yte),
                      max(num_classes, 2))


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images ``(n, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def build_pool(source, seed):
    if isinstance(source, IdxSource):
        return load_idx(source)
    return make_gaussian_source(source, seed)


# -- streams -----------------------------------------------------------------

def make_class_il_stream(pool, n_tasks, seed):
    c = pool.num_classes
    if n_tasks < 1 or c % n_tasks:
        raise RejectedInputError(f"{c} classes cannot be split into {n_tasks} equal tasks")
    k = c // n_tasks
    tasks = []
    for t in range(n_tasks):
        classes = tuple(range(t * k, (t + 1) * k))
        train = pool.train.with_classes(classes)
        order = np.random.default_rng(derive_seed(seed, t)).permutation(len(train))
        train = train[order]
        counts = {cl: int(np.sum(train.labels == cl)) for cl in classes}
        tasks.append(Task(TaskSpec(t, classes, counts), train, pool.test.with_classes(classes)))
    return TaskStream(tasks, c, seed, "class_il")


def allocate(total, weights):
    """Split ``total`` proportionally to ``weights`` with largest-remainder rounding."""
    w = np.asarray(weights, dtype=np.float64)
    exact = total * w / w.sum()
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    # stable sort keeps ties in class order
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def zipf_profile(n, exponent=1.0):
    return 1.0 / np.arange(1, n + 1) ** exponent


def make_gcil_stream(pool, n_tasks, c_max, samples_per_task, weighting="uniform",
                     dataset_seed=0, zipf_exponent=1.0):
    c = pool.num_classes
    if not 2 <= c_max <= c:
        raise RejectedInputError(f"c_max must lie in [2, {c}], got {c_max}")
    if samples_per_task < 2:
        raise RejectedInputError("samples_per_task must be >= 2")
    if weighting not in ("uniform", "longtail"):
        raise RejectedInputError(f"unknown weighting {weighting!r}")
    remaining = {cl: np.flatnonzero(pool.train.labels == cl) for cl in range(c)}
    tasks = []
    for t in range(n_tasks):
        rng = np.random.default_rng(derive_seed(dataset_seed, t))
        n_cls = int(rng.integers(2, c_max + 1))
        classes = tuple(int(v) for v in rng.choice(c, n_cls, replace=False))
        profile = np.ones(n_cls) if weighting == "uniform" else zipf_profile(n_cls, zipf_exponent)
        want = allocate(samples_per_task, profile)
        picked, counts = [], {}
        for cl, n in zip(classes, want):
            avail = remaining[cl]
            take = min(int(n), len(avail))
            if take < n:
                log.warning("task %d: class %d has %d samples left, wanted %d",
                            t, cl, len(avail), n)
            sel = rng.choice(len(avail), take, replace=False)
            picked.append(avail[sel])
            remaining[cl] = np.delete(avail, sel)
            counts[cl] = take
        idx = np.concatenate(picked)
        train = pool.train[idx[rng.permutation(len(idx))]]
        tasks.append(Task(TaskSpec(t, classes, counts), train, pool.test.with_classes(classes)))
    return TaskStream(tasks, c, dataset_seed, f"gcil_{weighting}")


def inject_symmetric_noise(samples, class_set, rate, seed):
    """Relabel ``round_half_up(rate * n)`` samples uniformly within ``class_set``.

    The new label may coincide with the old one; the sample is flagged
    noisy either way.
    """
    if not 0.0 <= rate <= 1.0:
        raise RejectedInputError("noise rate must lie in [0, 1]")
    n = len(samples)
    k = int(math.floor(rate * n + 0.5))
    out = replace(samples, labels=samples.labels.copy(), is_noisy=samples.is_noisy.copy(),
                  true_labels=samples.true_labels.copy())
    if k == 0:
        return out
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, k, replace=False)
    out.labels[chosen] = np.asarray(class_set, dtype=np.int64)[rng.integers(0, len(class_set), k)]
    out.is_noisy[chosen] = True
    return out


def add_label_noise(stream, rate, seed):
    """Noisy copy of a stream; test sets are left clean."""
    if rate == 0:
        return stream
    tasks = [Task(t.spec, inject_symmetric_noise(t.train, t.classes, rate,
                                                 derive_seed(seed, t.spec.task_index, 7)), t.test)
             for t in stream.tasks]
    return replace(stream, tasks=tasks)


def epoch_batches(samples, batch_size, epoch_seed):
    if batch_size < 1:
        raise RejectedInputError("batch_size must be >= 1")
    order = np.random.default_rng(epoch_seed).permutation(len(samples))
    return [samples[order[i:i + batch_size]] for i in range(0, len(order), batch_size)]
