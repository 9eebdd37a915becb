"""File formats, dataset containers and the planted-prototype generator.

VSEF tensor layout (all little-endian)::

    b"VSEF" | u8 version (=1) | u32 rank | rank x u32 dims | f32 values, row-major

A dataset directory holds::

    features/<instance_id>.vsef   W x H x C feature map per instance
    parts/<instance_id>.vsef      optional M x C part features (synthetic data)
    labels.csv                    instance_id,class_id
    split.json                    {"seen": [...], "unseen": [...], "train": [...], "test": [...]}
    codebook_semantic.csv         class_id,a1..a_ds      (and/or)
    codebook_visual.vsef          n_classes x M x K (structured) or n_classes x M*K (flat),
                                  rows in sorted class_id order
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CoverageError, DatasetError, FormatError, TruncatedFileError
from .numerics import rng_for

MAGIC = b"VSEF"
VERSION = 1
_HEADER = struct.Struct("<4sBI")

SEMANTIC = "semantic"
VISUAL = "visual-structured"
VISUAL_FLAT = "visual-flat"
CODEBOOK_KINDS = (SEMANTIC, VISUAL, VISUAL_FLAT)


# --------------------------------------------------------------------------
# VSEF tensors


def encode_tensor(array) -> bytes:
    a = np.asarray(array)
    if a.ndim == 0:
        raise ValueError("VSEF tensors need rank >= 1")
    if not np.all(np.isfinite(a)):
        raise ValueError("VSEF tensors must be finite")
    head = _HEADER.pack(MAGIC, VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise TruncatedFileError(f"header needs {_HEADER.size} bytes, got {len(buf)}")
    magic, version, rank = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported VSEF version {version}")
    off = _HEADER.size
    if len(buf) < off + 4 * rank:
        raise TruncatedFileError("truncated dimension list")
    dims = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    expected = off + 4 * int(np.prod(dims, dtype=np.int64))
    if len(buf) < expected:
        raise TruncatedFileError(f"payload needs {expected} bytes, file has {len(buf)}")
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", offset=off).reshape(dims)
    if not np.all(np.isfinite(data)):
        raise FormatError("non-finite values in tensor")
    return data.astype(np.float32)


def tensor_file_size(dims) -> int:
    return _HEADER.size + 4 * len(dims) + 4 * int(np.prod(dims, dtype=np.int64))


def write_tensor_file(array, path):
    Path(path).write_bytes(encode_tensor(array))


def read_tensor_file(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# --------------------------------------------------------------------------
# Codebooks and splits


@dataclass
class Codebook:
    """Per-class target vectors: semantic attributes or visual signatures."""

    kind: str
    entries: dict

    def __post_init__(self):
        if self.kind not in CODEBOOK_KINDS:
            raise ValueError(f"unknown codebook kind {self.kind!r}")
        self.entries = {int(k): np.asarray(v, dtype=np.float64) for k, v in self.entries.items()}
        self.validate()

    def validate(self):
        shapes = {v.shape for v in self.entries.values()}
        if len(shapes) > 1:
            raise DatasetError(f"codebook entries differ in shape: {sorted(shapes)}")
        for cid, v in self.entries.items():
            if not np.all(np.isfinite(v)):
                raise DatasetError(f"codebook entry for class {cid} is not finite")
            if self.kind == VISUAL:
                if v.ndim != 2 or np.any(v < 0) or np.any(np.abs(v.sum(axis=1) - 1) > 1e-6):
                    raise DatasetError(f"visual entry for class {cid} is not row-stochastic")
            elif self.kind == VISUAL_FLAT:
                if v.ndim != 1 or np.any(v < 0) or abs(v.sum() - 1) > 1e-6:
                    raise DatasetError(f"flat visual entry for class {cid} does not sum to 1")

    @property
    def classes(self):
        return sorted(self.entries)

    @property
    def is_visual(self):
        return self.kind != SEMANTIC

    def matrix(self, classes=None):
        classes = self.classes if classes is None else list(classes)
        missing = [c for c in classes if c not in self.entries]
        if missing:
            raise CoverageError(missing)
        return np.stack([self.entries[c] for c in classes])

    def subset(self, classes):
        return Codebook(self.kind, {c: self.entries[c] for c in classes})


@dataclass
class SplitSpec:
    seen: list
    unseen: list
    train: list
    test: list
    name: str = "split"

    def __post_init__(self):
        self.seen = sorted(int(c) for c in self.seen)
        self.unseen = sorted(int(c) for c in self.unseen)
        self.train = sorted(str(i) for i in self.train)
        self.test = sorted(str(i) for i in self.test)
        overlap = set(self.seen) & set(self.unseen)
        if overlap:
            raise DatasetError(f"classes both seen and unseen: {sorted(overlap)}")

    def to_json(self):
        return {"name": self.name, "seen": self.seen, "unseen": self.unseen,
                "train": self.train, "test": self.test}


def read_split(path) -> SplitSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read split file {path}: {exc}") from exc
    missing = {"seen", "unseen", "train", "test"} - set(doc)
    if missing:
        raise DatasetError(f"split file {path} lacks keys {sorted(missing)}")
    return SplitSpec(doc["seen"], doc["unseen"], doc["train"], doc["test"],
                     name=doc.get("name", path.stem))


def write_split(split: SplitSpec, path):
    Path(path).write_text(json.dumps(split.to_json(), indent=1, sort_keys=True) + "\n")


def read_semantic_codebook(path) -> Codebook:
    entries = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "class_id":
            raise DatasetError(f"{path}: header must start with class_id")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}: row for class {row[0]} has {len(row)} fields")
            entries[int(row[0])] = np.array([float(x) for x in row[1:]])
    return Codebook(SEMANTIC, entries)


def write_semantic_codebook(codebook: Codebook, path):
    d = len(next(iter(codebook.entries.values())))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id"] + [f"a{i + 1}" for i in range(d)])
        for c in codebook.classes:
            w.writerow([c] + [repr(float(x)) for x in codebook.entries[c]])


def read_visual_codebook(path, classes) -> Codebook:
    t = read_tensor_file(path).astype(np.float64)
    classes = sorted(classes)
    if t.shape[0] != len(classes):
        raise DatasetError(f"{path}: {t.shape[0]} rows for {len(classes)} classes")
    kind = VISUAL if t.ndim == 3 else VISUAL_FLAT
    if t.ndim not in (2, 3):
        raise DatasetError(f"{path}: visual codebook must have rank 2 or 3")
    # stored as f32, so renormalise to restore exact stochasticity
    t = t / t.sum(axis=-1, keepdims=True)
    return Codebook(kind, dict(zip(classes, t)))


def write_visual_codebook(codebook: Codebook, path):
    write_tensor_file(codebook.matrix(), path)


def read_codebook(path, classes=None) -> Codebook:
    """Read a semantic CSV or a visual VSEF codebook by extension."""
    path = Path(path)
    if path.suffix == ".csv":
        return read_semantic_codebook(path)
    if classes is None:
        raise DatasetError("visual codebooks need the dataset's class list")
    return read_visual_codebook(path, classes)


# --------------------------------------------------------------------------
# Dataset


@dataclass
class Dataset:
    """Instances sorted by id, with labels, inputs, codebook and split.

    ``features`` is an ``(n, W, H, C)`` array (None for metadata-only
    datasets) and ``parts`` an optional ``(n, M, C)`` array of part features.
    """

    instance_ids: list
    labels: np.ndarray
    classes: list
    split: SplitSpec
    codebook: Codebook | None = None
    features: np.ndarray | None = None
    parts: np.ndarray | None = None
    visual_codebook: Codebook | None = None
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        order = np.argsort(np.asarray(self.instance_ids, dtype=object).astype(str), kind="stable")
        self.instance_ids = [str(self.instance_ids[i]) for i in order]
        self.labels = np.asarray(self.labels, dtype=np.int64)[order]
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)[order]
        if self.parts is not None:
            self.parts = np.asarray(self.parts, dtype=np.float64)[order]
        self.classes = sorted(int(c) for c in self.classes)
        self._index = {iid: i for i, iid in enumerate(self.instance_ids)}
        validate_dataset(self)

    def __len__(self):
        return len(self.instance_ids)

    def indices(self, ids):
        return np.array([self._index[i] for i in ids], dtype=np.int64)

    @property
    def train_idx(self):
        return self.indices(self.split.train)

    @property
    def test_idx(self):
        return self.indices(self.split.test)

    def class_indices(self, cls, subset=None):
        idx = np.arange(len(self)) if subset is None else np.asarray(subset)
        return idx[self.labels[idx] == cls]

    @property
    def map_shape(self):
        return None if self.features is None else self.features.shape[1:]


def validate_dataset(ds: Dataset):
    errors = []
    if len(set(ds.instance_ids)) != len(ds.instance_ids):
        errors.append("duplicate instance ids")
    if len(ds.labels) != len(ds.instance_ids):
        errors.append("label count differs from instance count")
    known = set(ds.classes)
    stray = set(ds.labels.tolist()) - known
    if stray:
        errors.append(f"labels outside class list: {sorted(stray)}")
    split = ds.split
    if set(split.seen) | set(split.unseen) != known:
        errors.append("seen and unseen classes do not partition the class list")
    ids = set(ds.instance_ids)
    for part in ("train", "test"):
        unknown = set(getattr(split, part)) - ids
        if unknown:
            errors.append(f"{part} split names unknown instances, e.g. {sorted(unknown)[:3]}")
    if not errors:
        seen = set(split.seen)
        bad = [i for i in split.train if int(ds.labels[ds._index[i]]) not in seen]
        if bad:
            errors.append(f"train instances in unseen classes: {bad[:5]}")
    if ds.features is not None:
        if ds.features.ndim != 4 or len(ds.features) != len(ds.instance_ids):
            errors.append("features must be an (n, W, H, C) array")
        elif not np.all(np.isfinite(ds.features)):
            errors.append("non-finite feature values")
    if ds.parts is not None and (ds.parts.ndim != 3 or len(ds.parts) != len(ds.instance_ids)):
        errors.append("parts must be an (n, M, C) array")
    for cb in (ds.codebook, ds.visual_codebook):
        if cb is not None:
            missing = known - set(cb.entries)
            if missing:
                errors.append(f"codebook lacks classes {sorted(missing)[:5]}")
    if errors:
        raise DatasetError("; ".join(errors))


def read_labels(path):
    ids, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["instance_id", "class_id"]:
            raise DatasetError(f"{path}: header must be instance_id,class_id")
        for row in reader:
            if row:
                ids.append(row[0])
                labels.append(int(row[1]))
    return ids, labels


def write_labels(ids, labels, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "class_id"])
        for i, y in zip(ids, labels):
            w.writerow([i, int(y)])


def load_dataset(directory, split_path=None) -> Dataset:
    d = Path(directory)
    for name in ("labels.csv", "split.json"):
        if not (d / name).exists():
            raise DatasetError(f"{d}: missing {name}")
    ids, labels = read_labels(d / "labels.csv")
    split = read_split(split_path or d / "split.json")
    classes = sorted(set(split.seen) | set(split.unseen))

    feat_dir = d / "features"
    if not feat_dir.is_dir():
        raise DatasetError(f"{d}: missing features/ directory")
    maps = []
    for iid in ids:
        p = feat_dir / f"{iid}.vsef"
        if not p.exists():
            raise DatasetError(f"missing feature file {p}")
        t = read_tensor_file(p)
        if t.ndim != 3:
            raise DatasetError(f"{p}: feature map must be W x H x C, got {t.shape}")
        if maps and t.shape != maps[0].shape:
            raise DatasetError(f"{p}: shape {t.shape} differs from {maps[0].shape}")
        maps.append(t)
    features = np.stack(maps).astype(np.float64) if maps else None

    parts = None
    if (d / "parts").is_dir():
        parts = np.stack([read_tensor_file(d / "parts" / f"{i}.vsef") for i in ids]).astype(np.float64)

    semantic = visual = None
    if (d / "codebook_semantic.csv").exists():
        semantic = read_semantic_codebook(d / "codebook_semantic.csv")
    if (d / "codebook_visual.vsef").exists():
        visual = read_visual_codebook(d / "codebook_visual.vsef", classes)
    if semantic is None and visual is None:
        raise DatasetError(f"{d}: no codebook_semantic.csv or codebook_visual.vsef")
    return Dataset(ids, labels, classes, split, codebook=semantic or visual,
                   features=features, parts=parts,
                   visual_codebook=visual if semantic is not None else None)


def write_dataset(ds: Dataset, directory):
    d = Path(directory)
    (d / "features").mkdir(parents=True, exist_ok=True)
    for i, iid in enumerate(ds.instance_ids):
        write_tensor_file(ds.features[i], d / "features" / f"{iid}.vsef")
    if ds.parts is not None:
        (d / "parts").mkdir(exist_ok=True)
        for i, iid in enumerate(ds.instance_ids):
            write_tensor_file(ds.parts[i], d / "parts" / f"{iid}.vsef")
    write_labels(ds.instance_ids, ds.labels, d / "labels.csv")
    write_split(ds.split, d / "split.json")
    for cb in (ds.codebook, ds.visual_codebook):
        if cb is None:
            continue
        if cb.kind == SEMANTIC:
            write_semantic_codebook(cb, d / "codebook_semantic.csv")
        else:
            write_visual_codebook(cb, d / "codebook_visual.vsef")


def class_partition_counts(ds: Dataset):
    """(|Y|, |O|, |U|, number of instances)."""
    return len(ds.classes), len(ds.split.seen), len(ds.split.unseen), len(ds)


# --------------------------------------------------------------------------
# Planted synthetic data


@dataclass
class SynthConfig:
    C: int = 32
    W: int = 7
    H: int = 7
    M: int = 4
    K: int = 8
    n_classes: int = 14
    n_seen: int = 10
    per_class: int = 30
    separation: float = 10.0  # minimum distance between prototypes of one part
    noise: float = 1.0  # gamma*, std of the isotropic part-feature noise
    seed: int = 0
    type_purity: float = 1.0  # mass of each class's dominant type per part
    train_frac: float = 0.8
    part_offset: float = 20.0  # constant added on each part's own channel block
    min_hamming: int = 2  # minimum number of parts in which two classes differ
    semantic_noise: float = 0.0  # half-width of uniform noise on visual attributes
    semantic_padding: float = 0.0  # fraction of attribute dims that are non-visual
    max_tries: int = 200

    def validate(self):
        if not 1 <= self.M <= 4:
            raise ConfigError("synthetic generator places parts in quadrants, so 1 <= M <= 4")
        if self.C < self.M:
            raise ConfigError("need at least one channel per part")
        if min(self.W, self.H) < 3:
            raise ConfigError("feature map must be at least 3 x 3")
        if not 0 < self.n_seen < self.n_classes:
            raise ConfigError("need 0 < n_seen < n_classes")
        if self.separation <= 0 or self.noise < 0:
            raise ConfigError("separation must be positive and noise non-negative")
        if not 0 < self.type_purity <= 1:
            raise ConfigError("type_purity must be in (0, 1]")
        if not 0 <= self.semantic_padding < 1:
            raise ConfigError("semantic_padding must be in [0, 1)")
        if not 0 < self.train_frac < 1:
            raise ConfigError("train_frac must be in (0, 1)")


@dataclass
class PlantedModel:
    """Ground truth behind a synthetic dataset."""

    prototypes: np.ndarray  # (M, K, C)
    variance: float
    type_dist: np.ndarray  # (n_classes, M, K), q_y(k|m)
    assignments: np.ndarray  # (n, M) generating type per instance and part
    regions: list  # per part: (row slice, col slice) of its quadrant
    min_separation: np.ndarray  # (M,) smallest pairwise prototype distance

    def priors(self, labels):
        """Expected type frequencies per part for instances with ``labels``."""
        return self.type_dist[np.asarray(labels)].mean(axis=0)


def part_regions(W, H, M):
    hw, hh = W // 2, H // 2
    rows = [slice(0, hw), slice(W - hw, W)]
    cols = [slice(0, hh), slice(H - hh, H)]
    return [(rows[m // 2], cols[m % 2]) for m in range(M)]


def _profile(n):
    return np.array([1.0 + min(i, n - 1 - i) for i in range(n)])


def region_profile(region):
    r, c = region
    p = np.outer(_profile(r.stop - r.start), _profile(c.stop - c.start))
    return p / p.sum()


def _draw_prototypes(cfg: SynthConfig, rng):
    blocks = np.array_split(np.arange(cfg.C), cfg.M)
    scale = 1.5 * cfg.separation / np.sqrt(2.0 * cfg.C)
    protos = np.zeros((cfg.M, cfg.K, cfg.C))
    seps = np.full(cfg.M, np.inf)
    for m in range(cfg.M):
        for _ in range(cfg.max_tries):
            delta = rng.normal(0.0, scale, size=(cfg.K, cfg.C))
            if cfg.K == 1:
                break
            d = np.sqrt(((delta[:, None] - delta[None]) ** 2).sum(-1))
            dmin = d[np.triu_indices(cfg.K, 1)].min()
            if dmin >= cfg.separation:
                seps[m] = dmin
                break
        else:
            raise ConfigError(
                f"cannot place {cfg.K} prototypes {cfg.separation} apart in {cfg.C} dims")
        offset = np.zeros(cfg.C)
        offset[blocks[m]] = cfg.part_offset
        protos[m] = offset + delta
    return protos, seps


def _draw_type_table(cfg: SynthConfig, rng):
    n_unseen = cfg.n_classes - cfg.n_seen
    reps = -(-cfg.n_seen // cfg.K)
    for _ in range(cfg.max_tries):
        table = np.empty((cfg.n_classes, cfg.M), dtype=np.int64)
        for m in range(cfg.M):
            # every type shows up among the seen classes when n_seen >= K
            col = np.concatenate([rng.permutation(cfg.K) for _ in range(reps)])[: cfg.n_seen]
            table[: cfg.n_seen, m] = rng.permutation(col)
            table[cfg.n_seen:, m] = rng.integers(0, cfg.K, size=n_unseen)
        ham = (table[:, None, :] != table[None, :, :]).sum(-1)
        np.fill_diagonal(ham, cfg.M)
        if ham.min() >= min(cfg.min_hamming, cfg.M):
            return table
    raise ConfigError("cannot draw class type combinations with the requested Hamming distance")


def _draw_parts(protos, q, noise, labels, rng):
    n = len(labels)
    M, K, C = protos.shape
    u = rng.random((n, M))
    cdf = np.cumsum(q[labels], axis=-1)
    assign = np.minimum((cdf < u[..., None]).sum(-1), K - 1)
    parts = protos[np.arange(M)[None, :], assign] + noise * rng.normal(size=(n, M, C))
    return assign, parts


def sample_part_features(planted: PlantedModel, labels, seed=0):
    """Fresh part features for ``labels`` from a planted model (no feature maps).

    Returns ``(assignments (n, M), parts (n, M, C))``.
    """
    rng = rng_for(seed, "planted-sample")
    return _draw_parts(planted.prototypes, planted.type_dist, np.sqrt(planted.variance),
                       np.asarray(labels), rng)


def generate_synthetic(cfg: SynthConfig | None = None, **overrides):
    """Draw a planted dataset. Returns ``(Dataset, PlantedModel)``.

    Each part has K prototypes. A class fixes a distribution over types per
    part; an instance draws one type per part, emits ``theta + N(0, noise^2)``
    as its part feature and paints it into that part's quadrant of the
    feature map with a peaked spatial profile that sums to one.
    """
    cfg = cfg or SynthConfig()
    if overrides:
        cfg = SynthConfig(**{**asdict(cfg), **overrides})
    cfg.validate()
    rng = rng_for(cfg.seed, "synthetic")

    protos, seps = _draw_prototypes(cfg, rng)
    table = _draw_type_table(cfg, rng)
    q = np.full((cfg.n_classes, cfg.M, cfg.K), (1.0 - cfg.type_purity) / max(cfg.K - 1, 1))
    if cfg.K == 1:
        q[:] = 1.0
    else:
        for y in range(cfg.n_classes):
            q[y, np.arange(cfg.M), table[y]] = cfg.type_purity

    regions = part_regions(cfg.W, cfg.H, cfg.M)
    profiles = [region_profile(r) for r in regions]
    n = cfg.n_classes * cfg.per_class
    ids = [f"{i:06d}" for i in range(n)]
    labels = np.repeat(np.arange(cfg.n_classes), cfg.per_class)
    assign, parts = _draw_parts(protos, q, cfg.noise, labels, rng)
    features = np.zeros((n, cfg.W, cfg.H, cfg.C))
    for m, ((rs, cs), prof) in enumerate(zip(regions, profiles)):
        features[:, rs, cs, :] = prof[None, :, :, None] * parts[:, m, None, None, :]

    seen = list(range(cfg.n_seen))
    unseen = list(range(cfg.n_seen, cfg.n_classes))
    train, test = [], []
    n_train = int(round(cfg.train_frac * cfg.per_class))
    for y in range(cfg.n_classes):
        members = [ids[i] for i in np.flatnonzero(labels == y)]
        if y < cfg.n_seen:
            order = rng.permutation(len(members))
            train += [members[j] for j in order[:n_train]]
            test += [members[j] for j in order[n_train:]]
        else:
            test += members
    split = SplitSpec(seen, unseen, train, test, name="synthetic")

    vis = q.reshape(cfg.n_classes, -1)
    if cfg.semantic_noise > 0:
        vis = vis + rng.uniform(-cfg.semantic_noise, cfg.semantic_noise, size=vis.shape)
    n_pad = int(round(vis.shape[1] * cfg.semantic_padding / (1.0 - cfg.semantic_padding)))
    if n_pad:
        vis = np.concatenate([vis, rng.uniform(0.0, 1.0, size=(cfg.n_classes, n_pad))], axis=1)
    semantic = Codebook(SEMANTIC, dict(enumerate(vis)))
    visual = Codebook(VISUAL, dict(enumerate(q)))

    ds = Dataset(ids, labels, list(range(cfg.n_classes)), split, codebook=semantic,
                 features=features, parts=parts, visual_codebook=visual)
    planted = PlantedModel(protos, cfg.noise ** 2, q, assign, regions, seps)
    return ds, planted


def write_planted(planted: PlantedModel, ds: Dataset, cfg: SynthConfig, directory):
    """Ground-truth files next to a synthetic dataset, plus a manifest."""
    d = Path(directory)
    write_tensor_file(planted.prototypes, d / "planted.vsef")
    write_tensor_file(planted.type_dist, d / "planted_types.vsef")
    with open(d / "planted_assignments.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id"] + [f"part{m}" for m in range(planted.assignments.shape[1])])
        for iid, row in zip(ds.instance_ids, planted.assignments):
            w.writerow([iid] + [int(k) for k in row])
    manifest = {
        "generator": "planted-prototypes",
        "config": asdict(cfg),
        "separation": cfg.separation,
        "noise": cfg.noise,
        "variance": planted.variance,
        "min_separation": [float(s) for s in planted.min_separation],
        "n_instances": len(ds),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def read_planted(directory) -> PlantedModel:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    cfg = SynthConfig(**manifest["config"])
    protos = read_tensor_file(d / "planted.vsef").astype(np.float64)
    q = read_tensor_file(d / "planted_types.vsef").astype(np.float64)
    with open(d / "planted_assignments.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    assign = np.array([[int(k) for k in r[1:]] for r in rows], dtype=np.int64)
    return PlantedModel(protos, manifest["variance"], q, assign,
                        part_regions(cfg.W, cfg.H, cfg.M), np.array(manifest["min_separation"]))
