"""Multi-label data model, self-contained synthetic corpora, and file IO.

A corpus has a class space split into seen (0..S-1) and unseen (S..C-1)
indices, one l2-normalized embedding per class, and instances that carry
a feature vector in [0,1]^d plus a sorted, duplicate-free, non-empty
label set.  The synthetic generator hides a smooth ground-truth map from
embeddings to prototypes so learned generators have something real to
recover; the map is kept on the corpus object for self-tests.

Binary formats (little-endian):
  features   "MLZF" | u32 count | u32 d | per record: u32 n, n*u32, d*f32
  embeddings "MLZE" | u32 C | u32 d_e | C*d_e f32 row-major
A .csv feature path is parsed as text lines "l1;l2;...,v1,v2,...".
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .nn import MlpParams, init_mlp, mlp_forward

MAGIC_FEATURES = b"MLZF"
MAGIC_EMBEDDINGS = b"MLZE"


class DataFormatError(ValueError):
    """Malformed corpus file, reported with path and record index."""

    def __init__(self, path, message, record=None):
        where = f"{path}: " if path else ""
        if record is not None:
            where += f"record {record}: "
        super().__init__(where + message)
        self.path = path
        self.record = record


@dataclass(frozen=True)
class ClassSpace:
    """Seen classes occupy indices 0..S-1, unseen S..C-1."""

    seen_count: int
    unseen_count: int

    def __post_init__(self):
        if self.seen_count < 1 or self.unseen_count < 0:
            raise ValueError("need at least one seen class and a non-negative unseen count")

    @property
    def total(self) -> int:
        return self.seen_count + self.unseen_count

    @property
    def seen_indices(self) -> range:
        return range(self.seen_count)

    @property
    def unseen_indices(self) -> range:
        return range(self.seen_count, self.total)

    def is_seen(self, label: int) -> bool:
        if not 0 <= label < self.total:
            raise ValueError(f"label {label} outside class space of size {self.total}")
        return label < self.seen_count


UNIT_NORM_TOL = 1e-6


class EmbeddingTable:
    """One l2-normalized embedding row per class."""

    def __init__(self, vectors: np.ndarray):
        vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError("embedding table must be 2-D")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise ValueError("embedding rows must be unit-norm; use from_raw to normalize")
        self.vectors = vectors

    @classmethod
    def from_raw(cls, vectors: np.ndarray) -> "EmbeddingTable":
        vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            bad = int(np.nonzero(norms[:, 0] == 0.0)[0][0])
            raise ValueError(f"embedding row {bad} has zero norm")
        return cls(vectors / norms)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def rows(self, labels) -> np.ndarray:
        return self.vectors[np.asarray(labels, dtype=np.int64)]


@dataclass(frozen=True)
class MultiLabelInstance:
    """Feature vector plus a sorted duplicate-free non-empty label set."""

    feature: np.ndarray
    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValueError("instances must carry at least one label")
        if list(self.labels) != sorted(set(self.labels)):
            raise ValueError(f"labels must be sorted and duplicate-free, got {self.labels}")
        object.__setattr__(self, "feature", np.asarray(self.feature, dtype=np.float64))
        if self.feature.ndim != 1:
            raise ValueError("feature must be a flat vector")

    @property
    def label_count(self) -> int:
        return len(self.labels)


def make_instance(feature, labels) -> MultiLabelInstance:
    """Canonicalize labels (sort, dedupe) and build an instance."""
    return MultiLabelInstance(np.asarray(feature, dtype=np.float64), tuple(sorted(set(int(l) for l in labels))))


@dataclass
class SyntheticConfig:
    seen_count: int = 20
    unseen_count: int = 6
    embed_dim: int = 16
    feature_dim: int = 32
    train_count: int = 2000
    test_count: int = 500
    max_labels: int = 2
    noise_sigma: float = 0.05
    cluster_count: int = 4
    seed: int = 0


@dataclass
class SyntheticCorpus:
    class_space: ClassSpace
    embeddings: EmbeddingTable
    train_seen: list
    test_seen: list
    test_unseen: list
    prototypes: np.ndarray = None
    prototype_net: MlpParams = None


def _check_partition(corpus) -> None:
    space = corpus.class_space
    for inst in corpus.train_seen:
        for l in inst.labels:
            if not space.is_seen(l):
                raise ValueError(f"train instance labeled with unseen class {l}")
    for inst in corpus.test_seen:
        for l in inst.labels:
            if not space.is_seen(l):
                raise ValueError(f"seen test instance labeled with unseen class {l}")
    for inst in corpus.test_unseen:
        for l in inst.labels:
            if space.is_seen(l):
                raise ValueError(f"unseen test instance labeled with seen class {l}")


def _draw_instances(rng, pool, count, max_labels, prototypes, sigma, dim):
    out = []
    pool = np.asarray(pool, dtype=np.int64)
    for _ in range(count):
        n = int(rng.integers(1, max_labels + 1))
        labels = np.sort(rng.choice(pool, size=n, replace=False))
        feat = prototypes[labels].mean(axis=0)
        if sigma > 0.0:
            feat = feat + rng.normal(0.0, sigma, size=dim)
        feat = np.clip(feat, 0.0, 1.0)
        out.append(MultiLabelInstance(feat, tuple(int(l) for l in labels)))
    return out


def generate_synthetic(cfg: SyntheticConfig) -> SyntheticCorpus:
    """Deterministic synthetic corpus with a hidden embedding->prototype map.

    Embeddings are drawn around random cluster centers and l2-normalized;
    prototypes are the image of the embeddings under a fixed random
    two-layer net with sigmoid output; instance features average the
    prototypes of the drawn label set plus Gaussian noise, clamped to
    [0,1].  Label-set sizes are uniform on [1, max_labels], classes drawn
    uniformly without replacement within the split's class pool.
    """
    space = ClassSpace(cfg.seen_count, cfg.unseen_count)
    if cfg.unseen_count < 1:
        raise ValueError("synthetic corpora need at least one unseen class")
    if cfg.max_labels < 1:
        raise ValueError("max_labels must be positive")
    if cfg.max_labels > cfg.seen_count or cfg.max_labels > cfg.unseen_count:
        raise ValueError(
            f"max_labels={cfg.max_labels} exceeds a split's class pool "
            f"(seen={cfg.seen_count}, unseen={cfg.unseen_count})"
        )
    if cfg.cluster_count < 1:
        raise ValueError("cluster_count must be positive")

    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 11]))
    centers = rng.normal(size=(cfg.cluster_count, cfg.embed_dim))
    assignment = rng.integers(cfg.cluster_count, size=space.total)
    raw = centers[assignment] + 0.3 * rng.normal(size=(space.total, cfg.embed_dim))
    embeddings = EmbeddingTable.from_raw(raw)

    net_seed = int(rng.integers(2**31 - 1))
    prototype_net = init_mlp(
        cfg.embed_dim, 64, cfg.feature_dim, "lrelu", "sigmoid", seed=net_seed
    )
    prototypes = mlp_forward(prototype_net, embeddings.vectors)

    train_seen = _draw_instances(
        rng, list(space.seen_indices), cfg.train_count, cfg.max_labels,
        prototypes, cfg.noise_sigma, cfg.feature_dim,
    )
    test_seen = _draw_instances(
        rng, list(space.seen_indices), cfg.test_count, cfg.max_labels,
        prototypes, cfg.noise_sigma, cfg.feature_dim,
    )
    test_unseen = _draw_instances(
        rng, list(space.unseen_indices), cfg.test_count, cfg.max_labels,
        prototypes, cfg.noise_sigma, cfg.feature_dim,
    )
    corpus = SyntheticCorpus(
        space, embeddings, train_seen, test_seen, test_unseen, prototypes, prototype_net
    )
    _check_partition(corpus)
    return corpus


# ----------------------------------------------------------------------
# feature files


def save_features(path, records) -> None:
    """Write (feature, labels) pairs or instances; binary by default, text for .csv."""
    records = [(r.feature, r.labels) if isinstance(r, MultiLabelInstance) else r for r in records]
    records = [(np.asarray(f, dtype=np.float64), tuple(int(l) for l in labels)) for f, labels in records]
    if not records:
        raise DataFormatError(path, "refusing to write an empty feature file")
    dim = records[0][0].shape[0]
    for i, (f, _) in enumerate(records):
        if f.shape != (dim,):
            raise DataFormatError(path, f"inconsistent feature width {f.shape}", record=i)
    if str(path).endswith(".csv"):
        with open(path, "w") as fh:
            for f, labels in records:
                fh.write(";".join(str(l) for l in labels))
                fh.write(",")
                fh.write(",".join(repr(float(v)) for v in f))
                fh.write("\n")
        return
    with open(path, "wb") as fh:
        fh.write(MAGIC_FEATURES)
        fh.write(struct.pack("<II", len(records), dim))
        for f, labels in records:
            fh.write(struct.pack("<I", len(labels)))
            fh.write(np.asarray(labels, dtype="<u4").tobytes())
            fh.write(f.astype("<f4").tobytes())


def _load_features_csv(path):
    records = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            head, _, rest = line.partition(",")
            if not rest:
                raise DataFormatError(path, "line has no feature values", record=i)
            try:
                labels = [int(t) for t in head.split(";") if t != ""]
                values = np.array([float(t) for t in rest.split(",")], dtype=np.float64)
            except ValueError as exc:
                raise DataFormatError(path, str(exc), record=i) from None
            records.append((values, labels))
    return records


def load_features(path) -> list[tuple[np.ndarray, tuple[int, ...]]]:
    """Read raw (feature, sorted labels) pairs; empty-label records are dropped.

    Features come back as float64 but are NOT normalized here; see
    :func:`fit_feature_range` / :func:`apply_feature_range`.
    """
    if str(path).endswith(".csv"):
        raw = _load_features_csv(path)
    else:
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != MAGIC_FEATURES:
            raise DataFormatError(path, f"bad magic {blob[:4]!r}, expected {MAGIC_FEATURES!r}")
        if len(blob) < 12:
            raise DataFormatError(path, "truncated header")
        count, dim = struct.unpack_from("<II", blob, 4)
        off = 12
        raw = []
        for i in range(count):
            if off + 4 > len(blob):
                raise DataFormatError(path, "truncated label count", record=i)
            (n,) = struct.unpack_from("<I", blob, off)
            off += 4
            need = 4 * n + 4 * dim
            if off + need > len(blob):
                raise DataFormatError(path, "truncated record body", record=i)
            labels = np.frombuffer(blob, dtype="<u4", count=n, offset=off).tolist()
            off += 4 * n
            values = np.frombuffer(blob, dtype="<f4", count=dim, offset=off).astype(np.float64)
            off += 4 * dim
            raw.append((values, labels))
        if off != len(blob):
            raise DataFormatError(path, f"{len(blob) - off} trailing bytes")
    out = []
    widths = {f.shape[0] for f, _ in raw}
    if len(widths) > 1:
        raise DataFormatError(path, f"inconsistent feature widths {sorted(widths)}")
    for f, labels in raw:
        canon = tuple(sorted(set(int(l) for l in labels)))
        if not canon:
            continue  # unlabeled records carry no supervision
        out.append((f, canon))
    return out


def save_embeddings(path, table: EmbeddingTable) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC_EMBEDDINGS)
        fh.write(struct.pack("<II", table.count, table.dim))
        fh.write(table.vectors.astype("<f4").tobytes())


def load_embeddings(path, expected_count: int | None = None) -> EmbeddingTable:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC_EMBEDDINGS:
        raise DataFormatError(path, f"bad magic {blob[:4]!r}, expected {MAGIC_EMBEDDINGS!r}")
    if len(blob) < 12:
        raise DataFormatError(path, "truncated header")
    count, dim = struct.unpack_from("<II", blob, 4)
    expected = 12 + 4 * count * dim
    if len(blob) != expected:
        raise DataFormatError(path, f"expected {expected} bytes, found {len(blob)}")
    vectors = np.frombuffer(blob, dtype="<f4", offset=12).astype(np.float64).reshape(count, dim)
    if expected_count is not None and count != expected_count:
        raise DataFormatError(path, f"{count} embeddings, class space needs {expected_count}")
    # f32 round-tripping perturbs norms, so renormalize on load
    return EmbeddingTable.from_raw(vectors)


# ----------------------------------------------------------------------
# normalization (train-split statistics only)


def fit_feature_range(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return features.min(axis=0), features.max(axis=0)


def apply_feature_range(features, mins, maxs) -> np.ndarray:
    """Min-max scale into [0,1]; degenerate dimensions become constant 0.

    Out-of-range values (test splits) are clipped into [0,1].
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    span = maxs - mins
    safe = np.where(span > 0.0, span, 1.0)
    scaled = (features - mins) / safe
    scaled = np.where(span > 0.0, scaled, 0.0)
    return np.clip(scaled, 0.0, 1.0)


@dataclass
class LoadedCorpus:
    class_space: ClassSpace
    embeddings: EmbeddingTable
    train_seen: list
    test_seen: list
    test_unseen: list
    feature_mins: np.ndarray = None
    feature_maxs: np.ndarray = None


def load_dataset(
    class_space: ClassSpace,
    embeddings_path,
    train_path,
    test_seen_path=None,
    test_unseen_path=None,
) -> LoadedCorpus:
    """Ingest corpus files; normalization uses the training split only."""
    embeddings = load_embeddings(embeddings_path, expected_count=class_space.total)
    train_raw = load_features(train_path)
    if not train_raw:
        raise DataFormatError(train_path, "training split has no labeled records")
    mins, maxs = fit_feature_range(np.stack([f for f, _ in train_raw]))

    def build(raw, path):
        feats = apply_feature_range(np.stack([f for f, _ in raw]), mins, maxs)
        out = []
        for i, ((_, labels), feat) in enumerate(zip(raw, feats)):
            for l in labels:
                if not 0 <= l < class_space.total:
                    raise DataFormatError(path, f"label {l} outside class space", record=i)
            out.append(MultiLabelInstance(feat, labels))
        return out

    train_seen = build(train_raw, train_path)
    test_seen = build(load_features(test_seen_path), test_seen_path) if test_seen_path else []
    test_unseen = build(load_features(test_unseen_path), test_unseen_path) if test_unseen_path else []
    corpus = LoadedCorpus(class_space, embeddings, train_seen, test_seen, test_unseen, mins, maxs)
    _check_partition(corpus)
    return corpus


def feature_matrix(instances) -> np.ndarray:
    return np.stack([inst.feature for inst in instances])


def label_matrix(instances, universe) -> np.ndarray:
    """Multi-hot targets; column k corresponds to universe[k]."""
    universe = list(universe)
    col = {c: k for k, c in enumerate(universe)}
    out = np.zeros((len(instances), len(universe)))
    for i, inst in enumerate(instances):
        for l in inst.labels:
            if l not in col:
                raise ValueError(f"label {l} not in the classifier's universe")
            out[i, col[l]] = 1.0
    return out
