"""Datasets: latent class models, tuple samplers, CSV and binary persistence.

A contrastive dataset is stored as one flat feature matrix plus integer index
arrays (anchor, positive block, negative blocks per tuple), so iid draws and
sequence-derived corpora share a layout. On disk that is a JSON manifest next
to a little-endian float64 matrix with a 16 byte header (magic ``PBCURLF1``,
u32 row count, u32 dim).
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"PBCURLF1"

STD_FLOOR = 1e-8


class DataFormatError(ValueError):
    """Malformed dataset file or inconsistent manifest."""


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray        # floored, safe to divide by

    def apply(self, x):
        return (x - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_data(cls, x):
        std = np.maximum(np.std(x, axis=0), STD_FLOOR)
        return cls(mean=np.mean(x, axis=0), std=std)

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["mean"], float), np.asarray(doc["std"], float))


@dataclass
class LabeledDataset:
    x: np.ndarray          # (n, d)
    y: np.ndarray          # (n,) int labels

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def classes(self):
        return np.unique(self.y)


@dataclass
class ContrastiveDataset:
    """m tuples referencing rows of one feature matrix."""

    features: np.ndarray   # (rows, d)
    anchors: np.ndarray    # (m,)
    positives: np.ndarray  # (m, block_size)
    negatives: np.ndarray  # (m, k, block_size)
    k: int
    block_size: int
    dependency_t: int = 0
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.anchors.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def gather(self, idx=None):
        """Materialise (anchor, positive, negative) arrays for tuple indices."""
        if idx is None:
            idx = np.arange(len(self))
        return (
            self.features[self.anchors[idx]],
            self.features[self.positives[idx]],
            self.features[self.negatives[idx]],
        )

    def subset(self, idx):
        return ContrastiveDataset(
            features=self.features,
            anchors=self.anchors[idx],
            positives=self.positives[idx],
            negatives=self.negatives[idx],
            k=self.k,
            block_size=self.block_size,
            dependency_t=self.dependency_t,
            provenance=dict(self.provenance),
        )


def concat_contrastive(a, b):
    """Stack two tuple sets (train + valid for certificate-criterion runs)."""
    if a.k != b.k or a.block_size != b.block_size or a.dim != b.dim:
        raise ValueError("tuple shapes differ, cannot concatenate")
    off = a.features.shape[0]
    return ContrastiveDataset(
        features=np.vstack([a.features, b.features]),
        anchors=np.concatenate([a.anchors, b.anchors + off]),
        positives=np.concatenate([a.positives, b.positives + off]),
        negatives=np.concatenate([a.negatives, b.negatives + off]),
        k=a.k,
        block_size=a.block_size,
        dependency_t=max(a.dependency_t, b.dependency_t),
        provenance={"kind": "concat", "parts": [a.provenance, b.provenance]},
    )


# ---------------------------------------------------------------------------
# latent class models


@dataclass
class LatentClassModel:
    """Mixture of class conditional distributions with class frequencies rho.

    Two conditional families:
      * gaussian: spherical N(means[c], std^2 I)
      * discrete: finite support (points shared across classes), per class
        probability table; exact expectations are enumerable, which is what
        the oracle checks rely on.
    """

    rho: np.ndarray                    # (C,)
    kind: str                          # "gaussian" | "discrete"
    means: np.ndarray | None = None    # gaussian: (C, d)
    std: float = 1.0
    support: np.ndarray | None = None  # discrete: (S, d) point table
    probs: np.ndarray | None = None    # discrete: (C, S)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if np.any(self.rho < 0) or abs(self.rho.sum() - 1.0) > 1e-9:
            raise ValueError("rho must be a probability vector")
        if self.kind == "gaussian":
            if self.means is None:
                raise ValueError("gaussian model needs class means")
            self.means = np.asarray(self.means, dtype=np.float64)
        elif self.kind == "discrete":
            if self.support is None or self.probs is None:
                raise ValueError("discrete model needs support and probs")
            self.support = np.asarray(self.support, dtype=np.float64)
            self.probs = np.asarray(self.probs, dtype=np.float64)
            if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError("probs rows must be probability vectors")
        else:
            raise ValueError(f"unknown model kind: {self.kind!r}")

    @property
    def n_classes(self):
        return self.rho.size

    @property
    def dim(self):
        return self.means.shape[1] if self.kind == "gaussian" else self.support.shape[1]

    def sample_classes(self, shape, rng):
        return rng.choice(self.n_classes, size=shape, p=self.rho)

    def sample_points(self, classes, rng):
        """One draw from D_c for every entry of the integer array classes."""
        classes = np.asarray(classes)
        if self.kind == "gaussian":
            eps = rng.standard_normal(classes.shape + (self.dim,))
            return self.means[classes] + self.std * eps
        cum = np.cumsum(self.probs, axis=1)
        u = rng.random(classes.shape)
        flat_c = classes.ravel()
        idx = np.empty(flat_c.shape, dtype=np.int64)
        for c in range(self.n_classes):
            sel = flat_c == c
            if np.any(sel):
                idx[sel] = np.searchsorted(cum[c], u.ravel()[sel], side="right")
        idx = np.minimum(idx, self.probs.shape[1] - 1)
        return self.support[idx.reshape(classes.shape)]


def random_gaussian_model(n_classes, dim, separation, std, rng):
    """Uniform class frequencies, means drawn from N(0, separation^2 I)."""
    means = separation * rng.standard_normal((n_classes, dim))
    return LatentClassModel(
        rho=np.full(n_classes, 1.0 / n_classes), kind="gaussian", means=means, std=std
    )


# ---------------------------------------------------------------------------
# samplers


def sample_contrastive_iid(model, m, k, block_size, rng, transform=None):
    """Draw m tuples from the latent class generative process.

    Classes (c_pos, c_neg_1..k) are iid from rho; the anchor and the positive
    block come from D_{c_pos}, each negative block from its own D_{c_neg_i}.
    transform, if given, is applied to every sampled point (normalisation).
    """
    b = block_size
    c_pos = model.sample_classes(m, rng)
    c_neg = model.sample_classes((m, k), rng)
    anchors = model.sample_points(c_pos, rng)
    positives = model.sample_points(np.repeat(c_pos[:, None], b, axis=1), rng)
    negatives = model.sample_points(np.repeat(c_neg[:, :, None], b, axis=2), rng)
    if transform is not None:
        anchors = transform(anchors)
        positives = transform(positives)
        negatives = transform(negatives)
    d = anchors.shape[1]
    features = np.concatenate(
        [anchors, positives.reshape(m * b, d), negatives.reshape(m * k * b, d)]
    )
    return ContrastiveDataset(
        features=features,
        anchors=np.arange(m, dtype=np.int64),
        positives=np.arange(m, m + m * b, dtype=np.int64).reshape(m, b),
        negatives=np.arange(m + m * b, m + m * b + m * k * b, dtype=np.int64).reshape(m, k, b),
        k=k,
        block_size=b,
        dependency_t=0,
        provenance={
            "kind": "synthetic-iid",
            "rho": model.rho.tolist(),
            "tau": float(np.sum(model.rho**2)),
        },
    )


def sample_labeled(model, n, rng, transform=None):
    y = model.sample_classes(n, rng)
    x = model.sample_points(y, rng)
    if transform is not None:
        x = transform(x)
    return LabeledDataset(x=x, y=y.astype(np.int64))


def build_iid_from_labeled(labeled, m, k, block_size, rng):
    """iid tuples drawn from an empirical labeled pool.

    Classes follow the label frequencies; anchor and block members are
    uniform draws with replacement over the class's rows, mirroring the
    latent class process with D_c replaced by the empirical conditional.
    """
    b = block_size
    classes = labeled.classes
    counts = np.array([(labeled.y == c).sum() for c in classes], dtype=np.float64)
    rho = counts / counts.sum()
    pools = [np.nonzero(labeled.y == c)[0] for c in classes]

    c_pos = rng.choice(classes.size, size=m, p=rho)
    c_neg = rng.choice(classes.size, size=(m, k), p=rho)

    def draw_rows(class_idx):
        out = np.empty(class_idx.shape, dtype=np.int64)
        for ci in range(classes.size):
            sel = class_idx == ci
            n = int(sel.sum())
            if n:
                out[sel] = pools[ci][rng.integers(0, pools[ci].size, size=n)]
        return out

    return ContrastiveDataset(
        features=labeled.x,
        anchors=draw_rows(c_pos),
        positives=draw_rows(np.repeat(c_pos[:, None], b, axis=1)),
        negatives=draw_rows(np.repeat(c_neg[:, :, None], b, axis=2)),
        k=k,
        block_size=b,
        dependency_t=0,
        provenance={
            "kind": "labeled-iid",
            "rho": rho.tolist(),
            "tau": float(np.sum(rho**2)),
        },
    )


def gen_sequences(model, n_per_class, length, ar_coeff, rng):
    """Stationary AR(1) drift around each class mean.

    x_t = mean_c + u_t with u_t = phi u_{t-1} + sqrt(1 - phi^2) std eps_t, so
    consecutive frames are correlated but the marginal stays N(mean_c, std^2).
    Returns (list of (length, d) arrays, label list), grouped by class.
    """
    if model.kind != "gaussian":
        raise ValueError("sequence generator needs a gaussian model")
    phi = float(ar_coeff)
    seqs, labels = [], []
    for c in range(model.n_classes):
        for _ in range(n_per_class):
            eps = rng.standard_normal((length, model.dim))
            u = np.empty_like(eps)
            u[0] = eps[0]
            for t in range(1, length):
                u[t] = phi * u[t - 1] + np.sqrt(1.0 - phi * phi) * eps[t]
            seqs.append(model.means[c] + model.std * u)
            labels.append(c)
    return seqs, labels


def build_noniid_from_sequences(
    sequences, labels, k, block_size, rng, allow_same_class_negatives=True, transform=None
):
    """Tuples from time ordered sequences; dependency range T = block_size.

    Every position t with a full lookahead window yields one tuple: anchor
    x_t, positive block x_{t+1} .. x_{t+block_size}. Negative block classes
    are drawn from the empirical class frequencies (optionally excluding the
    anchor's class); block members are uniform draws over that class's frames
    anywhere in the corpus, never from the anchor's own tuple window.
    """
    b = block_size
    labels = np.asarray(labels, dtype=np.int64)
    if len(sequences) != labels.size:
        raise ValueError("one label per sequence required")
    frames = [np.asarray(s, dtype=np.float64) for s in sequences]
    if transform is not None:
        frames = [transform(f) for f in frames]
    lengths = np.array([f.shape[0] for f in frames])
    if np.any(lengths < b + 1):
        raise ValueError(f"sequences must have at least block_size + 1 = {b + 1} frames")
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    features = np.vstack(frames)

    classes = np.unique(labels)
    counts = np.array([(labels == c).sum() for c in classes], dtype=np.float64)
    rho = counts / counts.sum()
    rows_by_class = {
        c: np.concatenate(
            [np.arange(offsets[i], offsets[i + 1]) for i in np.nonzero(labels == c)[0]]
        )
        for c in classes
    }

    anchors, positives, seq_of_tuple, t_of_tuple, tuple_class = [], [], [], [], []
    for i, f in enumerate(frames):
        n_t = f.shape[0] - b
        base = offsets[i]
        for t in range(n_t):
            anchors.append(base + t)
            positives.append(np.arange(base + t + 1, base + t + 1 + b))
            seq_of_tuple.append(i)
            t_of_tuple.append(t)
            tuple_class.append(labels[i])
    m = len(anchors)
    anchors = np.asarray(anchors, dtype=np.int64)
    positives = np.asarray(positives, dtype=np.int64)
    tuple_class = np.asarray(tuple_class)

    if allow_same_class_negatives:
        neg_classes = classes[rng.choice(classes.size, size=(m, k), p=rho)]
    else:
        if classes.size < 2:
            raise ValueError("need at least two classes to exclude the anchor's")
        neg_classes = np.empty((m, k), dtype=np.int64)
        for ci, c in enumerate(classes):
            sel = tuple_class == c
            p = rho.copy()
            p[ci] = 0.0
            p /= p.sum()
            n_sel = int(sel.sum())
            if n_sel:
                neg_classes[sel] = classes[rng.choice(classes.size, size=(n_sel, k), p=p)]

    negatives = np.empty((m, k, b), dtype=np.int64)
    for ci, c in enumerate(classes):
        pool = rows_by_class[c]
        sel = neg_classes == c
        n_draw = int(sel.sum()) * b
        if n_draw:
            negatives[sel] = pool[rng.integers(0, pool.size, size=(int(sel.sum()), b))]

    # forbid references into the anchor's own window [t, t + b]
    win_lo = (offsets[np.asarray(seq_of_tuple)] + np.asarray(t_of_tuple))[:, None, None]
    bad = (negatives >= win_lo) & (negatives <= win_lo + b)
    while np.any(bad):
        idx = np.nonzero(bad)
        redraw_classes = neg_classes[idx[0], idx[1]]
        for c in np.unique(redraw_classes):
            pool = rows_by_class[c]
            sel = redraw_classes == c
            rows = pool[rng.integers(0, pool.size, size=int(sel.sum()))]
            flat = (idx[0][sel], idx[1][sel], idx[2][sel])
            negatives[flat] = rows
        bad = (negatives >= win_lo) & (negatives <= win_lo + b)

    return ContrastiveDataset(
        features=features,
        anchors=anchors,
        positives=positives,
        negatives=negatives,
        k=k,
        block_size=b,
        dependency_t=b,
        provenance={
            "kind": "sequences",
            "rho": rho.tolist(),
            "tau": float(np.sum(rho**2)),
            "n_sequences": len(frames),
        },
    )


# ---------------------------------------------------------------------------
# CSV ingestion (numeric features, final integer label column)


def load_feature_csv(path, stats=None):
    """Read a rectangular numeric CSV whose last column is an integer label.

    Features are normalised per dimension: with stats given they are applied
    (test data uses training statistics), otherwise statistics are computed
    from this file. Returns (LabeledDataset, NormStats).
    """
    rows, labels = [], []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
                if width < 2:
                    raise DataFormatError(f"{path}:{lineno}: need at least one feature column")
            elif len(cells) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(cells)}"
                )
            try:
                rows.append([float(c) for c in cells[:-1]])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric feature cell") from None
            try:
                labels.append(int(cells[-1]))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: label column must be integer") from None
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    x = np.asarray(rows, dtype=np.float64)
    if stats is None:
        stats = NormStats.from_data(x)
    return LabeledDataset(x=stats.apply(x), y=np.asarray(labels, dtype=np.int64)), stats


def save_labeled_csv(ds, path):
    with open(path, "w") as fh:
        for row, label in zip(ds.x, ds.y):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


# ---------------------------------------------------------------------------
# binary feature matrix + JSON manifest


def _feature_bytes(features):
    rows, dim = features.shape
    header = MAGIC + struct.pack("<II", rows, dim)
    payload = np.ascontiguousarray(features, dtype="<f8").tobytes()
    return header + payload


def dataset_hash(ds):
    """sha256 of the serialized feature matrix (header included)."""
    return hashlib.sha256(_feature_bytes(ds.features)).hexdigest()


def save_contrastive(ds, json_path):
    """Write manifest JSON and the sibling .bin feature matrix."""
    bin_path = os.path.splitext(json_path)[0] + ".bin"
    with open(bin_path, "wb") as fh:
        fh.write(_feature_bytes(ds.features))
    doc = {
        "format": "pbcurl-contrastive-v1",
        "features_file": os.path.basename(bin_path),
        "k": int(ds.k),
        "block_size": int(ds.block_size),
        "dependency_t": int(ds.dependency_t),
        "n_tuples": len(ds),
        "provenance": ds.provenance,
        "anchors": ds.anchors.tolist(),
        "positives": ds.positives.tolist(),
        "negatives": ds.negatives.tolist(),
    }
    with open(json_path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_contrastive(json_path):
    with open(json_path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "pbcurl-contrastive-v1":
        raise DataFormatError(f"{json_path}: not a contrastive dataset manifest")
    bin_path = os.path.join(os.path.dirname(json_path), doc["features_file"])
    with open(bin_path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise DataFormatError(f"{bin_path}: bad magic, not a feature matrix")
    rows, dim = struct.unpack("<II", blob[8:16])
    expect = 16 + rows * dim * 8
    if len(blob) != expect:
        raise DataFormatError(f"{bin_path}: expected {expect} bytes, found {len(blob)}")
    features = np.frombuffer(blob[16:], dtype="<f8").reshape(rows, dim).astype(np.float64)
    ds = ContrastiveDataset(
        features=features,
        anchors=np.asarray(doc["anchors"], dtype=np.int64),
        positives=np.asarray(doc["positives"], dtype=np.int64),
        negatives=np.asarray(doc["negatives"], dtype=np.int64),
        k=int(doc["k"]),
        block_size=int(doc["block_size"]),
        dependency_t=int(doc["dependency_t"]),
        provenance=doc.get("provenance", {}),
    )
    for arr in (ds.anchors, ds.positives, ds.negatives):
        if arr.size and (arr.min() < 0 or arr.max() >= rows):
            raise DataFormatError(f"{json_path}: tuple index out of range")
    if ds.positives.shape != (len(ds), ds.block_size):
        raise DataFormatError(f"{json_path}: positive index shape mismatch")
    if ds.negatives.shape != (len(ds), ds.k, ds.block_size):
        raise DataFormatError(f"{json_path}: negative index shape mismatch")
    return ds


# ---------------------------------------------------------------------------
# sequence corpus ingestion (per class CSV files of frames)


def load_sequence_csv(path):
    """Frames of one sequence: rectangular numeric CSV, no label column."""
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(cells)}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell") from None
    if not rows:
        raise DataFormatError(f"{path}: empty sequence")
    return np.asarray(rows, dtype=np.float64)


def prep_sequence_corpus(manifest, first_steps, train_per_class):
    """Slice and split a corpus of per class sequence files.

    manifest maps class id -> list of CSV paths. Each sequence is truncated
    to its first first_steps frames (shorter sequences are rejected); per
    class, the first train_per_class files go to the training split, the
    rest to the test split. Returns (train_seqs, train_labels, test_seqs,
    test_labels).
    """
    train_seqs, train_labels, test_seqs, test_labels = [], [], [], []
    for label in sorted(manifest, key=int):
        paths = manifest[label]
        if len(paths) <= train_per_class:
            raise DataFormatError(
                f"class {label}: need more than {train_per_class} sequences to split"
            )
        for i, p in enumerate(paths):
            seq = load_sequence_csv(p)
            if seq.shape[0] < first_steps:
                raise DataFormatError(
                    f"{p}: sequence has {seq.shape[0]} frames, need {first_steps}"
                )
            seq = seq[:first_steps]
            if i < train_per_class:
                train_seqs.append(seq)
                train_labels.append(int(label))
            else:
                test_seqs.append(seq)
                test_labels.append(int(label))
    return train_seqs, train_labels, test_seqs, test_labels


def frames_as_labeled(sequences, labels):
    """Every frame of every sequence, labeled by its sequence's class."""
    x = np.vstack([np.asarray(s, dtype=np.float64) for s in sequences])
    y = np.concatenate(
        [np.full(len(s), lab, dtype=np.int64) for s, lab in zip(sequences, labels)]
    )
    return LabeledDataset(x=x, y=y)
