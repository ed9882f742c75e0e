"""Dataset loading, splitting, PCA preprocessing and triplet generation."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import PCAProjection, pca_fit

logger = logging.getLogger(__name__)


class DataFormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class Dataset:
    """Labelled samples, one row per sample.

    ``labels`` are contiguous integers ``0..n_classes-1``; ``classes[c]`` is
    the original label of class ``c``.
    """

    samples: np.ndarray
    labels: np.ndarray
    name: str = ""
    classes: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.samples, dtype=float)
        y = np.asarray(self.labels)
        if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
            raise ValueError(f"need an n x D sample matrix with n >= 2, got {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"{y.shape[0] if y.ndim else 0} labels for {X.shape[0]} samples")
        if not np.all(np.isfinite(X)):
            raise ValueError("samples contain non-finite values")
        object.__setattr__(self, "samples", X)
        object.__setattr__(self, "labels", y.astype(int))
        if not self.classes:
            object.__setattr__(self, "classes", tuple(range(int(y.max()) + 1)))

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def n_classes(self):
        return len(np.unique(self.labels))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return self.samples[idx], self.labels[idx]


def _label_sort_key(labels):
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def _encode_labels(raw):
    classes = _label_sort_key(set(raw))
    lookup = {c: i for i, c in enumerate(classes)}
    parsed = []
    for c in classes:
        try:
            f = float(c)
            parsed.append(int(f) if f.is_integer() else f)
        except ValueError:
            parsed.append(c)
    return np.array([lookup[r] for r in raw], dtype=int), tuple(parsed)


def load_dense(path, label_column=-1, header=None, delimiter=",", name=None) -> Dataset:
    """Read a delimited text file with one label column.

    Parameters
    ----------
    label_column : int or str
        Column index (negative counts from the end) or header name.
    header : bool or None
        ``None`` sniffs: the first row is a header if any of its feature
        fields fails to parse as a number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh, delimiter=delimiter))
                if any(cell.strip() for cell in r)]
    if not rows:
        raise DataFormatError("empty file", path)

    if isinstance(label_column, str) and _is_int(label_column):
        label_column = int(label_column)
    by_name = isinstance(label_column, str)
    first_line, first = rows[0]
    if by_name:
        if header is False:
            raise DataFormatError(f"label column {label_column!r} given by name but no header", path)
        header = True
    if header is None:
        lab = _resolve_index(label_column, len(first))
        header = not all(_is_number(c) for j, c in enumerate(first) if j != lab)
    names = None
    if header:
        names = [c.strip() for c in first]
        rows = rows[1:]
        if not rows:
            raise DataFormatError("no data rows after header", path)

    width = len(rows[0][1])
    if by_name:
        if label_column not in names:
            raise DataFormatError(f"unknown label column {label_column!r}", path, first_line)
        lab = names.index(label_column)
    else:
        lab = _resolve_index(label_column, width)
        if not 0 <= lab < width:
            raise DataFormatError(f"label column {label_column} out of range for {width} columns",
                                  path, rows[0][0])

    feats, raw_labels = [], []
    for line, r in rows:
        if len(r) != width:
            raise DataFormatError(f"expected {width} fields, found {len(r)}", path, line)
        vals = []
        for j, cell in enumerate(r):
            if j == lab:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(f"non-numeric feature {cell!r} in column {j}", path, line) from None
            if not math.isfinite(v):
                raise DataFormatError(f"non-finite feature in column {j}", path, line)
            vals.append(v)
        feats.append(vals)
        raw_labels.append(r[lab].strip())
    labels, classes = _encode_labels(raw_labels)
    ds = Dataset(np.array(feats), labels, name or path.stem, classes)
    logger.info("loaded %s: n=%d D=%d classes=%d", ds.name, ds.n, ds.dim, len(classes))
    return ds


def _is_int(s):
    try:
        int(s)
        return True
    except (TypeError, ValueError):
        return False


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _resolve_index(col, width):
    return col + width if col < 0 else col


def load_libsvm(path, name=None) -> Dataset:
    """Read ``label idx:val ...`` lines with 1-based ascending indices."""
    path = Path(path)
    entries, raw_labels = [], []
    dim = 0
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            raw_labels.append(tokens[0])
            row, last = {}, 0
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                try:
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise DataFormatError(f"malformed pair {tok!r}", path, line_no) from None
                if not sep or idx < 1:
                    raise DataFormatError(f"malformed pair {tok!r}", path, line_no)
                if idx <= last:
                    raise DataFormatError(f"indices not ascending at {tok!r}", path, line_no)
                if not math.isfinite(val):
                    raise DataFormatError(f"non-finite value at {tok!r}", path, line_no)
                row[idx] = val
                last = idx
            dim = max(dim, last)
            entries.append(row)
    if not entries:
        raise DataFormatError("empty file", path)
    X = np.zeros((len(entries), max(dim, 1)))
    for i, row in enumerate(entries):
        for j, v in row.items():
            X[i, j - 1] = v
    labels, classes = _encode_labels(raw_labels)
    return Dataset(X, labels, name or path.stem, classes)


@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    validation: tuple
    test: tuple
    seed: int = 0
    fractions: tuple = (0.70, 0.15, 0.15)

    def __post_init__(self):
        sets = [set(self.train), set(self.validation), set(self.test)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("split index lists overlap")

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "train": list(self.train),
                           "validation": list(self.validation), "test": list(self.test)})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(tuple(d["train"]), tuple(d["validation"]), tuple(d["test"]), int(d.get("seed", 0)))

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def _largest_remainder(total, weights):
    weights = np.asarray(weights, dtype=float)
    if total == 0 or weights.sum() == 0:
        return np.zeros(len(weights), dtype=int)
    quota = total * weights / weights.sum()
    counts = np.floor(quota).astype(int)
    order = np.argsort(-(quota - counts), kind="stable")
    counts[order[: total - counts.sum()]] += 1
    return counts


def make_splits(ds: Dataset, seed: int = 0, fractions=(0.70, 0.15, 0.15)) -> SplitSpec:
    """Stratified random train/validation/test split.

    Validation and test get ``floor(n * fraction)`` samples each and the
    training set the rest (178 Wine samples -> 126/26/26). Classes with fewer
    than 3 members stay entirely in training.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    y = ds.labels
    classes = np.unique(y)
    members = {c: rng.permutation(np.flatnonzero(y == c)) for c in classes}
    eligible = [c for c in classes if len(members[c]) >= 3]
    for c in classes:
        if c not in eligible:
            logger.warning("class %s has %d members; confined to the training split",
                           ds.classes[c] if c < len(ds.classes) else c, len(members[c]))
    n_elig = sum(len(members[c]) for c in eligible)
    n_val = math.floor(ds.n * fractions[1] + 1e-9)
    n_test = math.floor(ds.n * fractions[2] + 1e-9)
    n_val, n_test = min(n_val, n_elig), min(n_test, n_elig - min(n_val, n_elig))
    sizes = [len(members[c]) for c in eligible]
    val_counts = _largest_remainder(n_val, sizes)
    test_counts = _largest_remainder(n_test, sizes)
    train, val, test = [], [], []
    for c, nv, nt in zip(eligible, val_counts, test_counts):
        idx = members[c]
        # keep at least one member of every class for training
        while nv + nt > len(idx) - 1:
            if nt >= nv and nt > 0:
                nt -= 1
            else:
                nv -= 1
        val.extend(idx[:nv])
        test.extend(idx[nv:nv + nt])
        train.extend(idx[nv + nt:])
    for c in classes:
        if c not in eligible:
            train.extend(members[c])
    return SplitSpec(tuple(sorted(int(i) for i in train)), tuple(sorted(int(i) for i in val)),
                     tuple(sorted(int(i) for i in test)), int(seed), fractions)


@dataclass(frozen=True)
class TripletConstraint:
    """One proximity comparison: sample ``i`` is closer to ``j`` than to ``k``.

    ``u = a_i - a_k`` (impostor difference), ``v = a_i - a_j`` (target
    difference); the constraint matrix is ``u u^T - v v^T``.
    """

    u: np.ndarray
    v: np.ndarray
    i: int = -1
    j: int = -1
    k: int = -1

    def inner(self, X) -> float:
        return float(self.u @ X @ self.u - self.v @ X @ self.v)


@dataclass(frozen=True)
class TripletSet:
    """Triplets stacked row-wise: ``U[r] = u_r``, ``V[r] = v_r``."""

    U: np.ndarray
    V: np.ndarray
    index: np.ndarray = field(default=None)

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if U.shape != V.shape:
            raise ValueError(f"U {U.shape} and V {V.shape} differ")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)
        idx = self.index
        idx = np.full((U.shape[0], 3), -1, dtype=int) if idx is None else np.asarray(idx, dtype=int)
        object.__setattr__(self, "index", idx.reshape(U.shape[0], 3))

    @classmethod
    def from_constraints(cls, constraints):
        constraints = list(constraints)
        if not constraints:
            raise ValueError("no triplets")
        return cls(np.array([t.u for t in constraints]), np.array([t.v for t in constraints]),
                   np.array([(t.i, t.j, t.k) for t in constraints]))

    @classmethod
    def from_indices(cls, samples, index):
        A = np.asarray(samples, dtype=float)
        index = np.asarray(index, dtype=int).reshape(-1, 3)
        i, j, k = index.T
        return cls(A[i] - A[k], A[i] - A[j], index)

    def __len__(self):
        return self.U.shape[0]

    def __getitem__(self, r):
        i, j, k = (int(x) for x in self.index[r])
        return TripletConstraint(self.U[r], self.V[r], i, j, k)

    @property
    def dim(self):
        return self.U.shape[1]

    def margins(self, X) -> np.ndarray:
        """``<A_r, X> = u_r^T X u_r - v_r^T X v_r`` for every triplet."""
        X = np.asarray(X, dtype=float)
        if X.shape != (self.dim, self.dim):
            raise ValueError(f"matrix shape {X.shape} does not match triplet dimension {self.dim}")
        return (np.einsum("ij,ij->i", self.U @ X, self.U)
                - np.einsum("ij,ij->i", self.V @ X, self.V))


def _nearest(dists, candidates, m):
    order = np.lexsort((candidates, dists))
    return candidates[order[:m]]


def generate_triplets(ds: Dataset, train_idx, m: int = 3) -> TripletSet:
    """Triplets from each training sample's nearest neighbours.

    For every training sample ``i`` the ``m`` nearest same-class training
    samples serve as targets ``j`` and the ``m`` nearest different-class
    training samples as impostors ``k``; all ``m x m`` combinations are
    emitted. Euclidean distance, ties to the smaller index.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    train_idx = np.asarray(sorted(int(i) for i in train_idx), dtype=int)
    A, y = ds.samples, ds.labels
    Atr, ytr = A[train_idx], y[train_idx]
    sq = np.einsum("ij,ij->i", Atr, Atr)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * Atr @ Atr.T, 0.0)
    rows = []
    lonely = 0
    for p, i in enumerate(train_idx):
        same = np.flatnonzero(ytr == ytr[p])
        same = same[same != p]
        diff = np.flatnonzero(ytr != ytr[p])
        if same.size == 0:
            lonely += 1
            continue
        if diff.size == 0:
            continue
        targets = _nearest(D2[p, same], same, m)
        impostors = _nearest(D2[p, diff], diff, m)
        for j in targets:
            for k in impostors:
                rows.append((i, train_idx[j], train_idx[k]))
    if lonely:
        logger.info("%d training samples have no same-class peer; used only as impostors", lonely)
    if not rows:
        raise ValueError("no triplets could be generated (need two classes with peers)")
    return TripletSet.from_indices(A, np.array(rows))


def standardize(ds: Dataset, train_idx) -> Dataset:
    """Per-feature z-score with statistics from the training rows."""
    Atr = ds.samples[np.asarray(train_idx, dtype=int)]
    mu = Atr.mean(axis=0)
    sd = Atr.std(axis=0)
    sd[sd == 0] = 1.0
    return Dataset((ds.samples - mu) / sd, ds.labels, ds.name, ds.classes)


def apply_pca(ds: Dataset, train_idx, target_dim: int):
    """Project every row with a PCA fitted on the training rows only.

    Returns the projected dataset and the :class:`PCAProjection`.
    """
    if target_dim > ds.dim:
        raise ValueError(f"target_dim {target_dim} exceeds data dimension {ds.dim}")
    proj: PCAProjection = pca_fit(ds.samples[np.asarray(train_idx, dtype=int)], target_dim)
    return Dataset(proj.transform(ds.samples), ds.labels, ds.name, ds.classes), proj
