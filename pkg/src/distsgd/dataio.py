"""LIBSVM-format data sets: parsing, normalization, and node partitioning."""

from __future__ import annotations

import bz2
import gzip
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from distsgd.errors import InvalidArgument, ParseError
from distsgd.losses import Sample

NORMALIZE_MODES = ("none", "unit_norm", "standardize")
PARTITION_RULES = ("round_robin", "shuffled")

DATASET_SOURCES = {
    "covertype": "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/",
    "quantum": "http://osmot.cs.cornell.edu/kddcup/",
}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Dense regressors ``x`` (``n x dim``) with labels ``y`` in {-1, +1}."""

    x: np.ndarray
    y: np.ndarray
    original_labels: tuple = ()

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def samples(self) -> list[Sample]:
        return [Sample(u, d) for u, d in zip(self.x, self.y)]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.x.shape == other.x.shape and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)


def _open(path: Path):
    if path.name.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    if path.name.endswith(".bz2"):
        return bz2.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_lines(lines):
    labels: list[float] = []
    rows: list[tuple[list[int], list[float]]] = []
    dim = 0
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise ParseError(f"non-numeric label {tokens[0]!r}", line_no) from None
        idx: list[int] = []
        val: list[float] = []
        prev = 0
        for tok in tokens[1:]:
            key, sep, value = tok.partition(":")
            if not sep:
                raise ParseError(f"malformed feature {tok!r}, expected index:value", line_no)
            try:
                k = int(key)
                v = float(value)
            except ValueError:
                raise ParseError(f"non-numeric feature {tok!r}", line_no) from None
            if k <= prev:
                raise ParseError(f"feature indices must be 1-based and strictly increasing (got {k} after {prev})", line_no)
            prev = k
            idx.append(k)
            val.append(v)
        dim = max(dim, prev)
        rows.append((idx, val))
    return labels, rows, dim


def remap_labels(labels, positive_label: float | None = None) -> np.ndarray:
    """Map arbitrary labels onto {-1, +1}.

    Two distinct labels: the larger one becomes +1. More than two: one-vs-rest
    with ``positive_label`` (class 2 when unset). A single label maps to +1 if
    positive, otherwise -1.
    """
    labels = np.asarray(labels, dtype=float)
    classes = np.unique(labels)
    if positive_label is not None:
        return np.where(labels == positive_label, 1.0, -1.0)
    if len(classes) == 2:
        return np.where(labels == classes[1], 1.0, -1.0)
    if len(classes) > 2:
        if 2.0 not in classes:
            raise InvalidArgument(f"{len(classes)} classes found; choose a positive_label for one-vs-rest")
        return np.where(labels == 2.0, 1.0, -1.0)
    return np.where(labels > 0, 1.0, -1.0)


def parse_libsvm(path, positive_label: float | None = None) -> Dataset:
    """Parse ``label idx:val ...`` lines into a dense :class:`Dataset`.

    Blank lines and ``#`` comments are skipped; ``.gz`` and ``.bz2`` files
    are read transparently. Indices are 1-based and strictly increasing.
    """
    path = Path(path)
    with _open(path) as fh:
        labels, rows, dim = _parse_lines(fh)
    x = np.zeros((len(rows), dim))
    for r, (idx, val) in enumerate(rows):
        if idx:
            x[r, np.asarray(idx) - 1] = val
    y = remap_labels(labels, positive_label) if labels else np.zeros(0)
    return Dataset(x, y, tuple(sorted(set(labels))))


def format_libsvm(ds: Dataset) -> str:
    """Inverse of :func:`parse_libsvm` for a parsed data set (labels already +-1)."""
    lines = []
    for r in range(len(ds)):
        nz = np.flatnonzero(ds.x[r])
        if r == 0 and ds.dim and (nz.size == 0 or nz[-1] != ds.dim - 1):
            # pin the dimension even when the last feature is zero everywhere
            nz = np.append(nz, ds.dim - 1)
        feats = " ".join(f"{k + 1}:{ds.x[r, k]:.17g}" for k in nz)
        label = "+1" if ds.y[r] > 0 else "-1"
        lines.append(f"{label} {feats}".rstrip())
    return "\n".join(lines) + ("\n" if lines else "")


def write_libsvm(ds: Dataset, path) -> None:
    Path(path).write_text(format_libsvm(ds), encoding="utf-8")


def normalize(ds: Dataset, mode: str = "unit_norm") -> Dataset:
    if mode not in NORMALIZE_MODES:
        raise InvalidArgument(f"unknown normalization {mode!r}")
    x = ds.x.copy()
    if mode == "unit_norm":
        norms = np.linalg.norm(x, axis=1)
        nz = norms > 0
        x[nz] /= norms[nz, None]
    elif mode == "standardize" and len(ds):
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        varying = std > 0
        x[:, varying] = (x[:, varying] - mean[varying]) / std[varying]
    return Dataset(x, ds.y.copy(), ds.original_labels)


@dataclass(frozen=True, eq=False)
class Partition:
    """Which node sees which samples.

    ``assignment[k]`` is the node that receives sample ``k`` on the first pass
    over the data. ``queues[i]`` is node ``i``'s consumption order, extended
    with reshuffled passes when the data set is too small (``recycled``).
    """

    assignment: np.ndarray
    queues: tuple
    recycled: bool = False
    passes: int = 1

    @property
    def n_nodes(self) -> int:
        return len(self.queues)


def partition(ds: Dataset, n_nodes: int, rule: str = "round_robin", rounds_needed: int = 0, seed: int = 0) -> Partition:
    """Deal samples to nodes: stream position ``k`` goes to node ``k mod N``.

    ``round_robin`` streams the file order; ``shuffled`` permutes it with the
    seeded RNG first. Extra passes are always reshuffled.
    """
    n = len(ds)
    if n == 0:
        raise InvalidArgument("cannot partition an empty data set")
    if n_nodes < 1:
        raise InvalidArgument("n_nodes must be positive")
    if rule not in PARTITION_RULES:
        raise InvalidArgument(f"unknown partition rule {rule!r}")
    rng = np.random.default_rng(seed)
    first = np.arange(n) if rule == "round_robin" else rng.permutation(n)
    stream = [first]
    need = n_nodes * rounds_needed
    total = n
    while total < need:
        stream.append(rng.permutation(n))
        total += n
    stream = np.concatenate(stream)
    assignment = np.empty(n, dtype=np.int64)
    assignment[first] = np.arange(n) % n_nodes
    recycled = total > n
    if recycled:
        stream = stream[:need]
    queues = tuple(stream[i::n_nodes] for i in range(n_nodes))
    return Partition(assignment, queues, recycled=recycled, passes=total // n)
