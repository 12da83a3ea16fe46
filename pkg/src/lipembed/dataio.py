"""Shared data containers and on-disk text formats.

Embedding files are delimited text with header ``label,id,v0,...,v{d-1}``,
one row per embedding, written at full decimal precision so a round trip is
value-exact. Metrics documents are JSON. All writers replace their target
atomically.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Embedding:
    """Fixed-size representation of one clip."""

    values: np.ndarray
    label: int
    source_id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"non-finite embedding for {self.source_id!r}")


@dataclass
class EmbeddingSet:
    """Embeddings as a matrix plus aligned labels and optional source ids."""

    x: np.ndarray          # [n, d]
    labels: np.ndarray     # [n] int
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.x.ndim != 2 or self.x.shape[0] != self.labels.shape[0]:
            raise ValueError("embedding matrix and labels disagree")
        if self.ids and len(self.ids) != self.x.shape[0]:
            raise ValueError("ids and rows disagree")

    @property
    def dim(self):
        return self.x.shape[1]

    def __len__(self):
        return self.x.shape[0]

    def classes(self):
        return sorted(set(self.labels.tolist()))

    def by_class(self):
        """dict label -> [n_c, d] matrix, labels in sorted order."""
        out = {}
        for label in self.classes():
            out[label] = self.x[self.labels == label]
        return out

    def subset(self, mask):
        ids = [i for i, m in zip(self.ids, mask) if m] if self.ids else []
        return EmbeddingSet(self.x[mask], self.labels[mask], ids)

    @classmethod
    def from_embeddings(cls, embeddings):
        return cls(
            x=np.stack([e.values for e in embeddings]),
            labels=np.array([e.label for e in embeddings]),
            ids=[e.source_id for e in embeddings],
        )


def atomic_write_text(path, text):
    """Write text then rename into place so reruns overwrite atomically."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_embeddings(path, embeddings):
    """Write an EmbeddingSet (or list of Embedding) as delimited text."""
    if not isinstance(embeddings, EmbeddingSet):
        embeddings = EmbeddingSet.from_embeddings(list(embeddings))
    d = embeddings.dim
    ids = embeddings.ids or [f"row{i}" for i in range(len(embeddings))]
    lines = ["label,id," + ",".join(f"v{i}" for i in range(d))]
    for row, label, sid in zip(embeddings.x, embeddings.labels, ids):
        values = ",".join(repr(float(v)) for v in row)
        lines.append(f"{label},{sid},{values}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_embeddings(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["label", "id"]:
            raise ValueError(f"{path}: not an embedding file (header {header[:2]})")
        d = len(header) - 2
        labels, ids, rows = [], [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d + 2:
                raise ValueError(f"{path}: row has {len(parts)} columns, expected {d + 2}")
            labels.append(int(parts[0]))
            ids.append(parts[1])
            rows.append([float(v) for v in parts[2:]])
    return EmbeddingSet(np.array(rows, dtype=float).reshape(len(rows), d), np.array(labels, dtype=int), ids)


def write_metrics(path, document):
    """Metrics document: machine-readable JSON with stable key order."""
    atomic_write_text(path, json.dumps(document, indent=2, sort_keys=True) + "\n")


def read_metrics(path):
    with open(path) as fh:
        return json.load(fh)
