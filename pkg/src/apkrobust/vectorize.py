"""Vocabulary construction, per-app vectors, and sparse matrix assembly.

Column order is fully determined by the vocabulary: families appear in the
canonical family order and, inside a family, names are sorted by descending
prevalence with ties broken by name. Rebuilding from the same corpus yields
the same columns.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (BadModelFile, EmptyCorpus, EmptyMatrix, FamilyMismatch,
                     MissingFamily)
from .features import FAMILIES, RawFeatureSet, family_kind

MATRIX_MAGIC = b"DLM1"
MATRIX_VERSION = 1


@dataclass
class Vocabulary:
    """Per-family ordered name lists with the prevalence that ranked them."""

    families: dict[str, list[tuple[str, float]]]
    built_from: int
    min_string_prevalence: float = 0.01
    _index: dict[str, dict[str, int]] = field(default=None, repr=False,
                                              compare=False)

    def __post_init__(self):
        for family in self.families:
            if family not in FAMILIES:
                raise ValueError(f"unknown family {family!r}")
        self._index = {
            family: {name: i for i, (name, _p) in enumerate(entries)}
            for family, entries in self.families.items()
        }

    def index(self, family: str, name: str) -> int | None:
        return self._index.get(family, {}).get(name)

    def names(self, family: str) -> list[str]:
        return [name for name, _p in self.families.get(family, [])]

    def family_width(self, family: str) -> int:
        return len(self.families.get(family, []))

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "built_from": self.built_from,
            "min_string_prevalence": self.min_string_prevalence,
            "families": {f: [[n, p] for n, p in entries]
                         for f, entries in self.families.items()},
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise BadModelFile(f"vocabulary is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("version") != 1:
            raise BadModelFile("unsupported vocabulary document")
        try:
            families = {f: [(str(n), float(p)) for n, p in entries]
                        for f, entries in doc["families"].items()}
            return cls(families, int(doc["built_from"]),
                       float(doc.get("min_string_prevalence", 0.01)))
        except (KeyError, TypeError, ValueError) as exc:
            raise BadModelFile(f"malformed vocabulary: {exc}") from exc


def build_vocabulary(raw_sets_by_app: dict[str, dict[str, RawFeatureSet]],
                     min_string_prevalence: float = 0.01) -> Vocabulary:
    """Collect every observed name; prune only the string family.

    Prevalence is the fraction of apps where a name appears at all. String
    names below the floor are dropped, names exactly at it stay.
    """
    if not raw_sets_by_app:
        raise EmptyCorpus("cannot build a vocabulary from zero apps")
    n_apps = len(raw_sets_by_app)
    presence: dict[str, dict[str, int]] = {f: {} for f in FAMILIES}
    for raw_sets in raw_sets_by_app.values():
        for family, raw in raw_sets.items():
            if family not in presence:
                raise ValueError(f"unknown family {family!r}")
            bucket = presence[family]
            for name in raw.observations:
                bucket[name] = bucket.get(name, 0) + 1

    families = {}
    for family in FAMILIES:
        entries = [(name, count / n_apps)
                   for name, count in presence[family].items()]
        if family == "Strings":
            entries = [(n, p) for n, p in entries
                       if p >= min_string_prevalence]
        entries.sort(key=lambda e: (-e[1], e[0]))
        families[family] = entries
    return Vocabulary(families, n_apps, min_string_prevalence)


@dataclass
class FeatureVector:
    """One app, one family, sparse over vocabulary positions."""

    app_id: str
    family: str
    kind: str
    values: dict[int, float]

    def __post_init__(self):
        if self.kind != family_kind(self.family):
            raise FamilyMismatch(f"{self.family} vectors are "
                                 f"{family_kind(self.family)}, got "
                                 f"{self.kind!r}")
        for idx, value in self.values.items():
            if idx < 0:
                raise ValueError(f"negative column index {idx}")
            if value == 0:
                raise ValueError("explicit zeros are not stored")

    def active(self) -> frozenset:
        return frozenset(self.values)


def vectorize(raw_sets: dict[str, RawFeatureSet], vocab: Vocabulary,
              app_id: str) -> dict[str, FeatureVector]:
    """Map raw observations onto vocabulary positions, dropping unknowns."""
    out = {}
    for family, raw in raw_sets.items():
        values = {}
        for name, value in raw.observations.items():
            idx = vocab.index(family, name)
            if idx is not None:
                values[idx] = float(value)
        out[family] = FeatureVector(app_id, family, raw.kind, values)
    return out


@dataclass
class FeatureMatrix:
    """CSR matrix over the concatenated family blocks, one row per app."""

    app_ids: list[str]
    blocks: list[tuple[str, int, int]]
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    labels: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return len(self.app_ids)

    @property
    def n_cols(self) -> int:
        return sum(width for _f, _s, width in self.blocks)

    def family_block(self, family: str) -> tuple[int, int]:
        for name, start, width in self.blocks:
            if name == family:
                return start, width
        raise MissingFamily("<matrix>", family)

    def toarray(self) -> np.ndarray:
        dense = np.zeros((self.n_rows, self.n_cols), dtype=np.float64)
        for row in range(self.n_rows):
            lo, hi = self.indptr[row], self.indptr[row + 1]
            dense[row, self.indices[lo:hi]] = self.values[lo:hi]
        return dense

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    def to_bytes(self) -> bytes:
        parts = [MATRIX_MAGIC,
                 struct.pack("<IIIBH", MATRIX_VERSION, self.n_rows,
                             self.n_cols, int(self.labels is not None),
                             len(self.blocks))]
        for name, start, width in self.blocks:
            encoded = name.encode("utf-8")
            parts.append(struct.pack("<H", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<II", start, width))
        nnz = len(self.indices)
        parts.append(struct.pack("<Q", nnz))
        parts.append(self.indptr.astype("<u8").tobytes())
        parts.append(self.indices.astype("<u4").tobytes())
        parts.append(self.values.astype("<f8").tobytes())
        if self.labels is not None:
            parts.append(self.labels.astype("u1").tobytes())
        ids_blob = json.dumps(self.app_ids).encode("utf-8")
        parts.append(struct.pack("<I", len(ids_blob)))
        parts.append(ids_blob)
        return b"".join(parts)

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FeatureMatrix":
        reader = _Reader(blob)
        if reader.take(4) != MATRIX_MAGIC:
            raise BadModelFile("not a matrix file")
        version, n_rows, n_cols, has_labels, n_blocks = \
            struct.unpack("<IIIBH", reader.take(15))
        if version != MATRIX_VERSION:
            raise BadModelFile(f"unsupported matrix version {version}")
        blocks = []
        for _ in range(n_blocks):
            (name_len,) = struct.unpack("<H", reader.take(2))
            name = reader.take(name_len).decode("utf-8")
            start, width = struct.unpack("<II", reader.take(8))
            blocks.append((name, start, width))
        if sum(w for _n, _s, w in blocks) != n_cols:
            raise BadModelFile("block widths disagree with column count")
        (nnz,) = struct.unpack("<Q", reader.take(8))
        indptr = np.frombuffer(reader.take(8 * (n_rows + 1)), dtype="<u8")
        indices = np.frombuffer(reader.take(4 * nnz), dtype="<u4")
        values = np.frombuffer(reader.take(8 * nnz), dtype="<f8")
        labels = None
        if has_labels:
            labels = np.frombuffer(reader.take(n_rows), dtype="u1").copy()
        (ids_len,) = struct.unpack("<I", reader.take(4))
        app_ids = json.loads(reader.take(ids_len).decode("utf-8"))
        if len(app_ids) != n_rows:
            raise BadModelFile("row id count disagrees with row count")
        if nnz and (int(indptr[-1]) != nnz or int(indices.max()) >= n_cols):
            raise BadModelFile("inconsistent sparse structure")
        if reader.pos != len(blob):
            raise BadModelFile(f"{len(blob) - reader.pos} trailing bytes")
        return cls(app_ids, blocks, indptr.copy(), indices.copy(),
                   values.copy(), labels)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise BadModelFile("truncated file")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk


def assemble_matrix(vectors_by_app: dict[str, dict[str, FeatureVector]],
                    vocab: Vocabulary,
                    families=FAMILIES,
                    column_filter: dict[str, list[int]] | None = None,
                    labels: dict[str, int] | None = None) -> FeatureMatrix:
    """Concatenate family blocks into one CSR matrix, rows in app order.

    column_filter restricts a family to the listed in-family positions
    (deduplicated, ascending); families absent from the filter keep their
    full width. Every app must supply every requested family.
    """
    if not vectors_by_app:
        raise EmptyCorpus("no apps to assemble")
    families = [f for f in FAMILIES if f in set(families)]
    keep: dict[str, list[int]] = {}
    remap: dict[str, dict[int, int]] = {}
    blocks = []
    start = 0
    for family in families:
        width = vocab.family_width(family)
        if column_filter is not None and family in column_filter:
            cols = sorted(set(column_filter[family]))
            if cols and (cols[0] < 0 or cols[-1] >= width):
                raise ValueError(f"filter index out of range for {family}")
        else:
            cols = list(range(width))
        keep[family] = cols
        remap[family] = {c: i for i, c in enumerate(cols)}
        blocks.append((family, start, len(cols)))
        start += len(cols)
    if start == 0:
        raise EmptyMatrix("assembled matrix has no columns")

    app_ids = list(vectors_by_app)
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    for app_id in app_ids:
        vectors = vectors_by_app[app_id]
        row: list[tuple[int, float]] = []
        for family, block_start, _width in blocks:
            if family not in vectors:
                raise MissingFamily(app_id, family)
            vec = vectors[family]
            if vec.family != family:
                raise FamilyMismatch(f"vector for {app_id} is {vec.family}, "
                                     f"expected {family}")
            mapping = remap[family]
            for col, value in vec.values.items():
                local = mapping.get(col)
                if local is not None:
                    row.append((block_start + local, value))
        row.sort()
        indices.extend(c for c, _v in row)
        values.extend(v for _c, v in row)
        indptr.append(len(indices))

    label_arr = None
    if labels is not None:
        label_arr = np.array([labels[a] for a in app_ids], dtype=np.uint8)
    return FeatureMatrix(app_ids, blocks,
                         np.asarray(indptr, dtype=np.uint64),
                         np.asarray(indices, dtype=np.uint32),
                         np.asarray(values, dtype=np.float64),
                         label_arr)
