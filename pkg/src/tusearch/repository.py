"""Vector-set repositories: data model, manifest ingestion, synthetic data.

A repository holds one vector set per source table, one vector per column.
Vectors are normalized to unit length exactly once, at ingest time, so every
similarity in the engine is a plain inner product and a threshold in (0, 1]
is meaningful.  Payloads are stored as little-endian float32; all score
accumulation happens in float64.

Manifest format (tab separated)::

    VSETS v1<TAB>dimension=<d>
    <set_id><TAB><num_vectors><TAB><payload_path><TAB><byte_offset>

Payload files are raw little-endian float32, row major, ``num_vectors * d``
values per record starting at ``byte_offset``.  Query tables use the same
format with a single record.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError

MANIFEST_MAGIC = "VSETS v1"
ZERO_NORM = 1e-12
UNIT_TOL = 1e-6


def similarity(u, v) -> float:
    """Inner product of two equal-dimension vectors, accumulated in float64.

    Symmetric and deterministic: both argument orders multiply the same
    element pairs and reduce them in the same index order.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    if u.ndim != 1 or v.ndim != 1 or u.shape[0] != v.shape[0]:
        du = u.shape[0] if u.ndim == 1 else u.shape
        dv = v.shape[0] if v.ndim == 1 else v.shape
        raise DataError(f"dimension mismatch: {du} vs {dv}")
    return float(np.dot(u.astype(np.float64, copy=False), v.astype(np.float64, copy=False)))


def normalize_rows(rows: np.ndarray, where: str = "input") -> np.ndarray:
    """Normalize each row to unit length, returning float32.

    Raises DataError for non-finite entries or rows with norm below
    ``ZERO_NORM`` (which cannot be normalized).  ``where`` names the vector
    set in error messages.
    """
    rows64 = np.asarray(rows, dtype=np.float64)
    if rows64.ndim != 2:
        raise DataError(f"expected a 2-d vector block for {where}")
    finite = np.isfinite(rows64).all(axis=1)
    if not finite.all():
        j = int(np.flatnonzero(~finite)[0])
        raise DataError(f"non-finite vector at {where}, index {j}")
    norms = np.linalg.norm(rows64, axis=1)
    small = norms < ZERO_NORM
    if small.any():
        j = int(np.flatnonzero(small)[0])
        raise DataError(f"zero vector at {where}, index {j}")
    return (rows64 / norms[:, None]).astype(np.float32)


@dataclass(frozen=True)
class VectorSet:
    """One table's columns as unit vectors.  Column order is preserved for
    reporting but never affects scores."""

    set_id: int
    vectors: np.ndarray  # (m, d) float32, unit rows


@dataclass(frozen=True)
class QueryTable:
    """The query table's columns as unit vectors."""

    vectors: np.ndarray  # (m, d) float32, unit rows

    @property
    def n_vectors(self) -> int:
        return self.vectors.shape[0]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]


class VectorSetRepository:
    """Immutable collection of vector sets sharing one dimension.

    Vectors are stored in one contiguous (total_vectors, d) float32 matrix;
    set ``i`` owns rows ``offsets[i]:offsets[i+1]``.  Set ids are dense in
    ``[0, n_sets)``.  Safe for concurrent reads after construction.
    """

    def __init__(self, matrix: np.ndarray, offsets: np.ndarray):
        matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        offsets = np.asarray(offsets, dtype=np.int64)
        if matrix.ndim != 2 or matrix.shape[1] < 1:
            raise DataError("repository matrix must be 2-d with dimension >= 1")
        if offsets.ndim != 1 or offsets[0] != 0 or offsets[-1] != matrix.shape[0]:
            raise DataError("repository offsets must span the vector matrix")
        sizes = np.diff(offsets)
        if (sizes < 1).any():
            sid = int(np.flatnonzero(sizes < 1)[0])
            raise DataError(f"empty vector set {sid}")
        self.matrix = matrix
        self.offsets = offsets

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_sets(self) -> int:
        return len(self.offsets) - 1

    @property
    def total_vectors(self) -> int:
        return self.matrix.shape[0]

    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def size_of(self, set_id: int) -> int:
        return int(self.offsets[set_id + 1] - self.offsets[set_id])

    def vectors_of(self, set_id: int) -> np.ndarray:
        if not 0 <= set_id < self.n_sets:
            raise DataError(f"unknown set_id {set_id} (repository has {self.n_sets} sets)")
        return self.matrix[self.offsets[set_id] : self.offsets[set_id + 1]]

    def set(self, set_id: int) -> VectorSet:
        return VectorSet(set_id, self.vectors_of(set_id))

    def __iter__(self):
        for sid in range(self.n_sets):
            yield self.set(sid)

    def __len__(self) -> int:
        return self.n_sets

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.offsets.tobytes())
        h.update(self.matrix.tobytes())
        return h.hexdigest()


def _parse_manifest(manifest_path: Path):
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataError(f"manifest not found: {manifest_path}")
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DataError(f"empty manifest: {manifest_path}")
    header = lines[0].split("\t")
    if len(header) != 2 or header[0] != MANIFEST_MAGIC or not header[1].startswith("dimension="):
        raise DataError(f"bad manifest header: {lines[0]!r}")
    try:
        dimension = int(header[1].split("=", 1)[1])
    except ValueError:
        raise DataError(f"bad manifest dimension: {header[1]!r}") from None
    if dimension < 1:
        raise DataError(f"manifest dimension must be >= 1, got {dimension}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"bad manifest record at line {lineno}: {line!r}")
        try:
            set_id, count, offset = int(parts[0]), int(parts[1]), int(parts[3])
        except ValueError:
            raise DataError(f"bad manifest record at line {lineno}: {line!r}") from None
        if count < 1:
            raise DataError(f"empty vector set {set_id}")
        records.append((set_id, count, manifest_path.parent / parts[2], offset))
    if not records:
        raise DataError(f"manifest has no records: {manifest_path}")
    ids = sorted(r[0] for r in records)
    if ids != list(range(len(records))):
        raise DataError("set_ids must be unique and dense in [0, n)")
    records.sort(key=lambda r: r[0])
    return dimension, records


def _read_block(payload: Path, offset: int, count: int, dimension: int, set_id: int) -> np.ndarray:
    if not payload.is_file():
        raise DataError(f"payload not found: {payload}")
    n_bytes = count * dimension * 4
    with open(payload, "rb") as fh:
        fh.seek(offset)
        raw = fh.read(n_bytes)
    if len(raw) != n_bytes:
        raise DataError(
            f"payload too short for set {set_id}: need {n_bytes} bytes at offset {offset} in {payload}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(count, dimension)


def ingest_repository(manifest_path) -> VectorSetRepository:
    """Load and normalize a repository from a manifest.

    Deterministic given identical input bytes; every vector comes out with
    unit norm (within float32 representation).
    """
    dimension, records = _parse_manifest(Path(manifest_path))
    blocks = []
    offsets = [0]
    for set_id, count, payload, offset in records:
        raw = _read_block(payload, offset, count, dimension, set_id)
        blocks.append(normalize_rows(raw, where=f"set {set_id}"))
        offsets.append(offsets[-1] + count)
    return VectorSetRepository(np.vstack(blocks), np.asarray(offsets))


def load_query_table(manifest_path) -> QueryTable:
    """Load a single-record manifest as a query table."""
    dimension, records = _parse_manifest(Path(manifest_path))
    if len(records) != 1:
        raise DataError(f"query manifest must contain exactly one record, got {len(records)}")
    set_id, count, payload, offset = records[0]
    raw = _read_block(payload, offset, count, dimension, set_id)
    return QueryTable(normalize_rows(raw, where="query"))


def load_query_tables(manifest_path) -> list[QueryTable]:
    """Load a multi-record manifest as a list of query tables (one per record)."""
    dimension, records = _parse_manifest(Path(manifest_path))
    out = []
    for set_id, count, payload, offset in records:
        raw = _read_block(payload, offset, count, dimension, set_id)
        out.append(QueryTable(normalize_rows(raw, where=f"query {set_id}")))
    return out


def write_repository(repo: VectorSetRepository, directory, stem: str = "repository") -> Path:
    """Write a repository in manifest + payload form; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload_name = f"{stem}.f32"
    (directory / payload_name).write_bytes(repo.matrix.astype("<f4").tobytes())
    lines = [f"{MANIFEST_MAGIC}\tdimension={repo.dimension}"]
    for sid in range(repo.n_sets):
        start = int(repo.offsets[sid])
        count = repo.size_of(sid)
        lines.append(f"{sid}\t{count}\t{payload_name}\t{start * repo.dimension * 4}")
    manifest = directory / f"{stem}.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


@dataclass(frozen=True)
class SyntheticData:
    """A generated repository plus the topic diagnostics behind it."""

    repository: VectorSetRepository
    topic_labels: list[np.ndarray]  # per set, topic id of each column
    topics: np.ndarray  # (n_topics, d) float32 unit rows as they appear in sets


def generate_synthetic(
    n_sets: int,
    cols_range: tuple[int, int],
    d: int,
    n_topics: int,
    noise: float,
    seed: int,
) -> SyntheticData:
    """Generate a clustered repository: each column is a noisy copy of one of
    ``n_topics`` unit topic directions.  Reproducible from ``seed``."""
    lo, hi = int(cols_range[0]), int(cols_range[1])
    if n_sets < 1 or d < 2 or n_topics < 1 or noise < 0 or lo < 1 or hi < lo:
        raise UsageError(
            "invalid synthetic parameters: need n_sets>=1, d>=2, n_topics>=1, "
            "noise>=0, 1<=cols_lo<=cols_hi"
        )
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n_topics, d))
    topics64 = raw / np.linalg.norm(raw, axis=1)[:, None]
    blocks = []
    labels = []
    offsets = [0]
    for _ in range(n_sets):
        m = int(rng.integers(lo, hi + 1))
        tids = rng.integers(0, n_topics, size=m)
        vecs = topics64[tids]
        if noise > 0:
            vecs = vecs + noise * rng.standard_normal((m, d))
        blocks.append(normalize_rows(vecs, where="synthetic"))
        labels.append(tids.astype(np.int32))
        offsets.append(offsets[-1] + m)
    repo = VectorSetRepository(np.vstack(blocks), np.asarray(offsets))
    return SyntheticData(repo, labels, normalize_rows(topics64, where="topics"))


def split_repository(repo: VectorSetRepository, n_first: int):
    """Split a repository into its first ``n_first`` sets and the rest."""
    if not 0 < n_first < repo.n_sets:
        raise UsageError(f"split point {n_first} out of range for {repo.n_sets} sets")
    cut = int(repo.offsets[n_first])
    first = VectorSetRepository(repo.matrix[:cut], repo.offsets[: n_first + 1])
    rest = VectorSetRepository(repo.matrix[cut:], repo.offsets[n_first:] - cut)
    return first, rest
