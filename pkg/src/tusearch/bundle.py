"""Index bundle persistence.

A bundle is a directory holding the canonical repository export plus every
index component in little-endian binary form, described by a single
``bundle.json`` carrying the format version, the build configuration, and
a sha256 checksum per component file.  Loading verifies the version first
and every checksum second, before any parsing.  Nothing in a bundle
depends on wall-clock time, so identical builds are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .centroid_ann import CentroidGraphIndex
from .errors import DataError
from .partitions import PartitionGroup, PartitionIndex, PartitionSet
from .pipeline import SearchEngine
from .quantizer import Codebook, ClusterAssignment, SetWeightIndex, VectorInvertedIndex
from .repository import ingest_repository, write_repository

FORMAT_NAME = "tusearch-bundle"
FORMAT_VERSION = 1

_REPO_STEM = "repository"
_CODEBOOK = "codebook.f32"
_VECTOR_INDEX = "vector_index.bin"
_WEIGHT_INDEX = "weight_index.bin"
_PARTITIONS = "partitions.bin"
_GRAPH = "graph.bin"
_META = "bundle.json"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _pack_vector_index(iv: VectorInvertedIndex) -> bytes:
    offsets = np.zeros(iv.n_c + 1, dtype="<i8")
    blocks = []
    total = 0
    for c in range(iv.n_c):
        arr = iv.lists.get(c)
        n = 0 if arr is None else len(arr)
        total += n
        offsets[c + 1] = total
        if n:
            blocks.append(arr.astype("<i4").tobytes())
    return offsets.tobytes() + b"".join(blocks)


def _unpack_vector_index(raw: bytes, n_c: int) -> VectorInvertedIndex:
    head = (n_c + 1) * 8
    offsets = np.frombuffer(raw[:head], dtype="<i8")
    handles = np.frombuffer(raw[head:], dtype="<i4").reshape(-1, 2)
    lists = {}
    for c in range(n_c):
        lo, hi = offsets[c], offsets[c + 1]
        if hi > lo:
            lists[c] = handles[lo:hi].astype(np.int32)
    return VectorInvertedIndex(lists, n_c=n_c)


def _pack_weight_index(iw: SetWeightIndex, n_sets: int) -> bytes:
    offsets = np.zeros(n_sets + 1, dtype="<i8")
    cids = []
    counts = []
    total = 0
    for sid in range(n_sets):
        entries = sorted(iw.weights.get(sid, {}).items())
        total += len(entries)
        offsets[sid + 1] = total
        cids.extend(c for c, _ in entries)
        counts.extend(n for _, n in entries)
    return (
        offsets.tobytes()
        + np.asarray(cids, dtype="<i4").tobytes()
        + np.asarray(counts, dtype="<i4").tobytes()
    )


def _unpack_weight_index(raw: bytes, n_sets: int) -> SetWeightIndex:
    head = (n_sets + 1) * 8
    offsets = np.frombuffer(raw[:head], dtype="<i8")
    total = int(offsets[-1])
    cids = np.frombuffer(raw[head : head + 4 * total], dtype="<i4")
    counts = np.frombuffer(raw[head + 4 * total : head + 8 * total], dtype="<i4")
    weights = {}
    for sid in range(n_sets):
        lo, hi = offsets[sid], offsets[sid + 1]
        weights[sid] = {int(cids[e]): int(counts[e]) for e in range(lo, hi)}
    return SetWeightIndex(weights)


def _pack_partitions(pindex: PartitionIndex, n_sets: int) -> bytes:
    out = [struct.pack("<dd", pindex.rho_low, pindex.rho_high)]
    for sid in range(n_sets):
        pset = pindex.entries[sid]
        cascade = np.ascontiguousarray(pset.cascade_centroids, dtype="<f4")
        out.append(struct.pack("<iii", len(pset.groups), cascade.shape[0], cascade.shape[1]))
        for g in pset.groups:
            out.append(struct.pack("<ii", len(g.centroid_ids), len(g.member_indices)))
            out.append(np.asarray(g.centroid_ids, dtype="<i4").tobytes())
            out.append(g.member_indices.astype("<i4").tobytes())
        out.append(cascade.tobytes())
    return b"".join(out)


def _unpack_partitions(raw: bytes, n_sets: int) -> PartitionIndex:
    pos = 0
    rho_low, rho_high = struct.unpack_from("<dd", raw, pos)
    pos += 16
    entries = {}
    for sid in range(n_sets):
        n_groups, n_casc, d_casc = struct.unpack_from("<iii", raw, pos)
        pos += 12
        groups = []
        for gid in range(n_groups):
            n_cids, n_members = struct.unpack_from("<ii", raw, pos)
            pos += 8
            cids = np.frombuffer(raw, dtype="<i4", count=n_cids, offset=pos)
            pos += 4 * n_cids
            members = np.frombuffer(raw, dtype="<i4", count=n_members, offset=pos)
            pos += 4 * n_members
            groups.append(PartitionGroup(gid, tuple(int(c) for c in cids), members.astype(np.int32)))
        cascade = np.frombuffer(raw, dtype="<f4", count=n_casc * d_casc, offset=pos).reshape(n_casc, d_casc)
        pos += 4 * n_casc * d_casc
        entries[sid] = PartitionSet(sid, groups, cascade.astype(np.float32))
    return PartitionIndex(entries, rho_low, rho_high)


def _pack_graph(graph: CentroidGraphIndex) -> bytes:
    out = [struct.pack("<iiiii", graph.n_nodes, len(graph.layers), graph.entry_point,
                       graph.m, graph.ef_construction)]
    out.append(struct.pack("<i", graph.seed))
    out.append(graph.levels.astype("<i4").tobytes())
    for adj in graph.layers:
        nodes = sorted(adj)
        out.append(struct.pack("<i", len(nodes)))
        for node in nodes:
            nbrs = adj[node]
            out.append(struct.pack("<ii", node, len(nbrs)))
            out.append(np.asarray(nbrs, dtype="<i4").tobytes())
    return b"".join(out)


def _unpack_graph(raw: bytes, centroids: np.ndarray) -> CentroidGraphIndex:
    pos = 0
    n_nodes, n_layers, entry, m, ef_c = struct.unpack_from("<iiiii", raw, pos)
    pos += 20
    (seed,) = struct.unpack_from("<i", raw, pos)
    pos += 4
    levels = np.frombuffer(raw, dtype="<i4", count=n_nodes, offset=pos).astype(np.int64)
    pos += 4 * n_nodes
    layers = []
    for _ in range(n_layers):
        (count,) = struct.unpack_from("<i", raw, pos)
        pos += 4
        adj = {}
        for _ in range(count):
            node, deg = struct.unpack_from("<ii", raw, pos)
            pos += 8
            adj[node] = list(np.frombuffer(raw, dtype="<i4", count=deg, offset=pos))
            pos += 4 * deg
        layers.append(adj)
    return CentroidGraphIndex(
        vectors=centroids.astype(np.float64),
        layers=layers, levels=levels, entry_point=entry,
        m=m, ef_construction=ef_c, seed=seed,
    )


def save_bundle(directory, engine: SearchEngine) -> Path:
    """Write every engine component under ``directory``; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_repository(engine.repo, directory, stem=_REPO_STEM)
    (directory / _CODEBOOK).write_bytes(engine.codebook.centroids.astype("<f4").tobytes())
    (directory / _VECTOR_INDEX).write_bytes(_pack_vector_index(engine.vector_index))
    (directory / _WEIGHT_INDEX).write_bytes(_pack_weight_index(engine.weight_index, engine.repo.n_sets))
    (directory / _PARTITIONS).write_bytes(_pack_partitions(engine.partition_index, engine.repo.n_sets))
    components = [
        f"{_REPO_STEM}.tsv", f"{_REPO_STEM}.f32",
        _CODEBOOK, _VECTOR_INDEX, _WEIGHT_INDEX, _PARTITIONS,
    ]
    if engine.graph is not None:
        (directory / _GRAPH).write_bytes(_pack_graph(engine.graph))
        components.append(_GRAPH)
    config = dict(engine.build_config)
    config.setdefault("n_c", engine.codebook.n_c)
    config.setdefault("seed", engine.codebook.train_seed)
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": config,
        "components": components,
        "checksums": {name: _sha256(directory / name) for name in components},
    }
    (directory / _META).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return directory


def load_bundle(directory) -> SearchEngine:
    """Verify and load a bundle directory back into a search engine."""
    directory = Path(directory)
    meta_path = directory / _META
    if not meta_path.is_file():
        raise DataError(f"not a bundle (missing {_META}): {directory}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format") != FORMAT_NAME or meta.get("version") != FORMAT_VERSION:
        raise DataError(
            f"bundle format mismatch: found {meta.get('format')!r} v{meta.get('version')!r}, "
            f"expected {FORMAT_NAME!r} v{FORMAT_VERSION}"
        )
    for name, expect in meta["checksums"].items():
        path = directory / name
        if not path.is_file():
            raise DataError(f"bundle component missing: {name}")
        got = _sha256(path)
        if got != expect:
            raise DataError(f"bundle checksum mismatch for {name}: {got} != {expect}")
    config = meta["config"]
    repo = ingest_repository(directory / f"{_REPO_STEM}.tsv")
    n_c = int(config["n_c"])
    centroids = np.frombuffer((directory / _CODEBOOK).read_bytes(), dtype="<f4").reshape(n_c, repo.dimension)
    codebook = Codebook(centroids.astype(np.float32), train_seed=int(config.get("seed", 0)))
    iv = _unpack_vector_index((directory / _VECTOR_INDEX).read_bytes(), n_c)
    iw = _unpack_weight_index((directory / _WEIGHT_INDEX).read_bytes(), repo.n_sets)
    pindex = _unpack_partitions((directory / _PARTITIONS).read_bytes(), repo.n_sets)
    flat = np.empty(repo.total_vectors, dtype=np.int32)
    for c, handles in iv.lists.items():
        rows = repo.offsets[handles[:, 0]] + handles[:, 1]
        flat[rows] = c
    assignment = ClusterAssignment(flat, repo.offsets.copy())
    graph = None
    if _GRAPH in meta["components"]:
        graph = _unpack_graph((directory / _GRAPH).read_bytes(), codebook.centroids)
    return SearchEngine(repo, codebook, assignment, iv, iw, pindex, graph, config)


def component_sizes(directory) -> dict[str, int]:
    """On-disk byte size per bundle component."""
    directory = Path(directory)
    meta = json.loads((directory / _META).read_text(encoding="utf-8"))
    return {name: (directory / name).stat().st_size for name in meta["components"]}
