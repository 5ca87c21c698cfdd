"""Typed multi-relational network model and TSV ingestion.

A heterogeneous network holds typed vertices and typed, undirected, unweighted
edges.  Vertex ids are opaque strings; every vertex gets a dense global index
and a dense index local to its type, and both maps travel with downstream
artifacts so results can be joined back to the source ids.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, TextIO

import numpy as np
import scipy.sparse as sp


class HINError(ValueError):
    """Base class for ingestion and schema errors."""


class HINParseError(HINError):
    def __init__(self, message: str, source: str = "<stream>", line: int = 0, column: int = 0):
        self.source = source
        self.line = line
        self.column = column
        super().__init__(f"{source}:{line}:{column}: {message}")


class ReferentialIntegrityError(HINError):
    pass


class SchemaError(HINError):
    pass


@dataclass(frozen=True)
class Relation:
    name: str
    src_type: int
    dst_type: int


@dataclass(frozen=True)
class SchemaSummary:
    type_counts: dict[str, int]
    relation_counts: dict[str, int]
    relation_density: dict[str, float]

    @property
    def n_vertices(self) -> int:
        return sum(self.type_counts.values())

    @property
    def n_edges(self) -> int:
        return sum(self.relation_counts.values())


@dataclass(frozen=True, eq=False)
class HeterogeneousNetwork:
    """Immutable heterogeneous network.

    ``vertex_type[i]`` is the type index of global vertex ``i``; ``edge_src``,
    ``edge_dst`` and ``edge_rel`` are parallel arrays of global vertex indices
    and relation indices with duplicate triples removed.  ``labels`` maps
    vertex ids to a tuple of class names (several rows per vertex make the
    data multi-label).
    """

    vertex_ids: tuple[str, ...]
    vertex_type: np.ndarray
    type_names: tuple[str, ...]
    relations: tuple[Relation, ...]
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_rel: np.ndarray
    labels: dict[str, tuple[str, ...]] | None = None
    _index: dict[str, int] = field(default_factory=dict, repr=False)
    _local: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    _members: tuple[np.ndarray, ...] = field(default=(), repr=False)
    _incidence: tuple[np.ndarray, np.ndarray, np.ndarray] = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        index = {v: i for i, v in enumerate(self.vertex_ids)}
        if len(index) != len(self.vertex_ids):
            raise SchemaError("vertex ids must be unique")
        vt = np.asarray(self.vertex_type, dtype=np.int64)
        members = tuple(np.flatnonzero(vt == t) for t in range(len(self.type_names)))
        local = np.empty(len(vt), dtype=np.int64)
        for m in members:
            local[m] = np.arange(len(m))
        object.__setattr__(self, "vertex_type", vt)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_local", local)
        object.__setattr__(self, "_members", members)
        # incidence lists: both orientations, self-loops once
        loop = self.edge_src == self.edge_dst
        ends = np.concatenate([self.edge_src, self.edge_dst[~loop]])
        other = np.concatenate([self.edge_dst, self.edge_src[~loop]])
        erel = np.concatenate([self.edge_rel, self.edge_rel[~loop]])
        order = np.argsort(ends, kind="stable")
        offsets = np.searchsorted(ends[order], np.arange(len(vt) + 1))
        object.__setattr__(self, "_incidence", (offsets, other[order], erel[order]))
        for arr in (self.edge_src, self.edge_dst, self.edge_rel, vt):
            arr.setflags(write=False)
        local.setflags(write=False)

    # -- lookups -----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edge_src)

    def index_of(self, vertex_id: str) -> int:
        return self._index[vertex_id]

    def type_id(self, name: str) -> int:
        try:
            return self.type_names.index(name)
        except ValueError:
            raise SchemaError(f"unknown vertex type {name!r}") from None

    def relation_id(self, name: str) -> int:
        for i, r in enumerate(self.relations):
            if r.name == name:
                return i
        raise SchemaError(f"unknown relation {name!r}")

    def members(self, type_id: int) -> np.ndarray:
        """Global indices of the vertices of one type, in ascending order."""
        return self._members[type_id]

    def local_index(self, vertex: int) -> int:
        return int(self._local[vertex])

    def type_vertex_ids(self, type_id: int) -> list[str]:
        return [self.vertex_ids[i] for i in self._members[type_id]]

    def relations_between(self, t1: int, t2: int) -> list[int]:
        """Relations joining types ``t1`` and ``t2`` in either orientation."""
        return [
            i
            for i, r in enumerate(self.relations)
            if (r.src_type, r.dst_type) in ((t1, t2), (t2, t1))
        ]

    def neighbors(self, vertex: int) -> list[tuple[int, int]]:
        """``(neighbor, relation)`` pairs of every edge touching ``vertex``.

        Edges are undirected, so an edge is reported from both endpoints; a
        self-loop is reported once.
        """
        offsets, other, erel = self._incidence
        lo, hi = offsets[vertex], offsets[vertex + 1]
        return list(zip(other[lo:hi].tolist(), erel[lo:hi].tolist()))


# -- ingestion ---------------------------------------------------------------


def _open_lines(source) -> tuple[Iterator[str], str, TextIO | None]:
    if isinstance(source, (str, os.PathLike)):
        fh = open(source, encoding="utf-8")
        return iter(fh), os.fspath(source), fh
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        return iter(source), getattr(source, "name", "<stream>"), None
    return iter(source), "<lines>", None


def _rows(source, n_fields: int) -> Iterator[tuple[int, list[str], str]]:
    lines, name, fh = _open_lines(source)
    try:
        for lineno, raw in enumerate(lines, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != n_fields:
                raise HINParseError(
                    f"expected {n_fields} tab-separated fields, got {len(fields)}",
                    name, lineno, min(len(fields), n_fields) + 1,
                )
            for col, f in enumerate(fields, start=1):
                if not f.strip():
                    raise HINParseError("empty field", name, lineno, col)
            yield lineno, [f.strip() for f in fields], name
    finally:
        if fh is not None:
            fh.close()


def load_hin(nodes_source, edges_source, schema_source=None, labels_source=None) -> HeterogeneousNetwork:
    """Read a network from TSV sources.

    Sources may be paths, open text files, or iterables of lines.  Relation
    endpoint types come from ``schema_source`` (``relation<TAB>src_type<TAB>
    dst_type``) when given, otherwise from the first edge of each relation.
    Duplicate edge triples collapse to one edge.
    """
    type_names: list[str] = []
    type_lookup: dict[str, int] = {}
    vertex_ids: list[str] = []
    vertex_type: list[int] = []
    index: dict[str, int] = {}

    for lineno, (vid, tname), name in _rows(nodes_source, 2):
        t = type_lookup.get(tname)
        if t is None:
            t = type_lookup[tname] = len(type_names)
            type_names.append(tname)
        if vid in index:
            if vertex_type[index[vid]] != t:
                raise SchemaError(
                    f"{name}:{lineno}: vertex {vid!r} redeclared with type {tname!r}"
                )
            continue
        index[vid] = len(vertex_ids)
        vertex_ids.append(vid)
        vertex_type.append(t)

    relations: list[Relation] = []
    rel_lookup: dict[str, int] = {}
    if schema_source is not None:
        for lineno, (rname, st, dt), name in _rows(schema_source, 3):
            for col, tn in ((2, st), (3, dt)):
                if tn not in type_lookup:
                    raise HINParseError(f"unknown vertex type {tn!r}", name, lineno, col)
            if rname in rel_lookup:
                raise HINParseError(f"relation {rname!r} declared twice", name, lineno, 1)
            rel_lookup[rname] = len(relations)
            relations.append(Relation(rname, type_lookup[st], type_lookup[dt]))
    pinned = schema_source is not None

    seen: set[tuple[int, int, int]] = set()
    src: list[int] = []
    dst: list[int] = []
    rel: list[int] = []
    for lineno, (s, d, rname), name in _rows(edges_source, 3):
        for col, v in ((1, s), (2, d)):
            if v not in index:
                raise ReferentialIntegrityError(
                    f"{name}:{lineno}:{col}: edge endpoint {v!r} is not a declared vertex"
                )
        si, di = index[s], index[d]
        r = rel_lookup.get(rname)
        if r is None:
            if pinned:
                raise SchemaError(f"{name}:{lineno}: relation {rname!r} not in schema")
            r = rel_lookup[rname] = len(relations)
            relations.append(Relation(rname, vertex_type[si], vertex_type[di]))
        decl = relations[r]
        if (vertex_type[si], vertex_type[di]) != (decl.src_type, decl.dst_type):
            raise SchemaError(
                f"{name}:{lineno}: edge ({s}, {d}) has types "
                f"({type_names[vertex_type[si]]}, {type_names[vertex_type[di]]}) but relation "
                f"{rname!r} joins ({type_names[decl.src_type]}, {type_names[decl.dst_type]})"
            )
        key = (si, di, r)
        if key in seen:
            continue
        seen.add(key)
        src.append(si)
        dst.append(di)
        rel.append(r)

    labels = None
    if labels_source is not None:
        collected: dict[str, list[str]] = {}
        for lineno, (vid, cls), name in _rows(labels_source, 2):
            if vid not in index:
                raise ReferentialIntegrityError(
                    f"{name}:{lineno}:1: labelled vertex {vid!r} is not a declared vertex"
                )
            classes = collected.setdefault(vid, [])
            if cls not in classes:
                classes.append(cls)
        labels = {v: tuple(c) for v, c in collected.items()}

    return HeterogeneousNetwork(
        vertex_ids=tuple(vertex_ids),
        vertex_type=np.array(vertex_type, dtype=np.int64),
        type_names=tuple(type_names),
        relations=tuple(relations),
        edge_src=np.array(src, dtype=np.int64),
        edge_dst=np.array(dst, dtype=np.int64),
        edge_rel=np.array(rel, dtype=np.int64),
        labels=labels,
    )


def load_labels(source) -> dict[str, tuple[str, ...]]:
    """Read a ``vertex_id<TAB>class`` file without a network to check against."""
    collected: dict[str, list[str]] = {}
    for _, (vid, cls), _ in _rows(source, 2):
        classes = collected.setdefault(vid, [])
        if cls not in classes:
            classes.append(cls)
    return {v: tuple(c) for v, c in collected.items()}


def schema_summary(hin: HeterogeneousNetwork) -> SchemaSummary:
    type_counts = {name: len(hin.members(t)) for t, name in enumerate(hin.type_names)}
    rel_counts = np.bincount(hin.edge_rel, minlength=len(hin.relations))
    relation_counts = {r.name: int(rel_counts[i]) for i, r in enumerate(hin.relations)}
    density = {}
    for i, r in enumerate(hin.relations):
        cells = len(hin.members(r.src_type)) * len(hin.members(r.dst_type))
        density[r.name] = relation_counts[r.name] / cells if cells else 0.0
    return SchemaSummary(type_counts, relation_counts, density)


def bipartite_matrix(
    hin: HeterogeneousNetwork, relation: str | int, reverse: bool = False
) -> tuple[sp.csr_matrix, list[str], list[str]]:
    """0/1 incidence matrix of one relation plus its row and column id lists.

    Rows index source-type vertices and columns destination-type vertices, in
    type-local order.  ``reverse=True`` traverses the relation from the
    destination side, which yields the transpose.
    """
    r = hin.relation_id(relation) if isinstance(relation, str) else int(relation)
    if not 0 <= r < len(hin.relations):
        raise SchemaError(f"unknown relation index {relation!r}")
    decl = hin.relations[r]
    mask = hin.edge_rel == r
    rows_g, cols_g = hin.edge_src[mask], hin.edge_dst[mask]
    row_t, col_t = decl.src_type, decl.dst_type
    if reverse:
        rows_g, cols_g = cols_g, rows_g
        row_t, col_t = col_t, row_t
    shape = (len(hin.members(row_t)), len(hin.members(col_t)))
    m = sp.csr_matrix(
        (np.ones(len(rows_g)), (hin._local[rows_g], hin._local[cols_g])), shape=shape
    )
    m.sum_duplicates()
    return m, hin.type_vertex_ids(row_t), hin.type_vertex_ids(col_t)


def write_tsv(path, rows: Iterable[Iterable[object]], header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(f"# {header}\n")
        for row in rows:
            fh.write("\t".join(str(x) for x in row) + "\n")
