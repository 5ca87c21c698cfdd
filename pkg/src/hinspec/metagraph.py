"""Meta-graph expressions and projection of a HIN onto its anchor type.

Expressions are chains of vertex types separated by ``-``; a parenthesised
unit holds parallel arms separated by ``|``::

    A-P-V-P-A        a meta-path
    M-(U|D)-M        two movies sharing a user and a director
    A-(P-P)-A        a one-armed group, identical to A-P-P-A

When no ``-`` appears and every type name is one character, the compact
notation ``APVPA`` / ``M(UD)M`` is accepted; there each letter inside
parentheses is its own arm.

An instance is an anchored homomorphism of the pattern into the HIN:
intermediate slots need not map to distinct vertices, and parallel arms
multiply.  The projected weight of a pair ``{u, v}`` counts instances with
endpoints ``u`` and ``v``; for patterns that read the same reversed the two
orientations describe the same instance and are counted once.
"""

from __future__ import annotations

import json
import logging
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.sparse as sp

from .hin import HeterogeneousNetwork, SchemaError, bipartite_matrix

log = logging.getLogger(__name__)

EXACT_LIMIT = float(2**53)


class MetaGraphSyntaxError(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class Branch:
    arms: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "arms", tuple(sorted(tuple(a) for a in self.arms)))


Stage = Union[str, Branch]


@dataclass(frozen=True)
class MetaGraph:
    stages: tuple[Stage, ...]

    def __post_init__(self) -> None:
        st = self.stages
        if len(st) < 2 or not isinstance(st[0], str) or not isinstance(st[-1], str):
            raise MetaGraphSyntaxError("a meta-graph starts and ends with a vertex type")
        if st[0] != st[-1]:
            raise MetaGraphSyntaxError(
                f"endpoints must share one anchor type, got {st[0]!r} and {st[-1]!r}"
            )
        for i, s in enumerate(st):
            if isinstance(s, Branch):
                if not s.arms or any(len(a) == 0 for a in s.arms):
                    raise MetaGraphSyntaxError("empty branch arm")
                if isinstance(st[i + 1], Branch):
                    raise MetaGraphSyntaxError("two parallel groups must be separated by a vertex type")

    @property
    def anchor_type(self) -> str:
        return self.stages[0]  # type: ignore[return-value]

    @property
    def display_name(self) -> str:
        parts = []
        for s in self.stages:
            if isinstance(s, Branch):
                parts.append("(" + "|".join("-".join(a) for a in s.arms) + ")")
            else:
                parts.append(s)
        return "-".join(parts)

    def reversed(self) -> "MetaGraph":
        return MetaGraph(
            tuple(
                Branch(tuple(a[::-1] for a in s.arms)) if isinstance(s, Branch) else s
                for s in reversed(self.stages)
            )
        )

    @property
    def is_palindrome(self) -> bool:
        return self.reversed() == self

    @property
    def is_path(self) -> bool:
        return not any(isinstance(s, Branch) for s in self.stages)

    def type_names(self) -> set[str]:
        out: set[str] = set()
        for s in self.stages:
            if isinstance(s, Branch):
                for a in s.arms:
                    out.update(a)
            else:
                out.add(s)
        return out

    def pattern_edges(self) -> list[tuple[str, str]]:
        """Adjacent type pairs the schema must connect."""
        pairs = []
        for i in range(len(self.stages) - 1):
            cur, nxt = self.stages[i], self.stages[i + 1]
            if isinstance(nxt, Branch):
                after = self.stages[i + 2]
                for arm in nxt.arms:
                    chain = (cur, *arm, after)
                    pairs.extend(zip(chain[:-1], chain[1:]))
            elif isinstance(cur, str):
                pairs.append((cur, nxt))
        return pairs

    def __str__(self) -> str:
        return self.display_name


# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:([A-Za-z0-9_.:]+)|(.))")


def _tokens(expr: str) -> list[str]:
    out = []
    for m in _TOKEN.finditer(expr):
        if m.group(1):
            out.append(m.group(1))
        elif m.group(2) and not m.group(2).isspace():
            out.append(m.group(2))
    return out


def _compact_tokens(expr: str) -> list[str]:
    out: list[str] = []
    depth = 0
    for ch in expr.replace(" ", ""):
        if ch == "(":
            if out:
                out.append("-")
            out.append(ch)
            depth += 1
        elif ch == ")":
            out.append(ch)
            depth -= 1
        else:
            if out and out[-1] != "(":
                out.append("|" if depth else "-")
            out.append(ch)
    return out


def parse_metagraph(expr: str, hin: HeterogeneousNetwork | None = None) -> MetaGraph:
    """Parse an expression; with ``hin`` also check it against the schema."""
    text = expr.strip()
    if not text:
        raise MetaGraphSyntaxError("empty meta-graph expression")
    toks = _tokens(text) if "-" in text else _compact_tokens(text)
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else None

    def take(expected=None):
        nonlocal pos
        t = peek()
        if t is None or (expected is not None and t != expected):
            raise MetaGraphSyntaxError(
                f"{expr!r}: expected {expected or 'a type'} at token {pos + 1}, got {t!r}"
            )
        pos += 1
        return t

    def type_name():
        t = take()
        if t in ("-", "(", ")", "|"):
            raise MetaGraphSyntaxError(f"{expr!r}: expected a type name at token {pos}, got {t!r}")
        return t

    def arm():
        names = [type_name()]
        while peek() == "-":
            take("-")
            names.append(type_name())
        return tuple(names)

    stages: list[Stage] = [type_name()]
    while peek() is not None:
        take("-")
        if peek() == "(":
            take("(")
            arms = [arm()]
            while peek() == "|":
                take("|")
                arms.append(arm())
            take(")")
            if len(arms) == 1:
                stages.extend(arms[0])
            else:
                stages.append(Branch(tuple(arms)))
        else:
            stages.append(type_name())
    mg = MetaGraph(tuple(stages))
    if hin is not None:
        validate(mg, hin)
    return mg


def validate(mg: MetaGraph, hin: HeterogeneousNetwork) -> None:
    for name in sorted(mg.type_names()):
        if name not in hin.type_names:
            raise SchemaError(f"{mg.display_name}: unknown vertex type {name!r}")
    for a, b in mg.pattern_edges():
        if not hin.relations_between(hin.type_id(a), hin.type_id(b)):
            raise SchemaError(f"{mg.display_name}: no relation joins {a!r} and {b!r}")


def read_metagraph_list(path) -> list[str]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                out.append(line)
    return out


# -- projected network -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProjectedNetwork:
    """Weighted homogeneous network over every vertex of the anchor type."""

    vertex_ids: tuple[str, ...]
    adjacency: sp.csr_matrix
    metagraph: str

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)

    @property
    def n_edges(self) -> int:
        return int(sp.triu(self.adjacency, k=1).nnz)

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def subnetwork(self, indices) -> "ProjectedNetwork":
        idx = np.asarray(indices, dtype=np.int64)
        sub = self.adjacency[idx][:, idx].tocsr()
        return ProjectedNetwork(tuple(self.vertex_ids[i] for i in idx), sub, self.metagraph)

    @classmethod
    def from_dense(cls, a, vertex_ids=None, metagraph: str = "<dense>") -> "ProjectedNetwork":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {a.shape}")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if (a < 0).any() or not np.isfinite(a).all():
            raise ValueError("adjacency weights must be finite and non-negative")
        if vertex_ids is None:
            vertex_ids = tuple(str(i) for i in range(a.shape[0]))
        return cls(tuple(vertex_ids), _finalize(sp.csr_matrix(a), symmetrize=False), metagraph)


def _finalize(m: sp.spmatrix, symmetrize: bool) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.float64)
    if symmetrize:
        m = m + m.T
    m = m.tolil()
    m.setdiag(0)
    m = m.tocsr()
    m.eliminate_zeros()
    if m.nnz and m.data.max() > EXACT_LIMIT:
        n_big = int((m.data > EXACT_LIMIT).sum())
        warnings.warn(
            f"{n_big} projected weights exceed 2**53 and were saturated", RuntimeWarning, stacklevel=3
        )
        m.data = np.minimum(m.data, EXACT_LIMIT)
    m.sort_indices()
    return m


def type_adjacency(hin: HeterogeneousNetwork, a: str, b: str) -> sp.csr_matrix:
    """Edge multiplicities between vertices of types ``a`` and ``b``.

    Every relation joining the two types contributes; for a same-type relation
    an edge counts in both directions and a self-loop once.
    """
    ta, tb = hin.type_id(a), hin.type_id(b)
    shape = (len(hin.members(ta)), len(hin.members(tb)))
    out = sp.csr_matrix(shape, dtype=np.float64)
    for r in hin.relations_between(ta, tb):
        decl = hin.relations[r]
        m, _, _ = bipartite_matrix(hin, r)
        if ta == tb:
            out = out + m + m.T - sp.diags(m.diagonal())
        elif decl.src_type == ta:
            out = out + m
        else:
            out = out + m.T
    return sp.csr_matrix(out)


def _saturate(m: sp.csr_matrix) -> sp.csr_matrix:
    if m.nnz and m.data.max() > EXACT_LIMIT:
        warnings.warn("instance counts exceed 2**53 and were saturated", RuntimeWarning, stacklevel=3)
        m = m.copy()
        m.data = np.minimum(m.data, EXACT_LIMIT)
    return m


def project(hin: HeterogeneousNetwork, mg: MetaGraph | str) -> ProjectedNetwork:
    """Project ``hin`` through ``mg`` by sparse matrix algebra.

    Consecutive types multiply their type adjacency matrices; parallel arms
    between the same two vertices multiply element-wise.
    """
    if isinstance(mg, str):
        mg = parse_metagraph(mg, hin)
    else:
        validate(mg, hin)
    adj = {}

    def t(a, b):
        if (a, b) not in adj:
            adj[(a, b)] = type_adjacency(hin, a, b)
        return adj[(a, b)]

    anchor = mg.anchor_type
    n = len(hin.members(hin.type_id(anchor)))
    counts = sp.identity(n, format="csr", dtype=np.float64)
    stages = mg.stages
    i = 1
    while i < len(stages):
        prev, cur = stages[i - 1], stages[i]
        if isinstance(cur, Branch):
            nxt = stages[i + 1]
            joint = None
            for arm in cur.arms:
                chain = (prev, *arm, nxt)
                m = t(chain[0], chain[1])
                for x, y in zip(chain[1:-1], chain[2:]):
                    m = _saturate(m @ t(x, y))
                joint = m if joint is None else _saturate(joint.multiply(m).tocsr())
            counts = _saturate(counts @ joint)
            i += 2
        else:
            counts = _saturate(counts @ t(prev, cur))
            i += 1
    weights = _finalize(counts, symmetrize=not mg.is_palindrome)
    return ProjectedNetwork(tuple(hin.type_vertex_ids(hin.type_id(anchor))), weights, mg.display_name)


def project_bruteforce(
    hin: HeterogeneousNetwork, mg: MetaGraph | str, max_per_pair: int = 10_000
) -> ProjectedNetwork:
    """Project by explicit depth-first enumeration of slot assignments.

    Independent of the matrix route: it walks the HIN's incidence lists.
    Raises :class:`BudgetExceeded` when more than ``max_per_pair`` complete
    assignments connect any single pair of anchors.
    """
    if isinstance(mg, str):
        mg = parse_metagraph(mg, hin)
    else:
        validate(mg, hin)

    # flatten the pattern into slots; constraints point at earlier slots
    slot_type: list[int] = []
    constraints: list[list[int]] = []

    def add(type_name, preds):
        slot_type.append(hin.type_id(type_name))
        constraints.append(list(preds))
        return len(slot_type) - 1

    stages = mg.stages
    last = add(stages[0], [])
    i = 1
    while i < len(stages):
        cur = stages[i]
        if isinstance(cur, Branch):
            ends = []
            for arm in cur.arms:
                s = last
                for name in arm:
                    s = add(name, [s])
                ends.append(s)
            last = add(stages[i + 1], ends)
            i += 2
        else:
            last = add(cur, [last])
            i += 1
    final = last

    nbrs = [[v for v, _ in hin.neighbors(u)] for u in range(hin.n_vertices)]
    mult: dict[tuple[int, int], int] = defaultdict(int)
    for u in range(hin.n_vertices):
        for v in nbrs[u]:
            mult[(u, v)] += 1

    anchors = hin.members(slot_type[0])
    local = {int(g): k for k, g in enumerate(anchors)}
    counts: dict[tuple[int, int], int] = defaultdict(int)
    visits: dict[tuple[int, int], int] = defaultdict(int)
    assign = [0] * len(slot_type)

    def dfs(slot: int, weight: int, start: int) -> None:
        if slot == len(slot_type):
            end = assign[final]
            key = (start, end)
            visits[key] += 1
            if visits[key] > max_per_pair:
                raise BudgetExceeded(
                    f"{mg.display_name}: more than {max_per_pair} instances between "
                    f"{hin.vertex_ids[start]!r} and {hin.vertex_ids[end]!r}"
                )
            counts[key] += weight
            return
        first, *rest = constraints[slot]
        for cand in nbrs[assign[first]]:
            if hin.vertex_type[cand] != slot_type[slot]:
                continue
            w = weight
            for c in rest:
                w *= mult.get((assign[c], cand), 0)
                if not w:
                    break
            if not w:
                continue
            assign[slot] = cand
            dfs(slot + 1, w, start)

    for a in anchors:
        assign[0] = int(a)
        dfs(1, 1, int(a))

    n = len(anchors)
    rows, cols, vals = [], [], []
    for (s, e), c in counts.items():
        if s == e:
            continue
        rows.append(local[s])
        cols.append(local[e])
        vals.append(float(c))
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return ProjectedNetwork(
        tuple(hin.type_vertex_ids(slot_type[0])),
        _finalize(m, symmetrize=not mg.is_palindrome),
        mg.display_name,
    )


# -- export ------------------------------------------------------------------


def _fmt_weight(w: float) -> str:
    return str(int(w)) if float(w).is_integer() else repr(float(w))


def write_projected(pn: ProjectedNetwork, tsv_path, json_path) -> None:
    upper = sp.triu(pn.adjacency, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    with open(tsv_path, "w", encoding="utf-8", newline="\n") as fh:
        for k in order:
            i, j, w = upper.row[k], upper.col[k], upper.data[k]
            fh.write(f"{pn.vertex_ids[i]}\t{pn.vertex_ids[j]}\t{_fmt_weight(w)}\n")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "metagraph": pn.metagraph,
                "vertex_count": pn.n_vertices,
                "edge_count": pn.n_edges,
                "vertices": list(pn.vertex_ids),
            },
            fh,
            indent=2,
        )
        fh.write("\n")


def read_projected(tsv_path, json_path) -> ProjectedNetwork:
    with open(json_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    ids = tuple(meta["vertices"])
    index = {v: i for i, v in enumerate(ids)}
    rows, cols, vals = [], [], []
    with open(tsv_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            s, d, w = line.rstrip("\n").split("\t")
            rows.append(index[s])
            cols.append(index[d])
            vals.append(float(w))
    n = len(ids)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return ProjectedNetwork(ids, _finalize(m, symmetrize=True), meta["metagraph"])
