"""Meta-graph utility assessment from the shape of projected spectra.

Two spectrum features predict embedding quality: how many zero eigenvalues
precede the first positive one (the FPP, one zero per connected component)
and how fast the eigenvalues grow right after it.  Pairwise comparisons are
made on the largest vertex set connected under both projections, where each
spectrum has a single zero.
"""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc

from .hin import HeterogeneousNetwork
from .metagraph import MetaGraph, ProjectedNetwork, parse_metagraph, project
from .spectral import DEFAULT_TOL, ZERO_TOL, Spectrum, spectrum

log = logging.getLogger(__name__)


class InsufficientSpectrumError(ValueError):
    pass


class FPP(NamedTuple):
    p: int
    saturated: bool


def fpp(s: Spectrum, zero_tol: float = ZERO_TOL) -> FPP:
    """Number of leading zero eigenvalues.

    ``saturated`` is set when every computed eigenvalue is zero, in which case
    the true count may exceed ``s.k``.
    """
    lam = np.asarray(s.eigenvalues)
    p = int(np.searchsorted(lam, zero_tol, side="right"))
    return FPP(p, p == len(lam))


def connected_components(pn: ProjectedNetwork, drop_isolated: bool = False) -> list[np.ndarray]:
    """Vertex-index arrays of each component, ordered by smallest member.

    With ``drop_isolated`` degree-zero vertices are left out, matching the
    vertex set a spectrum is computed on.
    """
    adj = sp.csr_matrix(pn.adjacency)
    n, labels = _cc(adj, directed=False)
    parts = [np.flatnonzero(labels == c) for c in range(n)]
    if drop_isolated:
        deg = np.asarray(adj.sum(axis=1)).ravel()
        parts = [p for p in parts if not (len(p) == 1 and deg[p[0]] <= 0)]
    parts.sort(key=lambda p: int(p[0]))
    return parts


def curvature_score(s: Spectrum, m: int = 10, zero_tol: float = ZERO_TOL) -> float:
    """Mean of the first ``m`` eigenvalues after the FPP; higher means steeper growth."""
    p, saturated = fpp(s, zero_tol)
    if saturated:
        return 0.0
    if s.k < p + m:
        raise InsufficientSpectrumError(
            f"{s.metagraph}: curvature over {m} values needs {p + m} eigenvalues, have {s.k}"
        )
    return float(np.mean(s.eigenvalues[p : p + m]))


def lc3(pn1: ProjectedNetwork, pn2: ProjectedNetwork) -> list[str]:
    """Largest vertex set connected in both projections, as sorted vertex ids.

    Starts from the vertices non-isolated in both networks and splits cells by
    the connected components of each induced subgraph in turn until nothing
    changes.  Sets of fewer than two vertices carry no edges and yield ``[]``.
    """
    deg1 = dict(zip(pn1.vertex_ids, pn1.degrees()))
    deg2 = dict(zip(pn2.vertex_ids, pn2.degrees()))
    common = sorted(v for v in deg1 if deg1[v] > 0 and deg2.get(v, 0) > 0)
    if len(common) < 2:
        return []
    idx1 = {v: i for i, v in enumerate(pn1.vertex_ids)}
    idx2 = {v: i for i, v in enumerate(pn2.vertex_ids)}
    a1 = sp.csr_matrix(pn1.adjacency)
    a2 = sp.csr_matrix(pn2.adjacency)

    def split(cell: list[str], adj, idx) -> list[list[str]]:
        if len(cell) == 1:
            return [cell]
        rows = np.array([idx[v] for v in cell])
        sub = adj[rows][:, rows]
        _, labels = _cc(sub, directed=False)
        groups: dict[int, list[str]] = {}
        for v, lab in zip(cell, labels):
            groups.setdefault(int(lab), []).append(v)
        return list(groups.values())

    cells = [common]
    while True:
        refined = [c2 for c in cells for c1 in split(c, a1, idx1) for c2 in split(c1, a2, idx2)]
        if len(refined) == len(cells):
            break
        cells = refined
    # ties between equal-size cells go to the one holding the smallest id
    best = min(cells, key=lambda c: (-len(c), min(c)))
    return sorted(best) if len(best) >= 2 else []


def _annotated(exc: Exception, name: str) -> Exception:
    try:
        new = type(exc)(f"[{name}] {exc}")
    except Exception:
        return exc
    new.__cause__ = exc
    return new


@dataclass(frozen=True)
class NodalDomainSet:
    domains: tuple[tuple[int, ...], ...]
    signs: tuple[int, ...]
    index: int = -1

    def __len__(self) -> int:
        return len(self.domains)


def nodal_domains(pn: ProjectedNetwork, f, zero_tol: float = 0.0, index: int = -1) -> NodalDomainSet:
    """Strong nodal domains of ``f``: maximal connected regions of one strict sign.

    Entries with ``|f| <= zero_tol`` belong to no domain.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (pn.n_vertices,):
        raise ValueError(f"vector of length {f.shape} does not match {pn.n_vertices} vertices")
    adj = sp.csr_matrix(pn.adjacency)
    found = []
    for sign in (1, -1):
        members = np.flatnonzero(sign * f > zero_tol)
        if members.size == 0:
            continue
        sub = adj[members][:, members]
        n, labels = _cc(sub, directed=False)
        for c in range(n):
            found.append((tuple(int(v) for v in members[labels == c]), sign))
    found.sort(key=lambda d: d[0][0])
    return NodalDomainSet(tuple(d for d, _ in found), tuple(s for _, s in found), index)


def eigenvector_on(pn: ProjectedNetwork, s: Spectrum, i: int) -> np.ndarray:
    """Eigenvector ``i`` of ``s`` laid out over all vertices of ``pn`` (zeros where dropped)."""
    pos = {v: j for j, v in enumerate(pn.vertex_ids)}
    out = np.zeros(pn.n_vertices)
    rows = np.array([pos[v] for v in s.vertex_ids], dtype=np.int64)
    out[rows] = s.eigenvectors[:, i]
    return out


def cheeger_check(
    pn: ProjectedNetwork, domains: NodalDomainSet, lam: float, tol: float = 1e-9
) -> tuple[float, bool]:
    """Largest cut-to-volume ratio over the domains against ``sqrt(2 * lam)``."""
    if not len(domains):
        return 0.0, True
    adj = sp.csr_matrix(pn.adjacency)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    worst = 0.0
    for dom in domains.domains:
        rows = np.array(dom, dtype=np.int64)
        vol = float(deg[rows].sum())
        if vol <= 0:
            continue
        inside = float(adj[rows][:, rows].sum())
        worst = max(worst, (vol - inside) / vol)
    bound = float(np.sqrt(2.0 * max(lam, 0.0)))
    return worst, worst <= bound + tol


def select_dims(
    s: Spectrum, budget: int, lambda_cap: float = 1.0, zero_tol: float = ZERO_TOL
) -> list[int]:
    """Eigen-indices with ``zero_tol < λ < lambda_cap``, smallest first, at most ``budget``."""
    lam = np.asarray(s.eigenvalues)
    picked = [int(i) for i in np.flatnonzero((lam > zero_tol) & (lam < lambda_cap))][:budget]
    if not picked:
        warnings.warn(f"{s.metagraph}: no eigenvalue in ({zero_tol}, {lambda_cap})", RuntimeWarning, stacklevel=2)
    return picked


# -- full assessment ---------------------------------------------------------


@dataclass
class AssessConfig:
    k: int | None = None
    extra: int = 50
    m: int = 10
    lambda_cap: float = 1.0
    budget: int = 40
    zero_tol: float = ZERO_TOL
    tol: float = DEFAULT_TOL
    seed: int = 0
    threads: int = 1


@dataclass
class MetagraphAssessment:
    metagraph: str
    n_vertices: int
    n_edges: int
    dropped_isolated: int
    fpp: int
    fpp_saturated: bool
    component_count: int
    curvature: float
    curvature_m: int
    selected_dims: list[int]
    spectrum_curve: list[tuple[int, float]]

    def to_json(self) -> dict:
        return {
            "metagraph": self.metagraph,
            "n_vertices": self.n_vertices,
            "n_edges": self.n_edges,
            "dropped_isolated": self.dropped_isolated,
            "fpp": self.fpp,
            "fpp_saturated": self.fpp_saturated,
            "component_count": self.component_count,
            "curvature": self.curvature,
            "curvature_m": self.curvature_m,
            "selected_dims": self.selected_dims,
            "spectrum_curve": [[i, lam] for i, lam in self.spectrum_curve],
        }


@dataclass
class PairAssessment:
    first: str
    second: str
    lc3_size: int
    curvature_first: float
    curvature_second: float

    def to_json(self) -> dict:
        return {
            "first": self.first,
            "second": self.second,
            "lc3_size": self.lc3_size,
            "curvature_first": self.curvature_first,
            "curvature_second": self.curvature_second,
        }


@dataclass
class AssessmentReport:
    entries: list[MetagraphAssessment]
    pairwise: list[PairAssessment]
    config: AssessConfig
    projections: dict[str, ProjectedNetwork] = field(default_factory=dict, repr=False)
    spectra: dict[str, Spectrum] = field(default_factory=dict, repr=False)

    @property
    def ranking(self) -> list[str]:
        ordered = sorted(self.entries, key=lambda e: (e.fpp, -e.curvature, e.metagraph))
        return [e.metagraph for e in ordered]

    def entry(self, name: str) -> MetagraphAssessment:
        for e in self.entries:
            if e.metagraph == name:
                return e
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "ranking": self.ranking,
            "metagraphs": [e.to_json() for e in self.entries],
            "pairwise": [p.to_json() for p in self.pairwise],
            "config": {k: v for k, v in vars(self.config).items() if k != "threads"},
        }

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def _spectrum_for(pn: ProjectedNetwork, cfg: AssessConfig) -> tuple[Spectrum, int]:
    comps = connected_components(pn, drop_isolated=True)
    n_kept = sum(len(c) for c in comps)
    k = cfg.k if cfg.k is not None else len(comps) + cfg.extra
    k = max(1, min(k, n_kept))
    return spectrum(pn, k, tol=cfg.tol, seed=cfg.seed), len(comps)


def _edgeless(pn: ProjectedNetwork) -> tuple[MetagraphAssessment, Spectrum]:
    # every vertex is its own component: report a saturated FPP so it ranks last
    s = Spectrum(
        eigenvalues=np.zeros(0),
        eigenvectors=np.zeros((0, 0)),
        vertex_ids=(),
        residual_norms=np.zeros(0),
        dropped_isolated=tuple(pn.vertex_ids),
        metagraph=pn.metagraph,
        all_vertex_ids=tuple(pn.vertex_ids),
    )
    log.warning("%s: projection has no edges", pn.metagraph)
    entry = MetagraphAssessment(
        metagraph=pn.metagraph,
        n_vertices=pn.n_vertices,
        n_edges=0,
        dropped_isolated=pn.n_vertices,
        fpp=pn.n_vertices,
        fpp_saturated=True,
        component_count=pn.n_vertices,
        curvature=0.0,
        curvature_m=0,
        selected_dims=[],
        spectrum_curve=[],
    )
    return entry, s


def _assess_one(pn: ProjectedNetwork, cfg: AssessConfig) -> tuple[MetagraphAssessment, Spectrum]:
    if pn.n_edges == 0:
        return _edgeless(pn)
    try:
        s, n_comp = _spectrum_for(pn, cfg)
        p, saturated = fpp(s, cfg.zero_tol)
        m = min(cfg.m, s.k - p)
        if m < cfg.m and not saturated:
            log.warning("%s: curvature over %d eigenvalues instead of %d", pn.metagraph, m, cfg.m)
        curv = curvature_score(s, m, cfg.zero_tol) if m > 0 else 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            dims = select_dims(s, cfg.budget, cfg.lambda_cap, cfg.zero_tol)
        if not dims:
            log.warning("%s: no eigenvalue below the cap %.3g", pn.metagraph, cfg.lambda_cap)
    except Exception as exc:
        raise _annotated(exc, pn.metagraph)
    entry = MetagraphAssessment(
        metagraph=pn.metagraph,
        n_vertices=pn.n_vertices,
        n_edges=pn.n_edges,
        dropped_isolated=len(s.dropped_isolated),
        fpp=p,
        fpp_saturated=saturated,
        component_count=n_comp,
        curvature=curv,
        curvature_m=m,
        selected_dims=dims,
        spectrum_curve=[(i + 1, float(v)) for i, v in enumerate(s.eigenvalues)],
    )
    return entry, s


def _aligned_curvature(pn: ProjectedNetwork, common: list[str], cfg: AssessConfig) -> float:
    pos = {v: i for i, v in enumerate(pn.vertex_ids)}
    sub = pn.subnetwork([pos[v] for v in common])
    k = min(sub.n_vertices, cfg.m + 1)
    s = spectrum(sub, k, tol=cfg.tol, seed=cfg.seed)
    p, _ = fpp(s, cfg.zero_tol)
    m = min(cfg.m, s.k - p)
    return curvature_score(s, m, cfg.zero_tol) if m > 0 else 0.0


def assess_projections(projections: Sequence[ProjectedNetwork], config: AssessConfig | None = None) -> AssessmentReport:
    cfg = config or AssessConfig()
    names = [pn.metagraph for pn in projections]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate meta-graph names in {names}")
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(lambda pn: _assess_one(pn, cfg), projections))
    else:
        results = [_assess_one(pn, cfg) for pn in projections]
    entries = [r[0] for r in results]
    pairs = []
    for pn1, pn2 in combinations(projections, 2):
        common = lc3(pn1, pn2)
        if common:
            c1 = _aligned_curvature(pn1, common, cfg)
            c2 = _aligned_curvature(pn2, common, cfg)
        else:
            c1 = c2 = 0.0
        pairs.append(PairAssessment(pn1.metagraph, pn2.metagraph, len(common), c1, c2))
    return AssessmentReport(
        entries,
        pairs,
        cfg,
        projections={pn.metagraph: pn for pn in projections},
        spectra={e.metagraph: s for e, (_, s) in zip(entries, results)},
    )


def assess(
    hin: HeterogeneousNetwork,
    metagraphs: Sequence[str | MetaGraph],
    k: int | None = None,
    config: AssessConfig | None = None,
) -> AssessmentReport:
    """Project through each meta-graph and report FPP, curvature and LC3 alignment."""
    cfg = config or AssessConfig()
    if k is not None:
        cfg = AssessConfig(**{**vars(cfg), "k": k})
    projections = []
    for mg in metagraphs:
        try:
            parsed = parse_metagraph(mg, hin) if isinstance(mg, str) else mg
            projections.append(project(hin, parsed))
        except Exception as exc:
            raise _annotated(exc, str(mg))
    return assess_projections(projections, cfg)


def write_spectrum_curves(report: AssessmentReport, out_dir) -> list:
    import os

    paths = []
    for e in report.entries:
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in e.metagraph)
        path = os.path.join(out_dir, f"spectrum_{safe}.tsv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# index\tlambda\n")
            for i, lam in e.spectrum_curve:
                fh.write(f"{i}\t{lam!r}\n")
        paths.append(path)
    return paths
