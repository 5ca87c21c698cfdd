"""Normalized Laplacian spectra of projected networks.

The solver runs Lanczos with full reorthogonalization on the shifted operator
``2I - L`` (whose largest eigenvalues are the smallest of ``L``).  Converged
Ritz vectors are locked and later runs work in their orthogonal complement,
which is what lets repeated eigenvalues (one zero per connected component)
come out with full multiplicity.  A closing verification run in the
complement proves nothing larger was missed.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .metagraph import ProjectedNetwork

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
ZERO_TOL = 1e-8


class EmptySpectrumError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Leading eigenpairs of a normalized Laplacian.

    ``vertex_ids`` lists the retained (non-isolated) vertices in row order of
    ``eigenvectors``; ``all_vertex_ids`` is the full vertex universe of the
    projected network so embeddings can be zero-filled for dropped vertices.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    vertex_ids: tuple[str, ...]
    residual_norms: np.ndarray
    dropped_isolated: tuple[str, ...]
    metagraph: str = ""
    all_vertex_ids: tuple[str, ...] = ()
    # locked basis kept for incremental growth; not part of the public result
    _basis: np.ndarray | None = field(default=None, repr=False)
    _basis_values: np.ndarray | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Per-vertex rows; ``columns`` records ``(metagraph, eigenvalue)`` per dimension."""

    rows: np.ndarray
    vertex_ids: tuple[str, ...]
    columns: tuple[tuple[str, float], ...]
    metagraph: str = ""

    @property
    def k(self) -> int:
        return self.rows.shape[1]


def normalized_laplacian(pn: ProjectedNetwork) -> tuple[sp.csr_matrix, tuple[str, ...], tuple[str, ...]]:
    """``L = I - D^-1/2 A D^-1/2`` over the vertices with positive degree.

    Returns the Laplacian, the retained vertex ids, and the dropped isolated ids.
    """
    a = sp.csr_matrix(pn.adjacency, dtype=np.float64)
    deg = np.asarray(a.sum(axis=1)).ravel()
    keep = np.flatnonzero(deg > 0)
    dropped = tuple(pn.vertex_ids[i] for i in np.flatnonzero(deg <= 0))
    if keep.size == 0:
        raise EmptySpectrumError(f"{pn.metagraph}: every vertex is isolated")
    a = a[keep][:, keep]
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg[keep]))
    norm_adj = inv_sqrt @ a @ inv_sqrt
    norm_adj = (norm_adj + norm_adj.T) * 0.5
    lap = sp.identity(len(keep), format="csr") - norm_adj
    return sp.csr_matrix(lap), tuple(pn.vertex_ids[i] for i in keep), dropped


def _orthogonalize(w: np.ndarray, *bases: np.ndarray) -> np.ndarray:
    for _ in range(2):
        for b in bases:
            if b.shape[1]:
                w = w - b @ (b.T @ w)
    return w


def _lanczos_run(apply, n, locked, v0, need, tol, max_basis, budget):
    """One thick-restart Lanczos run in the complement of ``locked``.

    The basis is extended with full reorthogonalization; when it reaches
    ``max_basis`` it is compressed to the wanted Ritz vectors plus the current
    residual direction and extension resumes.  Stops once the top ``need``
    Ritz pairs have residual below ``tol``, on breakdown (the basis spans an
    invariant subspace, so every Ritz pair is exact), or when ``budget``
    operator applications are spent.  Returns Ritz values (descending), Ritz
    vectors, residual norms, and the number of applications used.
    """
    free = n - locked.shape[1]
    q = _orthogonalize(v0, locked)
    norm = np.linalg.norm(q)
    if free <= 0 or norm < 1e-12:
        return np.empty(0), np.empty((n, 0)), np.empty(0), 0
    max_basis = max(2, min(max_basis, free))
    basis = [q / norm]
    images: list[np.ndarray] = []
    used = 0
    while True:
        breakdown = False
        while len(images) < max_basis and used < budget:
            v = basis[len(images)]
            w = _orthogonalize(apply(v), locked)
            used += 1
            images.append(w)
            if len(basis) >= free:
                breakdown = True
                break
            r = _orthogonalize(w, np.column_stack(basis), locked)
            beta = np.linalg.norm(r)
            if beta <= 1e-10 * max(1.0, np.linalg.norm(w)):
                breakdown = True
                break
            basis.append(r / beta)
        m = len(images)
        v_m = np.column_stack(basis[:m])
        av = np.column_stack(images)
        h = v_m.T @ av
        theta, s = np.linalg.eigh((h + h.T) * 0.5)
        order = np.argsort(theta)[::-1]
        theta, s = theta[order], s[:, order]
        ritz = v_m @ s
        resid = np.linalg.norm(av @ s - ritz * theta, axis=0)
        top = min(need, m)
        if breakdown or np.all(resid[:top] <= tol) or used >= budget:
            return theta, ritz, resid, used
        # compress: wanted Ritz vectors plus the residual direction
        keep = min(m - 1, max(top + top // 2 + 2, 4))
        images = list((av @ s[:, :keep]).T)
        nxt = basis[m] if len(basis) > m else None
        basis = list(ritz[:, :keep].T)
        if nxt is not None:
            basis.append(nxt)
        else:
            extra = _orthogonalize(np.random.default_rng(used).standard_normal(n), np.column_stack(basis), locked)
            basis.append(extra / np.linalg.norm(extra))


def _solve(lap, k, tol, seed, max_iter, locked=None, locked_values=None):
    n = lap.shape[0]
    shift = 2.0 * sp.identity(n, format="csr") - lap

    def apply(x):
        return shift @ x

    rng = np.random.default_rng(seed)
    locked = np.empty((n, 0)) if locked is None else locked
    values = np.empty(0) if locked_values is None else locked_values
    budget = max_iter
    k = min(k, n)

    def lock(theta, vecs, resid, floor=-np.inf):
        nonlocal locked, values
        good = (resid <= tol) & (theta > floor)
        if not np.any(good):
            return 0
        new = _orthogonalize(vecs[:, good], locked)
        q, r = np.linalg.qr(new)
        keep = np.abs(np.diag(r)) > 1e-8
        locked = np.hstack([locked, q[:, keep]])
        values = np.concatenate([values, theta[good][keep]])
        return int(keep.sum())

    last_resid = None
    while locked.shape[1] < n:
        verifying = locked.shape[1] >= k
        need = 1 if verifying else k - locked.shape[1]
        kth = np.sort(values)[::-1][k - 1] if verifying else -np.inf
        if budget <= 0:
            raise ConvergenceError(
                f"Lanczos did not converge {k} eigenpairs within {max_iter} operator applications",
                residuals=last_resid,
            )
        theta, vecs, resid, used = _lanczos_run(
            apply, n, locked, rng.standard_normal(n), need, tol, max(2 * need + 20, 40), budget
        )
        budget -= used
        last_resid = resid
        if theta.size == 0:
            break
        if verifying:
            if theta[0] <= kth + tol and resid[0] <= tol:
                break
            lock(theta, vecs, resid, floor=kth + tol)
        else:
            lock(theta, vecs, resid)

    # Rayleigh-Ritz over the locked basis tidies residuals and orthogonality
    proj = locked.T @ (shift @ locked)
    vals, rot = np.linalg.eigh((proj + proj.T) * 0.5)
    order = np.argsort(vals)[::-1]
    basis = locked @ rot[:, order]
    return 2.0 - vals[order], basis


def spectrum(
    pn: ProjectedNetwork,
    k: int,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    max_iter: int | None = None,
) -> Spectrum:
    """The ``k`` smallest eigenpairs of the normalized Laplacian of ``pn``."""
    lap, kept, dropped = normalized_laplacian(pn)
    n = lap.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if max_iter is None:
        max_iter = default_max_iter(k, n)
    lam, vecs = _solve(lap, k, tol, seed, max_iter)
    return _package(pn, lap, kept, dropped, lam, vecs, k, tol)


def default_max_iter(k: int, n: int) -> int:
    return 50 * k + 4 * n


def _package(pn, lap, kept, dropped, lam_all, vecs_all, k, tol) -> Spectrum:
    lam = lam_all[:k].copy()
    vecs = vecs_all[:, :k].copy()
    # deterministic sign: largest-magnitude entry positive
    for j in range(vecs.shape[1]):
        i = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[i, j] < 0:
            vecs[:, j] = -vecs[:, j]
    resid = np.linalg.norm(lap @ vecs - vecs * lam, axis=0)
    if np.any(resid > tol):
        raise ConvergenceError(
            f"{pn.metagraph}: residuals {resid.max():.2e} above tolerance {tol:.1e}", residuals=resid
        )
    for arr in (lam, vecs, resid):
        arr.setflags(write=False)
    return Spectrum(
        eigenvalues=lam,
        eigenvectors=vecs,
        vertex_ids=kept,
        residual_norms=resid,
        dropped_isolated=dropped,
        metagraph=pn.metagraph,
        all_vertex_ids=pn.vertex_ids,
        _basis=vecs_all,
        _basis_values=lam_all,
    )


def extend_spectrum(
    pn: ProjectedNetwork, s: Spectrum, extra: int, tol: float = DEFAULT_TOL, seed: int = 1
) -> Spectrum:
    """Grow ``s`` by ``extra`` eigenpairs, reusing the already locked basis."""
    lap, kept, dropped = normalized_laplacian(pn)
    if kept != s.vertex_ids:
        raise ValueError("spectrum does not belong to this projected network")
    n = lap.shape[0]
    k = min(s.k + extra, n)
    locked = np.array(s._basis) if s._basis is not None else np.array(s.eigenvectors)
    values = 2.0 - (np.array(s._basis_values) if s._basis_values is not None else np.array(s.eigenvalues))
    lam, vecs = _solve(lap, k, tol, seed, default_max_iter(extra, n), locked, values)
    return _package(pn, lap, kept, dropped, lam, vecs, k, tol)


def spectral_embedding(s: Spectrum, dims=None) -> EmbeddingMatrix:
    """Rows are vertices of ``s``; columns are the chosen eigenvectors."""
    dims = list(range(s.k)) if dims is None else [int(d) for d in dims]
    for d in dims:
        if not 0 <= d < s.k:
            raise IndexError(f"eigen-index {d} outside spectrum of size {s.k}")
    rows = np.array(s.eigenvectors[:, dims], dtype=np.float64).reshape(s.n_vertices, len(dims))
    cols = tuple((s.metagraph, float(s.eigenvalues[d])) for d in dims)
    return EmbeddingMatrix(rows, s.vertex_ids, cols, s.metagraph)


def pca_loss(s: Spectrum, k: int) -> float:
    """Optimal rank-``k`` loss of approximating ``2I - L``: sum of ``(2 - λ)^2`` beyond ``k``."""
    if s.k != s.n_vertices:
        raise ValueError("pca_loss needs the full spectrum")
    if not 0 <= k <= s.k:
        raise ValueError(f"k must lie in [0, {s.k}], got {k}")
    tail = 2.0 - np.asarray(s.eigenvalues[k:])
    return float(np.sum(tail**2))


def pca_residual(pn: ProjectedNetwork, s: Spectrum, k: int) -> float:
    """``||(2I - L) - H W H^T||_F^2`` for the first ``k`` eigenvectors of ``s``."""
    lap, _, _ = normalized_laplacian(pn)
    target = 2.0 * np.eye(lap.shape[0]) - lap.toarray()
    h = np.asarray(s.eigenvectors[:, :k])
    w = 2.0 - np.asarray(s.eigenvalues[:k])
    return float(np.linalg.norm(target - (h * w) @ h.T, "fro") ** 2)


# -- export ------------------------------------------------------------------


def write_spectrum(s: Spectrum, json_path, vectors_path) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "metagraph": s.metagraph,
                "eigenvalues": [float(x) for x in s.eigenvalues],
                "dropped_isolated": list(s.dropped_isolated),
                "residuals": [float(x) for x in s.residual_norms],
                "vertices": list(s.vertex_ids),
                "all_vertices": list(s.all_vertex_ids),
                "eigenvectors": {
                    "path": os.path.basename(str(vectors_path)),
                    "shape": list(s.eigenvectors.shape),
                    "dtype": "<f8",
                    "order": "row-major",
                },
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    np.ascontiguousarray(s.eigenvectors, dtype="<f8").tofile(vectors_path)


def read_spectrum(json_path, vectors_path=None) -> Spectrum:
    with open(json_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    info = meta["eigenvectors"]
    if vectors_path is None:
        # stored relative to the header file
        vectors_path = os.path.join(os.path.dirname(os.path.abspath(json_path)), info["path"])
    vecs = np.fromfile(vectors_path, dtype="<f8").reshape(info["shape"])
    return Spectrum(
        eigenvalues=np.array(meta["eigenvalues"]),
        eigenvectors=vecs,
        vertex_ids=tuple(meta["vertices"]),
        residual_norms=np.array(meta["residuals"]),
        dropped_isolated=tuple(meta["dropped_isolated"]),
        metagraph=meta["metagraph"],
        all_vertex_ids=tuple(meta.get("all_vertices", ())),
    )
