"""Random fixtures and dense oracles shared by the test modules."""

import numpy as np
import scipy.sparse as sp
from scipy.linalg import subspace_angles
from scipy.sparse.csgraph import connected_components as _cc

from hinspec.hin import SchemaError, load_hin
from hinspec.metagraph import MetaGraphSyntaxError, ProjectedNetwork, parse_metagraph

DENSITIES = (0.005, 0.01, 0.02, 0.05, 0.2, 0.5)


def random_weighted(rng, n, p, lo=0.1, hi=5.0):
    a = (rng.random((n, n)) < p) * rng.uniform(lo, hi, (n, n))
    a = np.triu(a, 1)
    return a + a.T


def random_graphs(seed, count, n_max=200, densities=DENSITIES, connected=False, n_min=5):
    """``count`` non-empty weighted graphs as ProjectedNetworks."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(n_min, n_max + 1))
        a = random_weighted(rng, n, float(rng.choice(densities)))
        if a.sum() == 0:
            continue
        if connected and _cc(sp.csr_matrix(a), directed=False)[0] != 1:
            continue
        out.append(ProjectedNetwork.from_dense(a))
    return out


def dense_laplacian(a):
    """Normalized Laplacian over non-isolated vertices, straight from the definition."""
    a = np.asarray(a, dtype=float)
    d = a.sum(axis=1)
    keep = d > 0
    a = a[np.ix_(keep, keep)]
    dm = 1.0 / np.sqrt(d[keep])
    return np.eye(len(a)) - dm[:, None] * a * dm[None, :], keep


def traversal_components(a, keep):
    """Component count by breadth-first search, independent of scipy."""
    a = np.asarray(a)[np.ix_(keep, keep)]
    n = len(a)
    seen = np.zeros(n, dtype=bool)
    count = 0
    for s in range(n):
        if seen[s]:
            continue
        count += 1
        stack = [s]
        seen[s] = True
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(a[u]):
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
    return count


def max_cluster_angle(lam_dense, vec_dense, lam, vecs, gap=1e-6):
    """Largest principal angle between computed vectors and the dense eigenspace they belong to.

    Eigenvalues closer than ``gap`` are treated as one eigenspace, so any
    rotation inside a degenerate space is accepted.
    """
    worst = 0.0
    k = len(lam)
    i = 0
    m = len(lam_dense)
    while i < k:
        j = i
        while j + 1 < m and lam_dense[j + 1] - lam_dense[j] < gap:
            j += 1
        cols = [c for c in range(k) if lam_dense[i] - gap <= lam[c] <= lam_dense[j] + gap]
        if cols:
            ang = subspace_angles(vec_dense[:, i : j + 1], vecs[:, cols])
            worst = max(worst, float(np.max(ang)))
        i = j + 1
    return worst


# -- heterogeneous fixtures --------------------------------------------------

TYPE_POOL = ("A", "B", "C", "D")


def random_hin(rng, max_vertices=50):
    """A small random typed network with 2-4 types and random relations."""
    n_types = int(rng.integers(2, 5))
    types = TYPE_POOL[:n_types]
    counts = [int(rng.integers(1, max(2, max_vertices // n_types) + 1)) for _ in types]
    nodes = [f"{t.lower()}{i}\t{t}" for t, c in zip(types, counts) for i in range(c)]
    edges = []
    for i, s in enumerate(types):
        for j in range(i, n_types):
            d = types[j]
            if rng.random() > 0.75:
                continue
            rel = f"{s}{d}"
            p = float(rng.uniform(0.1, 0.6))
            for u in range(counts[i]):
                for v in range(counts[j]):
                    if (s != d or u < v) and rng.random() < p:
                        edges.append(f"{s.lower()}{u}\t{d.lower()}{v}\t{rel}")
    return load_hin(nodes, edges)


def _unit(rng, types):
    if rng.random() < 0.45:
        arms = []
        for _ in range(int(rng.integers(1, 3))):
            arms.append("-".join(rng.choice(types) for _ in range(int(rng.integers(1, 3)))))
        return "(" + "|".join(arms) + ")"
    return str(rng.choice(types))


def random_metagraph(rng, hin, max_units=3, tries=200):
    """Rejection-sample an expression valid for ``hin``, or None."""
    types = list(hin.type_names)
    for _ in range(tries):
        anchor = str(rng.choice(types))
        units = [_unit(rng, types) for _ in range(int(rng.integers(1, max_units + 1)))]
        # two groups in a row need a vertex type between them
        fixed = []
        for u in units:
            if fixed and u.startswith("(") and fixed[-1].startswith("("):
                fixed.append(str(rng.choice(types)))
            fixed.append(u)
        expr = "-".join([anchor, *fixed, anchor])
        try:
            return parse_metagraph(expr, hin)
        except (SchemaError, MetaGraphSyntaxError):
            continue
    return None
