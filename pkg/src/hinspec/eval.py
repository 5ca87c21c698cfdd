"""Downstream evaluation: node classification and link prediction on embeddings."""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)


@dataclass
class EvalResult:
    task: str
    metrics: dict[str, tuple[float, float]]
    config: dict
    per_repeat: list[dict[str, float]] = field(default_factory=list)

    def mean(self, name: str) -> float:
        return self.metrics[name][0]

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "metrics": {k: {"mean": m, "std": s} for k, (m, s) in sorted(self.metrics.items())},
            "config": self.config,
        }

    def write(self, path, repeats_tsv=None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if repeats_tsv is not None and self.per_repeat:
            names = sorted(self.per_repeat[0])
            with open(repeats_tsv, "w", encoding="utf-8") as fh:
                fh.write("repeat\t" + "\t".join(names) + "\n")
                for i, row in enumerate(self.per_repeat):
                    fh.write(f"{i}\t" + "\t".join(repr(float(row[n])) for n in names) + "\n")


def _as_matrix(embedding) -> tuple[tuple[str, ...], np.ndarray]:
    """Accept an EmbeddingMatrix, GroupedMatrix, CombinedEmbedding or ``(vertex_ids, rows)``."""
    if isinstance(embedding, tuple) and len(embedding) == 2:
        ids, rows = embedding
    elif hasattr(embedding, "codes"):
        ids, rows = embedding.vertex_ids, embedding.codes
    elif hasattr(embedding, "data"):
        ids, rows = embedding.vertex_ids, embedding.data
    else:
        ids, rows = embedding.vertex_ids, embedding.rows
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] != len(ids):
        raise ValueError("embedding rows do not match its vertex list")
    return tuple(ids), rows


# -- classifier --------------------------------------------------------------


class LogisticOvR:
    """One-vs-rest logistic regression with l2 penalty, fitted by L-BFGS on standardized features."""

    def __init__(self, reg: float = 1e-2, max_iter: int = 500):
        self.reg = reg
        self.max_iter = max_iter

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LogisticOvR":
        """``y`` is an ``(n, C)`` 0/1 indicator matrix."""
        self.mu = x.mean(axis=0)
        sd = x.std(axis=0)
        self.sd = np.where(sd > 1e-12, sd, 1.0)
        z = np.hstack([(x - self.mu) / self.sd, np.ones((x.shape[0], 1))])
        n, d = z.shape
        coefs = []
        for c in range(y.shape[1]):
            t = y[:, c].astype(np.float64)

            def obj(w, t=t):
                s = z @ w
                # log(1 + e^s) - t*s, computed stably
                loss = np.logaddexp(0.0, s) - t * s
                p = 0.5 * (1.0 + np.tanh(0.5 * s))
                g = z.T @ (p - t) / n
                g[:-1] += self.reg * w[:-1]
                return loss.mean() + 0.5 * self.reg * float(w[:-1] @ w[:-1]), g

            res = minimize(obj, np.zeros(d), jac=True, method="L-BFGS-B", options={"maxiter": self.max_iter})
            coefs.append(res.x)
        self.coef = np.column_stack(coefs)
        return self

    def decision(self, x: np.ndarray) -> np.ndarray:
        z = np.hstack([(x - self.mu) / self.sd, np.ones((x.shape[0], 1))])
        return z @ self.coef


def _scores(truth: np.ndarray, pred: np.ndarray) -> dict[str, float]:
    tp = (truth & pred).sum(axis=0).astype(np.float64)
    fp = (~truth & pred).sum(axis=0).astype(np.float64)
    fn = (truth & ~pred).sum(axis=0).astype(np.float64)

    def ratio(a, b):
        return np.where(b > 0, a / np.where(b > 0, b, 1.0), 0.0)

    f1 = ratio(2 * tp, 2 * tp + fp + fn)
    jac = ratio(tp, tp + fp + fn)
    stp, sfp, sfn = tp.sum(), fp.sum(), fn.sum()
    micro = 2 * stp / (2 * stp + sfp + sfn) if stp + sfp + sfn else 0.0
    mjac = stp / (stp + sfp + sfn) if stp + sfp + sfn else 0.0
    return {
        "macro_f1": float(f1.mean()),
        "micro_f1": float(micro),
        "macro_jaccard": float(jac.mean()),
        "micro_jaccard": float(mjac),
    }


def _stratified_split(primary: np.ndarray, ratio: float, rng: np.random.Generator):
    train, test = [], []
    for c in np.unique(primary):
        idx = np.flatnonzero(primary == c)
        idx = idx[rng.permutation(len(idx))]
        cut = min(max(1, int(round(ratio * len(idx)))), len(idx) - 1)
        train.extend(idx[:cut])
        test.extend(idx[cut:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


def classify(
    embedding,
    labels: Mapping[str, Iterable[str] | str],
    split_ratio: float = 0.5,
    repeats: int = 10,
    seed: int = 0,
    threads: int = 1,
    reg: float = 1e-2,
) -> EvalResult:
    """Node classification with random stratified train/test splits.

    Single-label data is scored as one-vs-rest with the arg-max class as the
    prediction; when any vertex carries several labels every class becomes an
    independent binary task thresholded at probability 1/2.
    """
    if not 0.0 < split_ratio < 1.0:
        raise ValueError("split_ratio must lie in (0, 1)")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    ids, rows = _as_matrix(embedding)
    pos = {v: i for i, v in enumerate(ids)}
    norm = {v: (c,) if isinstance(c, str) else tuple(sorted(set(c))) for v, c in labels.items()}
    norm = {v: c for v, c in norm.items() if c}
    if not norm:
        raise ValueError("no labels given")
    missing = sorted(v for v in norm if v not in pos)
    if missing:
        log.warning("%d labelled vertices have no embedding row; skipped", len(missing))
    vertices = sorted((v for v in norm if v in pos), key=pos.__getitem__)
    counts: dict[str, int] = {}
    for v in vertices:
        for c in norm[v]:
            counts[c] = counts.get(c, 0) + 1
    small = sorted(c for c, k in counts.items() if k < 2)
    if small:
        warnings.warn(f"classes with fewer than 2 samples excluded: {small}", RuntimeWarning, stacklevel=2)
    classes = sorted(c for c, k in counts.items() if k >= 2)
    if len(classes) < 2:
        raise ValueError("need at least two classes with two or more labelled vertices")
    cidx = {c: i for i, c in enumerate(classes)}
    vertices = [v for v in vertices if any(c in cidx for c in norm[v])]
    x = rows[[pos[v] for v in vertices]]
    y = np.zeros((len(vertices), len(classes)), dtype=bool)
    for i, v in enumerate(vertices):
        for c in norm[v]:
            if c in cidx:
                y[i, cidx[c]] = True
    multi = bool((y.sum(axis=1) > 1).any())
    primary = np.array([min(cidx[c] for c in norm[v] if c in cidx) for v in vertices])

    seeds = np.random.SeedSequence(seed).spawn(repeats)

    def one(ss):
        rng = np.random.default_rng(ss)
        tr, te = _stratified_split(primary, split_ratio, rng)
        yt = y[tr]
        model = LogisticOvR(reg=reg).fit(x[tr], yt)
        s = model.decision(x[te])
        if multi:
            pred = s > 0.0
        else:
            pred = np.zeros_like(y[te])
            pred[np.arange(len(te)), np.argmax(s, axis=1)] = True
        return _scores(y[te], pred)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            runs = list(ex.map(one, seeds))
    else:
        runs = [one(ss) for ss in seeds]
    metrics = {k: (float(np.mean([r[k] for r in runs])), float(np.std([r[k] for r in runs]))) for k in runs[0]}
    config = {
        "split_ratio": split_ratio,
        "repeats": repeats,
        "seed": seed,
        "classes": classes,
        "multi_label": multi,
        "n_vertices": len(vertices),
        "excluded_classes": small,
    }
    return EvalResult("classification", metrics, config, runs)


# -- link prediction ---------------------------------------------------------


def cosine_matrix(rows: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; any pair involving a zero row scores 0."""
    norms = np.linalg.norm(rows, axis=1)
    u = rows / np.where(norms > 0, norms, 1.0)[:, None]
    return u @ u.T


def link_predict(embedding, eval_links: Iterable[tuple[str, str]], K: int | Sequence[int] = 10) -> EvalResult:
    """Precision and recall at ``K`` of cosine-ranked candidates.

    For each source vertex with at least one true link, every other vertex is
    ranked by cosine similarity, ties going to the lower row index.  Sources
    without links are left out of the averages and counted in the config.
    """
    ks = [K] if isinstance(K, (int, np.integer)) else list(K)
    if not ks or min(ks) < 1:
        raise ValueError("K must be >= 1")
    ids, rows = _as_matrix(embedding)
    n = len(ids)
    pos = {v: i for i, v in enumerate(ids)}
    truth: dict[int, set[int]] = {}
    for u, v in eval_links:
        if u not in pos or v not in pos:
            raise ValueError(f"link ({u}, {v}) leaves the embedding's vertex set")
        a, b = pos[u], pos[v]
        if a == b:
            continue
        truth.setdefault(a, set()).add(b)
        truth.setdefault(b, set()).add(a)
    if not truth:
        raise ValueError("no evaluation links")
    sources = sorted(truth)
    kmax = min(max(ks), n - 1)
    prec = {k: [] for k in ks}
    rec = {k: [] for k in ks}
    norms = np.linalg.norm(rows, axis=1)
    unit = rows / np.where(norms > 0, norms, 1.0)[:, None]
    block = 512
    for start in range(0, len(sources), block):
        src = sources[start : start + block]
        sim = unit[src] @ unit.T
        sim[np.arange(len(src)), src] = -np.inf
        for row, s in zip(sim, src):
            # stable sort on -sim keeps lower indices first among ties
            order = np.argsort(-row, kind="stable")[:kmax]
            hit = np.isin(order, list(truth[s]))
            cum = np.cumsum(hit)
            for k in ks:
                h = int(cum[min(k, kmax) - 1])
                prec[k].append(h / k)
                rec[k].append(h / len(truth[s]))
    metrics = {}
    for k in ks:
        metrics[f"precision@{k}"] = (float(np.mean(prec[k])), 0.0)
        metrics[f"recall@{k}"] = (float(np.mean(rec[k])), 0.0)
    config = {"K": ks, "n_sources": len(sources), "n_excluded": n - len(sources)}
    return EvalResult("link_prediction", metrics, config)


def _pair_from_index(idx: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Invert the row-major enumeration of pairs ``i < j`` among ``m`` items."""
    idx = idx.astype(np.int64)
    # rows start at offsets i*m - i*(i+1)/2
    i = (m - 2 - np.floor(np.sqrt(-8.0 * idx + 4.0 * m * (m - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    start = i * m - i * (i + 1) // 2
    # guard against floating error at row boundaries
    over = idx < start
    i[over] -= 1
    start = i * m - i * (i + 1) // 2
    nxt = (i + 1) * m - (i + 1) * (i + 2) // 2
    under = idx >= nxt
    i[under] += 1
    start = i * m - i * (i + 1) // 2
    j = idx - start + i + 1
    return i, j


def class_links(labels: Mapping[str, Iterable[str] | str], cap: int | None = None, seed: int = 0) -> list[tuple[str, str]]:
    """All intra-class vertex pairs, at most ``cap`` per class (seeded sample)."""
    members: dict[str, list[str]] = {}
    for v, cs in labels.items():
        for c in (cs,) if isinstance(cs, str) else cs:
            members.setdefault(c, []).append(v)
    rng = np.random.default_rng(seed)
    out: set[tuple[str, str]] = set()
    for c in sorted(members):
        vs = sorted(set(members[c]))
        m = len(vs)
        total = m * (m - 1) // 2
        if total == 0:
            continue
        if cap is not None and total > cap:
            idx = np.sort(rng.choice(total, size=cap, replace=False))
        else:
            idx = np.arange(total)
        i, j = _pair_from_index(idx, m)
        out.update((vs[a], vs[b]) for a, b in zip(i.tolist(), j.tolist()))
    return sorted(out)


def random_label_baseline(labels, seed: int = 0, **kw) -> EvalResult:
    """Classification on pure-noise features, the floor an embedding should beat."""
    ids = sorted(labels)
    rng = np.random.default_rng(seed)
    return classify((tuple(ids), rng.normal(size=(len(ids), 8))), labels, seed=seed, **kw)
