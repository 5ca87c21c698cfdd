"""Combining per-meta-graph embeddings with a group-sparse autoencoder.

The input row of a vertex is the concatenation of its spectral embeddings,
one column group per meta-graph.  A stack of fully connected LeakyReLU layers
compresses it to ``Q`` dimensions and a mirrored stack reconstructs it.  The
reconstruction loss sums, over vertices and groups, the *unsquared* l2 norm of
each group's residual, so whole groups are either reconstructed well or given
up on; the per-group residual norms after training rank the meta-graphs.
"""

from __future__ import annotations

import json
import logging
import struct
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .spectral import EmbeddingMatrix

log = logging.getLogger(__name__)

_MAGIC = b"HINAE\x00\x01\x00"


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: "AutoencoderModel | None" = None):
        super().__init__(message)
        self.last_good = last_good


# -- grouped input -----------------------------------------------------------


@dataclass(frozen=True)
class Group:
    name: str
    start: int
    stop: int

    @property
    def width(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True, eq=False)
class GroupedMatrix:
    data: np.ndarray
    groups: tuple[Group, ...]
    vertex_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        pos = 0
        for g in self.groups:
            if g.start != pos or g.stop < g.start:
                raise ValueError(f"group {g.name!r} breaks the contiguous column layout")
            pos = g.stop
        if pos != self.data.shape[1]:
            raise ValueError(f"groups cover {pos} columns, data has {self.data.shape[1]}")
        if self.data.shape[0] != len(self.vertex_ids):
            raise ValueError("row count does not match the vertex list")

    @property
    def layout(self) -> list[tuple[str, int, int]]:
        return [(g.name, g.start, g.stop) for g in self.groups]

    def rows(self, indices) -> "GroupedMatrix":
        idx = np.asarray(indices, dtype=np.int64)
        return GroupedMatrix(self.data[idx], self.groups, tuple(self.vertex_ids[i] for i in idx))


def concat_embeddings(
    embeddings: Sequence[EmbeddingMatrix], vertex_ids: Sequence[str] | None = None
) -> GroupedMatrix:
    """Stack embeddings side by side over a shared vertex universe.

    The universe defaults to the union of the inputs' vertices in first-seen
    order; a vertex missing from one embedding gets zeros in that group.
    """
    if not embeddings:
        raise ValueError("need at least one embedding")
    names = [e.metagraph or (e.columns[0][0] if e.columns else "") for e in embeddings]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate meta-graph names: {names}")
    if vertex_ids is None:
        seen: dict[str, None] = {}
        for e in embeddings:
            for v in e.vertex_ids:
                seen.setdefault(v, None)
        universe = tuple(seen)
    else:
        universe = tuple(vertex_ids)
    pos = {v: i for i, v in enumerate(universe)}
    width = sum(e.k for e in embeddings)
    data = np.zeros((len(universe), width))
    groups = []
    col = 0
    for name, e in zip(names, embeddings):
        rows = [pos[v] for v in e.vertex_ids if v in pos]
        src = [i for i, v in enumerate(e.vertex_ids) if v in pos]
        data[np.array(rows, dtype=np.int64)[:, None], col + np.arange(e.k)] = e.rows[src]
        groups.append(Group(name, col, col + e.k))
        col += e.k
    return GroupedMatrix(data, tuple(groups), universe)


@dataclass(frozen=True)
class PreprocessStats:
    mode: str
    means: np.ndarray
    scales: np.ndarray
    layout: tuple[tuple[str, int, int], ...]

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "means": [float(x) for x in self.means],
            "scales": [float(x) for x in self.scales],
            "layout": [list(g) for g in self.layout],
        }

    @classmethod
    def from_json(cls, d: dict) -> "PreprocessStats":
        return cls(d["mode"], np.array(d["means"]), np.array(d["scales"]), tuple(tuple(g) for g in d["layout"]))


def preprocess(g: GroupedMatrix, mode: str = "group") -> tuple[GroupedMatrix, PreprocessStats]:
    """Mean-shift every column, then scale.

    ``mode="group"`` divides each group by the square root of its total
    variance, so every meta-graph enters with unit variance; ``"column"``
    gives every column unit variance.  Zero-variance groups stay at zero.
    """
    if g.data.shape[0] == 0:
        raise ValueError("cannot preprocess an empty matrix")
    means = g.data.mean(axis=0)
    centered = g.data - means
    var = centered.var(axis=0)
    scales = np.ones(g.data.shape[1])
    if mode == "group":
        for grp in g.groups:
            total = float(var[grp.start : grp.stop].sum())
            if grp.width and total <= 1e-24:
                warnings.warn(f"group {grp.name!r} has zero variance", RuntimeWarning, stacklevel=2)
                continue
            if grp.width:
                scales[grp.start : grp.stop] = np.sqrt(total)
    elif mode == "column":
        nz = var > 1e-24
        scales[nz] = np.sqrt(var[nz])
        if not nz.all():
            warnings.warn(f"{int((~nz).sum())} zero-variance columns", RuntimeWarning, stacklevel=2)
    else:
        raise ValueError(f"unknown preprocessing mode {mode!r}")
    stats = PreprocessStats(mode, means, scales, tuple(g.layout))
    return apply_preprocess(g, stats), stats


def apply_preprocess(g: GroupedMatrix, stats: PreprocessStats) -> GroupedMatrix:
    if tuple(tuple(x) for x in g.layout) != tuple(tuple(x) for x in stats.layout):
        raise ValueError("group layout differs from the one the statistics were fitted on")
    return GroupedMatrix((g.data - stats.means) / stats.scales, g.groups, g.vertex_ids)


# -- model -------------------------------------------------------------------


@dataclass
class AutoencoderConfig:
    encoding_dim: int = 16
    layers: int = 2
    dropout: float = 0.2
    slope: float = 0.01
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    loss: str = "l21"
    seed: int = 0
    smooth_eps: float | None = None
    linear_output: bool = True
    round_to: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.loss not in ("l21", "l2"):
            raise ValueError(f"loss must be 'l21' or 'l2', got {self.loss!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.layers < 1 or self.encoding_dim < 1:
            raise ValueError("need at least one layer and one encoding dimension")


def layer_widths(d: int, q: int, layers: int, round_to: int = 8) -> list[int]:
    """Encoder widths ``[d, ..., q]``: each hidden layer halves, rounded up to ``round_to``."""
    if q >= d:
        raise ValueError(f"encoding dimension {q} must be smaller than the input width {d}")
    widths = [d]
    for p in range(layers - 1):
        prev = widths[-1]
        half = -(-prev // 2)
        w = -(-half // round_to) * round_to if round_to > 1 else half
        left = layers - 1 - p  # layers still to place after this one
        w = min(w, prev - 1)
        w = max(w, q + left)
        if w >= prev:
            raise ValueError(f"cannot fit {layers} strictly shrinking layers between {d} and {q}")
        widths.append(w)
    widths.append(q)
    return widths


@dataclass
class AutoencoderModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    config: AutoencoderConfig
    groups: tuple[tuple[str, int, int], ...]
    stats: PreprocessStats | None = None
    history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def n_encoder(self) -> int:
        return len(self.weights) // 2

    @property
    def encoding_dim(self) -> int:
        return self.weights[self.n_encoder - 1].shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "AutoencoderModel":
        return AutoencoderModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.config,
            self.groups,
            self.stats,
            list(self.history),
        )


def init_model(d: int, groups, config: AutoencoderConfig) -> AutoencoderModel:
    """Glorot-uniform weights, zero biases, seeded by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    enc = layer_widths(d, config.encoding_dim, config.layers, config.round_to)
    sizes = enc + enc[-2::-1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    layout = tuple(tuple(g) for g in groups)
    return AutoencoderModel(weights, biases, config, layout)


def _activates(model: AutoencoderModel, layer: int) -> bool:
    return not (model.config.linear_output and layer == len(model.weights) - 1)


def _forward(model: AutoencoderModel, x: np.ndarray, rng=None):
    """Batch forward pass; dropout is applied when ``rng`` is given."""
    cfg = model.config
    cache = []
    h = x
    code = None
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        mask = None
        if rng is not None and cfg.dropout > 0:
            mask = (rng.random(h.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
            h_in = h * mask
        else:
            h_in = h
        z = h_in @ w.T + b
        act = _activates(model, layer)
        out = np.where(z > 0, z, cfg.slope * z) if act else z
        cache.append((h_in, mask, z, act))
        h = out
        if layer == model.n_encoder - 1:
            code = h
    return code, h, cache


def forward(model: AutoencoderModel, x, train_mode: bool = False, rng=None):
    """Encode and reconstruct rows of ``x``; returns ``(q, x_reconstructed)``.

    Dropout is inverted (kept units are scaled up during training) so the
    evaluation pass needs no rescaling and is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.shape[1] != model.input_dim:
        raise ValueError(f"input has {x2.shape[1]} columns, model expects {model.input_dim}")
    if train_mode and rng is None:
        rng = np.random.default_rng(model.config.seed)
    q, xr, _ = _forward(model, x2, rng if train_mode else None)
    return (q[0], xr[0]) if single else (q, xr)


def _group_slices(groups) -> list[slice]:
    return [slice(int(s), int(e)) for _, s, e in groups]


def group_residual_norms(x, x_rec, groups) -> np.ndarray:
    """``(n, K)`` matrix of per-row, per-group residual l2 norms."""
    r = np.asarray(x_rec, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    if r.ndim == 1:
        r = r[None, :]
    total = sum(int(e) - int(s) for _, s, e in groups)
    if total != r.shape[1]:
        raise ValueError(f"group layout covers {total} columns, residual has {r.shape[1]}")
    return np.column_stack([np.sqrt((r[:, sl] ** 2).sum(axis=1)) for sl in _group_slices(groups)])


def l21_loss(x, x_rec, groups) -> float:
    """Sum over rows and groups of the unsquared residual norm."""
    return float(group_residual_norms(x, x_rec, groups).sum())


def _loss_grad(model: AutoencoderModel, x, x_rec):
    r = x_rec - x
    if model.config.loss == "l2":
        return float((r**2).sum()), 2.0 * r
    eps = model.config.smooth_eps
    grad = np.zeros_like(r)
    total = 0.0
    for sl in _group_slices(model.groups):
        rs = r[:, sl]
        sq = (rs**2).sum(axis=1, keepdims=True)
        if eps:
            norm = np.sqrt(sq + eps * eps)
            total += float((norm - eps).sum())
            grad[:, sl] = rs / norm
        else:
            norm = np.sqrt(sq)
            total += float(norm.sum())
            safe = np.where(norm > 0, norm, 1.0)
            grad[:, sl] = np.where(norm > 0, rs / safe, 0.0)
    return total, grad


def loss_and_grads(model: AutoencoderModel, x, rng=None):
    """Loss on ``x`` and its gradient for every weight and bias (weights first)."""
    x = np.asarray(x, dtype=np.float64)
    _, x_rec, cache = _forward(model, x, rng)
    loss, g = _loss_grad(model, x, x_rec)
    n_layers = len(model.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        h_in, mask, z, act = cache[layer]
        if act:
            g = g * np.where(z > 0, 1.0, model.config.slope)
        gw[layer] = g.T @ h_in
        gb[layer] = g.sum(axis=0)
        if layer:
            g = g @ model.weights[layer]
            if mask is not None:
                g = g * mask
    return loss, [*gw, *gb]


def train(g: GroupedMatrix, config: AutoencoderConfig | None = None, stats: PreprocessStats | None = None) -> AutoencoderModel:
    """Fit the autoencoder by mini-batch Adam on already preprocessed rows.

    Batches follow a seeded permutation per epoch, so a fixed seed reproduces
    the model bit for bit.  ``history`` holds ``(epoch, J)`` with ``J`` the
    full-data loss in evaluation mode after each epoch.
    """
    cfg = config or AutoencoderConfig()
    x = np.asarray(g.data, dtype=np.float64)
    n, d = x.shape
    model = init_model(d, g.layout, cfg)
    model.stats = stats
    rng = np.random.default_rng(cfg.seed + 1)
    params = model.params()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    step = 0

    def full_loss(mdl):
        _, xr, _ = _forward(mdl, x)
        return _loss_grad(mdl, x, xr)[0]

    loss0 = full_loss(model)
    model.history.append((0, loss0))
    last_good = model.copy()
    if loss0 == 0.0:
        return model
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = x[order[start : start + cfg.batch_size]]
            _, grads = loss_and_grads(model, batch, rng)
            step += 1
            c1 = 1.0 - cfg.beta1**step
            c2 = 1.0 - cfg.beta2**step
            for p, gr, a, b in zip(params, grads, m1, m2):
                a *= cfg.beta1
                a += (1.0 - cfg.beta1) * gr
                b *= cfg.beta2
                b += (1.0 - cfg.beta2) * gr * gr
                p -= cfg.lr * (a / c1) / (np.sqrt(b / c2) + cfg.adam_eps)
        loss = full_loss(model)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at epoch {epoch}", last_good)
        model.history.append((epoch, loss))
        last_good = model.copy()
    return model


def encode(model: AutoencoderModel, g: GroupedMatrix, preprocessed: bool = True) -> "CombinedEmbedding":
    """Evaluation-mode codes for every row of ``g``.

    With ``preprocessed=False`` the model's stored statistics are applied
    first.
    """
    if tuple(tuple(x) for x in g.layout) != tuple(tuple(x) for x in model.groups):
        raise ValueError("group layout differs from the one the model was trained on")
    if not preprocessed:
        if model.stats is None:
            raise ValueError("model carries no preprocessing statistics")
        g = apply_preprocess(g, model.stats)
    q, _ = forward(model, g.data)
    return CombinedEmbedding(np.asarray(q), g.vertex_ids, {"encoding_dim": model.encoding_dim, "seed": model.config.seed})


def group_norms(model: AutoencoderModel, g: GroupedMatrix) -> dict[str, float]:
    """Mean residual norm per group in evaluation mode; smaller means better kept."""
    _, xr = forward(model, g.data)
    norms = group_residual_norms(g.data, xr, model.groups).mean(axis=0)
    return {name: float(v) for (name, _, _), v in zip(model.groups, norms)}


@dataclass(frozen=True, eq=False)
class CombinedEmbedding:
    codes: np.ndarray
    vertex_ids: tuple[str, ...]
    provenance: dict

    def write(self, tsv_path, json_path=None) -> None:
        write_embedding_tsv(tsv_path, self.vertex_ids, self.codes)
        if json_path is not None:
            with open(json_path, "w", encoding="utf-8") as fh:
                json.dump({**self.provenance, "n_vertices": len(self.vertex_ids), "dims": int(self.codes.shape[1])}, fh, indent=2)
                fh.write("\n")


def write_embedding_tsv(path, vertex_ids, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for vid, row in zip(vertex_ids, np.asarray(rows)):
            fh.write(vid + "".join(f"\t{float(v)!r}" for v in row) + "\n")


def read_embedding_tsv(path) -> tuple[tuple[str, ...], np.ndarray]:
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    width = max((len(r) for r in rows), default=0)
    return tuple(ids), np.array(rows, dtype=np.float64).reshape(len(rows), width)


# -- checkpoint --------------------------------------------------------------


def save_model(model: AutoencoderModel, path) -> None:
    """One file: magic, header length, JSON header, then little-endian float64 payloads."""
    header = {
        "config": asdict(model.config),
        "layers": [
            {"weight": list(w.shape), "bias": list(b.shape)} for w, b in zip(model.weights, model.biases)
        ],
        "groups": [list(g) for g in model.groups],
        "stats": model.stats.to_json() if model.stats is not None else None,
        "history": [[e, float(v)] for e, v in model.history],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> AutoencoderModel:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (size,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(size).decode("utf-8"))
        weights, biases = [], []
        for layer in header["layers"]:
            for shape, out in ((layer["weight"], weights), (layer["bias"], biases)):
                count = int(np.prod(shape))
                buf = fh.read(8 * count)
                if len(buf) != 8 * count:
                    raise ValueError(f"{path}: truncated payload")
                out.append(np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64))
    stats = PreprocessStats.from_json(header["stats"]) if header["stats"] else None
    return AutoencoderModel(
        weights,
        biases,
        AutoencoderConfig(**header["config"]),
        tuple(tuple(g) for g in header["groups"]),
        stats,
        [(int(e), float(v)) for e, v in header["history"]],
    )
