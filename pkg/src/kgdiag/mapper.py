"""Stage-two mapping-function training: align text-derived entity vectors
with stage-one graph embeddings, instrumenting per-degree-group gradient
contributions, alignment errors, and per-epoch open-world ranking quality.

The mapper is a feed-forward network trained with seeded minibatch SGD and
hand-derived backpropagation.  "Gradient contribution" of a degree group in
an epoch is the L1/L2 norm of the sum of that group's per-sample parameter
gradients accumulated over the epoch; the epoch total is the sum of the
disjoint group values, so the trace is additively consistent by construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DivergenceError
from .kge import EmbeddingTable, make_ranking_result, rank_tail, RankingResult
from .quality import resolve_thresholds

ACTIVATIONS = ("tanh", "relu")
LOSSES = ("squared-euclidean", "negative-cosine")
GROUPS = ("low", "mid", "high")


@dataclass(frozen=True)
class MapperConfig:
    hidden_dims: tuple[int, ...] = (256,)
    activation: str = "tanh"
    loss: str = "squared-euclidean"
    epochs: int = 30
    learning_rate: float = 0.005
    batch_size: int = 128
    seed: int = 0
    epsilon_low: float | None = None
    epsilon_high: float | None = None
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if min(self.epochs, self.batch_size) < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class TextEmbeddingSet:
    labels: tuple[str, ...]
    vectors: np.ndarray
    source: str

    @property
    def text_dim(self) -> int:
        return int(self.vectors.shape[1])

    @cached_property
    def index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def vector(self, label: str) -> np.ndarray:
        return self.vectors[self.index[label]]

    def to_embedding_table(self) -> EmbeddingTable:
        return EmbeddingTable(
            entity_labels=self.labels,
            relation_labels=(),
            entity_vectors=self.vectors,
            relation_vectors=np.zeros((0, self.text_dim)),
            scorer="text",
        )

    @classmethod
    def from_embedding_table(cls, table: EmbeddingTable, source: str = "file"):
        return cls(
            labels=table.entity_labels, vectors=table.entity_vectors, source=source
        )


@dataclass(frozen=True)
class OpenWorldQuery:
    """Tail prediction for an entity outside the closed graph; all fields are
    labels so queries stay valid across vocabularies."""

    open_entity: str
    relation: str
    true_tail: str


def synth_text_embeddings(
    emb: EmbeddingTable,
    text_dim: int,
    noise_sigma: float,
    seed: int = 0,
    linear_map: np.ndarray | None = None,
) -> TextEmbeddingSet:
    """Stand-in text encoder: text(e) = W graph(e) + N(0, sigma^2) noise.

    W is a fixed seeded Gaussian map unless given explicitly.  Passing a table
    that also covers held-out open-world entities (their rows taken from a
    full-graph reference run) gives every query entity a text vector under the
    same map, so the ground-truth alignment is learnable.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng([seed])
    if linear_map is None:
        linear_map = rng.normal(0.0, 1.0 / math.sqrt(emb.dim), size=(text_dim, emb.dim))
    w = np.asarray(linear_map, dtype=np.float64)
    if w.shape != (text_dim, emb.dim):
        raise ValueError(f"linear map must be ({text_dim}, {emb.dim}), got {w.shape}")
    vectors = emb.entity_vectors @ w.T
    if noise_sigma > 0:
        vectors = vectors + rng.normal(0.0, noise_sigma, size=vectors.shape)
    return TextEmbeddingSet(labels=emb.entity_labels, vectors=vectors, source="synthetic")


# ---------------------------------------------------------------------------
# Feed-forward mapper with manual backprop
# ---------------------------------------------------------------------------


@dataclass
class Mapper:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str

    @classmethod
    def initialize(
        cls,
        in_dim: int,
        out_dim: int,
        hidden_dims: Sequence[int],
        activation: str,
        rng: np.random.Generator,
    ) -> "Mapper":
        dims = [in_dim, *hidden_dims, out_dim]
        weights, biases = [], []
        for a, b in zip(dims[:-1], dims[1:]):
            limit = math.sqrt(6.0 / (a + b))
            weights.append(rng.uniform(-limit, limit, size=(a, b)))
            biases.append(np.zeros(b))
        return cls(weights=weights, biases=biases, activation=activation)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def map(self, x: np.ndarray) -> np.ndarray:
        single = x.ndim == 1
        acts, _ = _forward(self.weights, self.biases, np.atleast_2d(x), self.activation)
        return acts[-1][0] if single else acts[-1]


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.tanh(z) if activation == "tanh" else np.maximum(z, 0.0)


def _activate_grad(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        th = np.tanh(z)
        return 1.0 - th * th
    return (z > 0).astype(np.float64)


def _forward(weights, biases, x, activation):
    acts = [x]
    zs = []
    last = len(weights) - 1
    a = x
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w + b
        zs.append(z)
        a = z if l == last else _activate(z, activation)
        acts.append(a)
    return acts, zs


def _per_sample_loss_dout(out, y, loss):
    """Per-sample losses and d(loss_i)/d(out_i), unscaled by batch size."""
    if loss == "squared-euclidean":
        diff = out - y
        return np.sum(diff * diff, axis=1), 2.0 * diff
    on = np.maximum(np.linalg.norm(out, axis=1), 1e-300)
    yn = np.maximum(np.linalg.norm(y, axis=1), 1e-300)
    cos = np.sum(out * y, axis=1) / (on * yn)
    dout = -y / (on * yn)[:, None] + (cos / (on * on))[:, None] * out
    return -cos, dout


def _deltas(weights, zs, dout, activation):
    """Per-layer, per-sample backprop signals for the given output gradient."""
    deltas = [None] * len(weights)
    delta = dout
    for l in reversed(range(len(weights))):
        deltas[l] = delta
        if l > 0:
            delta = (delta @ weights[l].T) * _activate_grad(zs[l - 1], activation)
    return deltas


def _flat_grads(acts, deltas, rows=None) -> np.ndarray:
    """Flattened parameter gradient accumulated over the given rows."""
    parts = []
    for l, delta in enumerate(deltas):
        a_in = acts[l] if rows is None else acts[l][rows]
        d = delta if rows is None else delta[rows]
        parts.append((a_in.T @ d).ravel())
        parts.append(d.sum(axis=0))
    return np.concatenate(parts)


def mapper_loss_grad(
    mapper: Mapper, x: np.ndarray, y: np.ndarray, loss: str
) -> tuple[float, np.ndarray]:
    """Batch-mean loss and its flattened parameter gradient (the pure function
    checked against finite differences in the test suite)."""
    acts, zs = _forward(mapper.weights, mapper.biases, x, mapper.activation)
    per, dout = _per_sample_loss_dout(acts[-1], y, loss)
    deltas = _deltas(mapper.weights, zs, dout / x.shape[0], mapper.activation)
    return float(per.mean()), _flat_grads(acts, deltas)


def _apply_flat_gradient(mapper: Mapper, flat: np.ndarray, lr: float) -> None:
    offset = 0
    for l in range(len(mapper.weights)):
        w, b = mapper.weights[l], mapper.biases[l]
        w -= lr * flat[offset : offset + w.size].reshape(w.shape)
        offset += w.size
        b -= lr * flat[offset : offset + b.size]
        offset += b.size


# ---------------------------------------------------------------------------
# Training trace
# ---------------------------------------------------------------------------

TRACE_COLUMNS = (
    "epoch",
    "group",
    "n_train",
    "n_heldout",
    "grad_l1",
    "grad_l2",
    "grad_l1_cum",
    "grad_l2_cum",
    "align_cos_mean",
    "align_cos_std",
    "align_euc_mean",
    "align_euc_std",
    "heldout_cos_mean",
    "heldout_cos_std",
    "heldout_euc_mean",
    "heldout_euc_std",
    "loss",
    "val_mrr",
)


@dataclass
class TraceRow:
    epoch: int
    group: str
    n_train: int
    n_heldout: int
    grad_l1: float
    grad_l2: float
    grad_l1_cum: float
    grad_l2_cum: float
    align_cos_mean: float
    align_cos_std: float
    align_euc_mean: float
    align_euc_std: float
    heldout_cos_mean: float
    heldout_cos_std: float
    heldout_euc_mean: float
    heldout_euc_std: float
    loss: float
    val_mrr: float


@dataclass
class TrainingTrace:
    rows: list[TraceRow]

    def total_rows(self) -> list[TraceRow]:
        return sorted(
            (r for r in self.rows if r.group == "total"), key=lambda r: r.epoch
        )

    def group_rows(self, group: str) -> list[TraceRow]:
        return sorted(
            (r for r in self.rows if r.group == group), key=lambda r: r.epoch
        )

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for r in sorted(self.rows, key=lambda r: (r.epoch, r.group)):
                writer.writerow(
                    [
                        r.epoch,
                        r.group,
                        r.n_train,
                        r.n_heldout,
                        *(repr(getattr(r, c)) for c in TRACE_COLUMNS[4:]),
                    ]
                )


def epoch_peak(trace: TrainingTrace) -> int:
    """1-based epoch with the highest validation MRR (earliest on ties)."""
    totals = trace.total_rows()
    if not totals:
        raise ValueError("empty trace")
    best = max(range(len(totals)), key=lambda i: (totals[i].val_mrr, -i))
    return totals[best].epoch


# ---------------------------------------------------------------------------
# Training and open-world evaluation
# ---------------------------------------------------------------------------


def _alignment_stats(mapped: np.ndarray, targets: np.ndarray):
    """Mean/std of cosine and Euclidean distances between rows."""
    if mapped.shape[0] == 0:
        return (math.nan,) * 4
    euc = np.linalg.norm(mapped - targets, axis=1)
    mn = np.maximum(np.linalg.norm(mapped, axis=1), 1e-300)
    tn = np.maximum(np.linalg.norm(targets, axis=1), 1e-300)
    cos = 1.0 - np.sum(mapped * targets, axis=1) / (mn * tn)
    return (
        float(cos.mean()),
        float(cos.std()),
        float(euc.mean()),
        float(euc.std()),
    )


def train_mapper(
    text: TextEmbeddingSet,
    emb: EmbeddingTable,
    degrees: np.ndarray,
    queries: Sequence[OpenWorldQuery],
    cfg: MapperConfig,
    filter: Iterable[tuple[str, str, str]] = (),
) -> tuple[Mapper, TrainingTrace]:
    """Train the text-to-graph mapper and record the per-degree-group trace.

    Training entities are those present in both the text set and the
    embedding table, excluding any entity that appears as an open entity in
    ``queries``.  ``degrees`` indexes the embedding table's entity rows.
    A seeded ``val_fraction`` of the training entities is held out from the
    SGD updates for the held-out alignment-error columns.
    """
    open_labels = {q.open_entity for q in queries}
    train_labels = [
        lab
        for lab in emb.entity_labels
        if lab in text.index and lab not in open_labels
    ]
    if not train_labels:
        raise ValueError("no entities with both a text vector and an embedding")

    rng = np.random.default_rng([cfg.seed])
    mapper = Mapper.initialize(
        text.text_dim, emb.dim, cfg.hidden_dims, cfg.activation, rng
    )

    all_idx = np.arange(len(train_labels))
    n_held = int(round(cfg.val_fraction * len(train_labels)))
    shuffled = rng.permutation(all_idx)
    held_idx, fit_idx = np.sort(shuffled[:n_held]), np.sort(shuffled[n_held:])
    if fit_idx.size == 0:
        raise ValueError("val_fraction leaves no training entities")

    ent_rows = np.array([emb.entity_index[lab] for lab in train_labels])
    text_rows = np.array([text.index[lab] for lab in train_labels])
    x_all = text.vectors[text_rows]
    y_all = emb.entity_vectors[ent_rows]
    deg_all = np.asarray(degrees, dtype=np.float64)[ent_rows]
    eps_l, eps_h = resolve_thresholds(
        np.asarray(degrees, dtype=np.float64), cfg.epsilon_low, cfg.epsilon_high
    )
    group_of = np.where(deg_all <= eps_l, 0, np.where(deg_all >= eps_h, 2, 1))
    group_code = {"low": 0, "mid": 1, "high": 2}

    x_fit, y_fit, grp_fit = x_all[fit_idx], y_all[fit_idx], group_of[fit_idx]
    rows: list[TraceRow] = []
    cum = {g: np.zeros(2) for g in (*GROUPS, "total")}  # (l1, l2) running sums

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(x_fit.shape[0])
        acc = {g: np.zeros(mapper.n_params) for g in GROUPS}
        loss_sum = 0.0
        for lo in range(0, order.size, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            xb, yb = x_fit[batch], y_fit[batch]
            acts, zs = _forward(mapper.weights, mapper.biases, xb, cfg.activation)
            per, dout = _per_sample_loss_dout(acts[-1], yb, cfg.loss)
            batch_loss = float(per.mean())
            if not np.isfinite(batch_loss):
                raise DivergenceError(epoch, batch_loss)
            deltas = _deltas(mapper.weights, zs, dout, cfg.activation)
            gb = grp_fit[batch]
            update = np.zeros(mapper.n_params)
            for g in GROUPS:
                members = np.flatnonzero(gb == group_code[g])
                if members.size:
                    flat = _flat_grads(acts, deltas, members)
                    acc[g] += flat
                    update += flat
            _apply_flat_gradient(mapper, update / batch.size, cfg.learning_rate)
            loss_sum += batch_loss * batch.size

        epoch_loss = loss_sum / order.size
        val = evaluate_open_world(mapper, text, emb, queries, filter)
        val_mrr = val.mrr if val.ranks else math.nan

        mapped_all = mapper.map(x_all)
        totals_l1 = 0.0
        totals_l2 = 0.0
        for g in GROUPS:
            l1 = float(np.abs(acc[g]).sum())
            l2 = float(np.linalg.norm(acc[g]))
            totals_l1 += l1
            totals_l2 += l2
            cum[g] += (l1, l2)
            members_fit = np.flatnonzero(group_of[fit_idx] == group_code[g])
            members_held = np.flatnonzero(group_of[held_idx] == group_code[g])
            if members_fit.size == 0 and members_held.size == 0:
                continue  # empty group: absent from the trace
            train_stats = _alignment_stats(
                mapped_all[fit_idx][members_fit], y_all[fit_idx][members_fit]
            )
            held_stats = _alignment_stats(
                mapped_all[held_idx][members_held], y_all[held_idx][members_held]
            )
            rows.append(
                TraceRow(
                    epoch,
                    g,
                    int(members_fit.size),
                    int(members_held.size),
                    l1,
                    l2,
                    float(cum[g][0]),
                    float(cum[g][1]),
                    *train_stats,
                    *held_stats,
                    epoch_loss,
                    val_mrr,
                )
            )
        cum["total"] += (totals_l1, totals_l2)
        train_stats = _alignment_stats(mapped_all[fit_idx], y_all[fit_idx])
        held_stats = _alignment_stats(mapped_all[held_idx], y_all[held_idx])
        rows.append(
            TraceRow(
                epoch,
                "total",
                int(fit_idx.size),
                int(held_idx.size),
                totals_l1,
                totals_l2,
                float(cum["total"][0]),
                float(cum["total"][1]),
                *train_stats,
                *held_stats,
                epoch_loss,
                val_mrr,
            )
        )
    return mapper, TrainingTrace(rows)


def evaluate_open_world(
    mapper: Mapper,
    text: TextEmbeddingSet,
    emb: EmbeddingTable,
    queries: Sequence[OpenWorldQuery],
    filter: Iterable[tuple[str, str, str]] = (),
) -> RankingResult:
    """Map each query's open entity and rank candidate tails in the graph
    embedding space.  Queries whose open entity lacks a text vector (or whose
    relation/tail is unknown to the table) are skipped and counted."""
    rel_index = {lab: i for i, lab in enumerate(emb.relation_labels)}
    exclude: dict[tuple[str, str], list[int]] = {}
    for h, r, t in filter:
        tid = emb.entity_index.get(t)
        if tid is not None:
            exclude.setdefault((h, r), []).append(tid)
    ranks: list[int] = []
    kept: list[tuple[str, str, str]] = []
    skipped = 0
    for q in queries:
        rid = rel_index.get(q.relation)
        tid = emb.entity_index.get(q.true_tail)
        if q.open_entity not in text.index or rid is None or tid is None:
            skipped += 1
            continue
        vec = mapper.map(text.vector(q.open_entity))
        ranks.append(
            rank_tail(
                emb,
                vec,
                rid,
                tid,
                exclude_tails=exclude.get((q.open_entity, q.relation), ()),
            )
        )
        kept.append((q.open_entity, q.relation, q.true_tail))
    if not ranks:
        return RankingResult([], [], math.nan, {}, skipped)
    result = make_ranking_result(ranks, kept, skipped=skipped)
    return result


predict_open_world = evaluate_open_world
