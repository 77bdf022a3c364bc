"""Stage-one knowledge-graph embedding training and ranking evaluation.

Two scorers are provided: ``translational`` (score = -||h + r - t||_2, margin
ranking loss, entity rows L2-normalized at the start of every epoch) and
``bilinear-complex`` (score = Re<h, r, conj(t)> over paired vector halves,
logistic loss with L2 weight decay).  Optimization is plain seeded minibatch
SGD with exact analytic gradients, so runs are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit as special_expit

from .errors import DivergenceError, EmptyEvaluationError
from .graph import KnowledgeGraph, Triple

SCORERS = ("translational", "bilinear-complex")
COMPLEX_L2 = 1e-5


@dataclass(frozen=True)
class KgeConfig:
    scorer: str = "translational"
    dim: int = 64
    epochs: int = 200
    learning_rate: float = 0.01
    margin: float = 1.0
    negatives_per_positive: int = 8
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.scorer not in SCORERS:
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if self.scorer == "bilinear-complex" and self.dim % 2:
            raise ValueError("bilinear-complex needs an even dim (re/im halves)")
        if min(self.dim, self.epochs, self.negatives_per_positive, self.batch_size) < 1:
            raise ValueError("dim, epochs, negatives and batch size must be positive")
        if self.learning_rate <= 0 or self.margin <= 0:
            raise ValueError("learning_rate and margin must be positive")


@dataclass
class EmbeddingTable:
    entity_labels: tuple[str, ...]
    relation_labels: tuple[str, ...]
    entity_vectors: np.ndarray
    relation_vectors: np.ndarray
    scorer: str

    @property
    def dim(self) -> int:
        return int(self.entity_vectors.shape[1])

    @cached_property
    def entity_index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.entity_labels)}

    def entity_vector(self, label: str) -> np.ndarray:
        return self.entity_vectors[self.entity_index[label]]


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def _scores(ent: np.ndarray, rel: np.ndarray, rows: np.ndarray, scorer: str) -> np.ndarray:
    h, r, t = ent[rows[:, 0]], rel[rows[:, 1]], ent[rows[:, 2]]
    if scorer == "translational":
        return -np.linalg.norm(h + r - t, axis=1)
    return _complex_score(h, r, t)


def _complex_score(h: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    dh = h.shape[1] // 2
    hr, hi = h[:, :dh], h[:, dh:]
    rr, ri = r[:, :dh], r[:, dh:]
    tr, ti = t[:, :dh], t[:, dh:]
    return np.sum((hr * rr - hi * ri) * tr + (hr * ri + hi * rr) * ti, axis=1)


def score_triple(emb: EmbeddingTable, t: Triple) -> float:
    """Plausibility score of one triple; higher is better for both scorers."""
    rows = np.array([[t.head, t.relation, t.tail]], dtype=np.int64)
    return float(_scores(emb.entity_vectors, emb.relation_vectors, rows, emb.scorer)[0])


def score_tails(emb: EmbeddingTable, head_vec: np.ndarray, relation: int) -> np.ndarray:
    """Scores of (head_vec, relation, t) over every entity t in the table."""
    ent = emb.entity_vectors
    if emb.scorer == "translational":
        return -np.linalg.norm((head_vec + emb.relation_vectors[relation]) - ent, axis=1)
    h = head_vec[None, :].repeat(ent.shape[0], axis=0)
    r = emb.relation_vectors[relation][None, :].repeat(ent.shape[0], axis=0)
    return _complex_score(h, r, ent)


# ---------------------------------------------------------------------------
# Losses with exact analytic gradients (pure functions; finite-difference
# checked in the test suite)
# ---------------------------------------------------------------------------


def transe_loss_grad(
    ent: np.ndarray,
    rel: np.ndarray,
    pos: np.ndarray,
    neg: np.ndarray,
    margin: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Margin-ranking loss summed over aligned (pos, neg) pair rows, plus its
    dense gradients w.r.t. the full embedding matrices."""
    dp_vec = ent[pos[:, 0]] + rel[pos[:, 1]] - ent[pos[:, 2]]
    dn_vec = ent[neg[:, 0]] + rel[neg[:, 1]] - ent[neg[:, 2]]
    dp = np.linalg.norm(dp_vec, axis=1)
    dn = np.linalg.norm(dn_vec, axis=1)
    viol = margin + dp - dn
    active = viol > 0
    loss = float(np.sum(viol[active]))

    grad_ent = np.zeros_like(ent)
    grad_rel = np.zeros_like(rel)
    if active.any():
        idx = np.flatnonzero(active)
        up = dp_vec[idx] / np.maximum(dp[idx], 1e-300)[:, None]
        un = dn_vec[idx] / np.maximum(dn[idx], 1e-300)[:, None]
        up[dp[idx] == 0.0] = 0.0
        un[dn[idx] == 0.0] = 0.0
        ent_rows = np.concatenate([pos[idx, 0], pos[idx, 2], neg[idx, 0], neg[idx, 2]])
        ent_vals = np.concatenate([up, -up, -un, un])
        np.add.at(grad_ent, ent_rows, ent_vals)
        np.add.at(grad_rel, np.concatenate([pos[idx, 1], neg[idx, 1]]),
                  np.concatenate([up, -un]))
    return loss, grad_ent, grad_rel


def complex_loss_grad(
    ent: np.ndarray,
    rel: np.ndarray,
    rows: np.ndarray,
    labels: np.ndarray,
    l2: float = COMPLEX_L2,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Logistic loss summed over labeled rows (+1 true, -1 corrupted) with
    L2 weight decay on the involved rows, plus dense gradients.

    Like the margin loss, the batch objective sums per-row terms, so hub rows
    take proportionally larger steps; use a smaller learning rate than the
    translational scorer to keep plain SGD stable."""
    h, r, t = ent[rows[:, 0]], rel[rows[:, 1]], ent[rows[:, 2]]
    dh = h.shape[1] // 2
    hr, hi = h[:, :dh], h[:, dh:]
    rr, ri = r[:, :dh], r[:, dh:]
    tr, ti = t[:, :dh], t[:, dh:]
    s = np.sum((hr * rr - hi * ri) * tr + (hr * ri + hi * rr) * ti, axis=1)
    y = labels.astype(np.float64)
    loss = float(np.sum(np.logaddexp(0.0, -y * s)))
    loss += l2 * float(np.sum(h * h + r * r + t * t))

    ds = (-y * special_expit(-y * s))[:, None]
    gh = np.concatenate([rr * tr + ri * ti, -ri * tr + rr * ti], axis=1) * ds
    gr = np.concatenate([hr * tr + hi * ti, -hi * tr + hr * ti], axis=1) * ds
    gt = np.concatenate([hr * rr - hi * ri, hr * ri + hi * rr], axis=1) * ds
    reg = 2.0 * l2
    gh += reg * h
    gr += reg * r
    gt += reg * t

    grad_ent = np.zeros_like(ent)
    grad_rel = np.zeros_like(rel)
    np.add.at(grad_ent, rows[:, 0], gh)
    np.add.at(grad_rel, rows[:, 1], gr)
    np.add.at(grad_ent, rows[:, 2], gt)
    return loss, grad_ent, grad_rel


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _triple_codes(rows: np.ndarray, n_entities: int, n_relations: int) -> np.ndarray:
    return (rows[:, 0] * n_relations + rows[:, 1]) * n_entities + rows[:, 2]


def _corrupt(
    pos: np.ndarray,
    k: int,
    rng: np.random.Generator,
    sorted_codes: np.ndarray,
    n_entities: int,
    n_relations: int,
) -> np.ndarray:
    """k negatives per positive: corrupt head or tail (coin flip), resampling
    uniformly until the corrupted triple is not a true training triple.
    Membership is tested against the sorted int64 codes of the true set."""
    rep = np.repeat(pos, k, axis=0)
    side = rng.integers(2, size=rep.shape[0])
    cand = rng.integers(n_entities, size=rep.shape[0])
    neg = rep.copy()
    head_side = side == 0
    neg[head_side, 0] = cand[head_side]
    neg[~head_side, 2] = cand[~head_side]
    pending = np.arange(rep.shape[0])
    while pending.size:
        codes = _triple_codes(neg[pending], n_entities, n_relations)
        pos_in = np.searchsorted(sorted_codes, codes)
        pos_in = np.minimum(pos_in, sorted_codes.size - 1)
        bad = pending[sorted_codes[pos_in] == codes]
        if bad.size == 0:
            return neg
        redraw = rng.integers(n_entities, size=bad.size)
        bad_heads = bad[side[bad] == 0]
        bad_tails = bad[side[bad] == 1]
        neg[bad_heads, 0] = redraw[side[bad] == 0]
        neg[bad_tails, 2] = redraw[side[bad] == 1]
        pending = bad
    return neg


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.maximum(norms, 1e-12)


def train_kge(
    g: KnowledgeGraph, cfg: KgeConfig
) -> tuple[EmbeddingTable, list[float]]:
    """Train embeddings from scratch; returns the table and the per-epoch
    mean-loss series.  Bit-reproducible for a fixed config."""
    if g.n_triples == 0:
        raise ValueError("cannot train on an empty graph")
    rng = np.random.default_rng([cfg.seed])
    bound = 6.0 / math.sqrt(cfg.dim)
    ent = rng.uniform(-bound, bound, size=(g.n_entities, cfg.dim))
    rel = rng.uniform(-bound, bound, size=(g.n_relations, cfg.dim))
    triples = g.triples
    sorted_codes = np.sort(_triple_codes(triples, g.n_entities, g.n_relations))
    k = cfg.negatives_per_positive
    losses: list[float] = []

    for epoch in range(1, cfg.epochs + 1):
        if cfg.scorer == "translational":
            ent = _normalize_rows(ent)
        perm = rng.permutation(g.n_triples)
        loss_sum = 0.0
        term_count = 0
        for lo in range(0, g.n_triples, cfg.batch_size):
            batch = triples[perm[lo : lo + cfg.batch_size]]
            neg = _corrupt(batch, k, rng, sorted_codes, g.n_entities, g.n_relations)
            if cfg.scorer == "translational":
                pos = np.repeat(batch, k, axis=0)
                loss, g_ent, g_rel = transe_loss_grad(ent, rel, pos, neg, cfg.margin)
                n_terms = pos.shape[0]
            else:
                rows = np.concatenate([batch, neg], axis=0)
                labels = np.concatenate(
                    [np.ones(batch.shape[0]), -np.ones(neg.shape[0])]
                )
                loss, g_ent, g_rel = complex_loss_grad(ent, rel, rows, labels)
                n_terms = rows.shape[0]
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            ent -= cfg.learning_rate * g_ent
            rel -= cfg.learning_rate * g_rel
            loss_sum += loss
            term_count += n_terms
        # reported as the epoch's mean loss per pair/sample
        losses.append(loss_sum / term_count)

    table = EmbeddingTable(
        entity_labels=g.entities,
        relation_labels=g.relations,
        entity_vectors=ent,
        relation_vectors=rel,
        scorer=cfg.scorer,
    )
    return table, losses


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------


def rank_tail(
    emb: EmbeddingTable,
    head: int | np.ndarray,
    relation: int,
    true_tail: int,
    filter: Iterable[tuple[int, int, int]] = (),
    head_id: int | None = None,
    exclude_tails: Iterable[int] | None = None,
) -> int:
    """1-based filtered rank of ``true_tail`` among all candidate tails.

    ``head`` may be an entity id or a raw vector (mapped open-world entity);
    ``filter`` entries (h, r, t') with h == head_id and r == relation are
    removed from the candidate set, except the true tail itself.  Ties get the
    mean rank of the tied block, rounded up.  ``exclude_tails`` is a
    precomputed alternative to scanning ``filter``.
    """
    if isinstance(head, (int, np.integer)):
        head_vec = emb.entity_vectors[head]
        if head_id is None:
            head_id = int(head)
    else:
        head_vec = np.asarray(head, dtype=np.float64)
    scores = score_tails(emb, head_vec, relation)

    if exclude_tails is None:
        exclude_tails = []
        for h2, r2, t2 in filter:
            if h2 == head_id and r2 == relation and t2 != true_tail:
                exclude_tails.append(t2)
    for t2 in exclude_tails:
        if t2 != true_tail:
            scores[t2] = -np.inf

    s0 = scores[true_tail]
    better = int(np.sum(scores > s0))
    tied = int(np.sum(scores == s0))
    return better + (tied + 2) // 2


def mrr(ranks: Sequence[int]) -> float:
    """Arithmetic mean of reciprocal ranks."""
    if len(ranks) == 0:
        raise EmptyEvaluationError("mrr of an empty rank list")
    return math.fsum(1.0 / r for r in ranks) / len(ranks)


def hits_at_k(ranks: Sequence[int], k: int) -> float:
    """Fraction of queries whose true entity ranks within the top k."""
    if len(ranks) == 0:
        raise EmptyEvaluationError("hits@k of an empty rank list")
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for r in ranks if r <= k) / len(ranks)


@dataclass
class RankingResult:
    ranks: list[int]
    queries: list[tuple[int, int, int]]
    mrr: float
    hits_at_k: dict[int, float]
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "hits_at_k": {str(k): v for k, v in sorted(self.hits_at_k.items())},
            "n_queries": len(self.ranks),
            "skipped": self.skipped,
            "ranks": self.ranks,
        }


def make_ranking_result(
    ranks: Sequence[int],
    queries: Sequence[tuple[int, int, int]],
    ks: Sequence[int] = (1, 3, 10),
    skipped: int = 0,
) -> RankingResult:
    return RankingResult(
        ranks=list(ranks),
        queries=list(queries),
        mrr=mrr(ranks),
        hits_at_k={k: hits_at_k(ranks, k) for k in ks},
        skipped=skipped,
    )


def evaluate_tail_queries(
    emb: EmbeddingTable,
    queries: Sequence[tuple[int, int, int]],
    filter: Iterable[tuple[int, int, int]] = (),
    ks: Sequence[int] = (1, 3, 10),
) -> RankingResult:
    """Filtered tail ranking over (head, relation, tail) id queries."""
    by_query: dict[tuple[int, int], list[int]] = {}
    for h, r, t in filter:
        by_query.setdefault((h, r), []).append(t)
    ranks = [
        rank_tail(
            emb, h, r, t, exclude_tails=by_query.get((h, r), ())
        )
        for h, r, t in queries
    ]
    return make_ranking_result(ranks, queries, ks)


# ---------------------------------------------------------------------------
# Embedding file format
# ---------------------------------------------------------------------------


def save_embeddings(emb: EmbeddingTable, path: str) -> None:
    """Header 'dim=.. scorer=.. count=.. entities=.. relations=..', then one
    '<label> TAB <comma-separated decimals>' row per id (entities first).
    Values use repr precision, so the file round-trips exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        n_e, n_r = len(emb.entity_labels), len(emb.relation_labels)
        fh.write(
            f"dim={emb.dim} scorer={emb.scorer} count={n_e + n_r} "
            f"entities={n_e} relations={n_r}\n"
        )
        for labels, vecs in (
            (emb.entity_labels, emb.entity_vectors),
            (emb.relation_labels, emb.relation_vectors),
        ):
            for lab, vec in zip(labels, vecs):
                fh.write(lab + "\t" + ",".join(repr(v) for v in vec.tolist()) + "\n")


def load_embeddings(path: str) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        meta = dict(part.split("=", 1) for part in header.split())
        dim = int(meta["dim"])
        n_e, n_r = int(meta["entities"]), int(meta["relations"])
        labels: list[str] = []
        rows: list[list[float]] = []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            lab, _, vals = line.partition("\t")
            labels.append(lab)
            rows.append([float(v) for v in vals.split(",")])
    if len(labels) != n_e + n_r:
        raise ValueError(f"{path}: expected {n_e + n_r} rows, found {len(labels)}")
    mat = np.array(rows, dtype=np.float64).reshape(len(labels), dim)
    return EmbeddingTable(
        entity_labels=tuple(labels[:n_e]),
        relation_labels=tuple(labels[n_e:]),
        entity_vectors=mat[:n_e],
        relation_vectors=mat[n_e:],
        scorer=meta["scorer"],
    )
