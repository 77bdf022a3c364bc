"""Embedding quality index and the two comparison protocols: degree-stratified
within one graph, and cross-subgraph by degree distribution index.

The index of one entity contrasts embedding-space distances to its k most
link-similar peers against its k least link-similar peers:

    Q = (sum_d - sum_s) / sum_d,   sum_s over C_s, sum_d over C_d

so Q = 1 means perfect separation and Q <= 0 none.  Link similarity blends
the Jaccard overlap of neighbor sets and of incident relation-type sets.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import (
    DegenerateDenominatorError,
    InsufficientStratumError,
    NoCommonEntitiesError,
)
from .graph import KnowledgeGraph, degree_vector
from .kge import EmbeddingTable

DISTANCES = ("euclidean", "cosine")


@dataclass(frozen=True)
class QualityConfig:
    alpha: float = 0.5
    k_neighbors: int = 10
    distance: str = "euclidean"
    sample_size: int = 200
    epsilon_low: float | None = None   # None: 25th degree percentile
    epsilon_high: float | None = None  # None: 75th degree percentile
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.distance not in DISTANCES:
            raise ValueError(f"unknown distance {self.distance!r}")
        if self.epsilon_low is not None and self.epsilon_high is not None:
            if not self.epsilon_low < self.epsilon_high:
                raise ValueError("need epsilon_low < epsilon_high")
        if self.k_neighbors < 1 or self.sample_size < 1:
            raise ValueError("k_neighbors and sample_size must be positive")


def jaccard(a: Iterable, b: Iterable) -> float:
    """|a & b| / |a | b|, with 0 for two empty sets."""
    a, b = set(a), set(b)
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def link_similarity(g: KnowledgeGraph, e: int, e0: int, alpha: float) -> float:
    """alpha-weighted blend of neighbor-set and relation-set Jaccard overlap."""
    if e == e0:
        raise ValueError("link similarity of an entity with itself")
    n_j = jaccard(g.neighbor_sets[e0], g.neighbor_sets[e])
    r_j = jaccard(g.relation_sets[e0], g.relation_sets[e])
    return alpha * n_j + (1.0 - alpha) * r_j


def _distances(vectors: np.ndarray, x0: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        return np.linalg.norm(vectors - x0, axis=1)
    norms = np.linalg.norm(vectors, axis=1) * max(np.linalg.norm(x0), 1e-300)
    cos = vectors @ x0 / np.maximum(norms, 1e-300)
    return 1.0 - cos


def _similarity_row(g: KnowledgeGraph, e0: int, alpha: float) -> np.ndarray:
    n0, r0 = g.neighbor_sets[e0], g.relation_sets[e0]
    sims = np.empty(g.n_entities, dtype=np.float64)
    for e in range(g.n_entities):
        ne, re = g.neighbor_sets[e], g.relation_sets[e]
        un = len(n0 | ne)
        ur = len(r0 | re)
        nj = len(n0 & ne) / un if un else 0.0
        rj = len(r0 & re) / ur if ur else 0.0
        sims[e] = alpha * nj + (1.0 - alpha) * rj
    return sims


def embedding_quality_index(
    g: KnowledgeGraph, emb: EmbeddingTable, e0: int, cfg: QualityConfig
) -> float:
    """Quality index of one entity (ids are graph/table row ids)."""
    k = cfg.k_neighbors
    if g.n_entities < 2 * k + 1:
        raise ValueError(f"need at least {2 * k + 1} entities for k={k}")
    if len(g.neighbor_sets[e0]) == 0:
        raise ValueError(f"entity {e0} has degree 0")
    sims = _similarity_row(g, e0, cfg.alpha)
    ids = np.arange(g.n_entities)
    candidates = ids[ids != e0]
    cand_sims = sims[candidates]
    # ties at the C_s / C_d boundary break by ascending entity id
    most = candidates[np.lexsort((candidates, -cand_sims))][:k]
    least = candidates[np.lexsort((candidates, cand_sims))][:k]
    x0 = emb.entity_vectors[e0]
    d_sim = _distances(emb.entity_vectors[most], x0, cfg.distance)
    d_dis = _distances(emb.entity_vectors[least], x0, cfg.distance)
    denom = math.fsum(d_dis.tolist())
    if denom == 0.0:
        raise DegenerateDenominatorError(
            f"dissimilar-set distances for entity {e0} sum to zero"
        )
    return (denom - math.fsum(d_sim.tolist())) / denom


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class EntityQuality:
    entity: str
    graph: str
    degree: int
    stratum: str
    q: float


@dataclass
class QualityReport:
    mode: str
    records: list[EntityQuality]
    group_means: dict[str, float]
    config: QualityConfig
    skipped: int = 0

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "schema_version": 1,
            "mode": self.mode,
            "config": {
                "alpha": cfg.alpha,
                "k_neighbors": cfg.k_neighbors,
                "distance": cfg.distance,
                "sample_size": cfg.sample_size,
                "epsilon_low": cfg.epsilon_low,
                "epsilon_high": cfg.epsilon_high,
                "seed": cfg.seed,
            },
            "group_means": dict(sorted(self.group_means.items())),
            "skipped": self.skipped,
            "entities": [
                {
                    "entity": r.entity,
                    "graph": r.graph,
                    "degree": r.degree,
                    "stratum": r.stratum,
                    "q": r.q,
                }
                for r in self.records
            ],
        }

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["entity", "graph", "degree", "stratum", "q"])
            for r in self.records:
                writer.writerow([r.entity, r.graph, r.degree, r.stratum, repr(r.q)])


def resolve_thresholds(
    degrees: np.ndarray,
    epsilon_low: float | None = None,
    epsilon_high: float | None = None,
) -> tuple[float, float]:
    """Explicit thresholds when given, else degree-distribution percentiles
    (25th for low, 75th for high)."""
    eps_l = epsilon_low
    eps_h = epsilon_high
    if eps_l is None:
        eps_l = float(np.percentile(degrees, 25))
    if eps_h is None:
        eps_h = float(np.percentile(degrees, 75))
    if not eps_l < eps_h:
        raise ValueError(f"degenerate degree thresholds: {eps_l} !< {eps_h}")
    return eps_l, eps_h


def _stratum(degree: float, eps_l: float, eps_h: float) -> str:
    if degree <= eps_l:
        return "low"
    if degree >= eps_h:
        return "high"
    return "mid"


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values)


def compare_by_degree(
    g: KnowledgeGraph, emb: EmbeddingTable, cfg: QualityConfig
) -> QualityReport:
    """Degree-stratified protocol: sample ``sample_size`` entities from the
    low stratum (degree <= eps_low) and from the high stratum (degree >=
    eps_high), compute per-entity quality, and report the two group means."""
    deg = degree_vector(g)
    eps_l, eps_h = resolve_thresholds(deg, cfg.epsilon_low, cfg.epsilon_high)
    positive = deg >= 1
    low_ids = np.flatnonzero(positive & (deg <= eps_l))
    high_ids = np.flatnonzero(deg >= eps_h)
    n = cfg.sample_size
    if len(low_ids) < n or len(high_ids) < n:
        raise InsufficientStratumError(len(low_ids), len(high_ids), n)
    rng = np.random.default_rng([cfg.seed])
    low_sample = rng.choice(low_ids, size=n, replace=False)
    high_sample = rng.choice(high_ids, size=n, replace=False)

    records: list[EntityQuality] = []
    skipped = 0
    for stratum, sample in (("low", low_sample), ("high", high_sample)):
        for e0 in sample.tolist():
            try:
                q = embedding_quality_index(g, emb, e0, cfg)
            except DegenerateDenominatorError:
                skipped += 1
                continue
            records.append(
                EntityQuality(g.entities[e0], "g", int(deg[e0]), stratum, q)
            )
    means = {
        s: _mean([r.q for r in records if r.stratum == s]) for s in ("low", "high")
    }
    return QualityReport("by-degree", records, means, cfg, skipped)


def compare_by_distribution(
    g1: KnowledgeGraph,
    g2: KnowledgeGraph,
    emb1: EmbeddingTable,
    emb2: EmbeddingTable,
    cfg: QualityConfig,
) -> QualityReport:
    """Cross-subgraph protocol: every entity common to both graphs gets a
    quality index in each embedding space; reports overall means plus the
    means restricted to each graph's own low/high degree strata."""
    common = sorted(set(g1.entities) & set(g2.entities))
    if not common:
        raise NoCommonEntitiesError("the graphs share no entities")
    deg1, deg2 = degree_vector(g1), degree_vector(g2)
    eps1 = resolve_thresholds(deg1, cfg.epsilon_low, cfg.epsilon_high)
    eps2 = resolve_thresholds(deg2, cfg.epsilon_low, cfg.epsilon_high)

    records: list[EntityQuality] = []
    skipped = 0
    for label in common:
        per_graph = []
        for tag, g, emb, deg, eps in (
            ("g1", g1, emb1, deg1, eps1),
            ("g2", g2, emb2, deg2, eps2),
        ):
            e0 = g.entity_index[label]
            if deg[e0] < 1:
                per_graph = []
                break
            try:
                q = embedding_quality_index(g, emb, e0, cfg)
            except DegenerateDenominatorError:
                per_graph = []
                break
            per_graph.append(
                EntityQuality(label, tag, int(deg[e0]), _stratum(deg[e0], *eps), q)
            )
        if per_graph:
            records.extend(per_graph)
        else:
            skipped += 1

    means: dict[str, float] = {}
    for tag in ("g1", "g2"):
        rows = [r for r in records if r.graph == tag]
        means[tag] = _mean([r.q for r in rows])
        for stratum in ("low", "high"):
            sub = [r.q for r in rows if r.stratum == stratum]
            if sub:
                means[f"{tag}_{stratum}"] = _mean(sub)
    return QualityReport("by-distribution", records, means, cfg, skipped)
