"""Connected-subgraph sampling: high-degree-seeded BFS with a randomized
sampling ratio, yielding (subgraph, characteristics) pairs.

Each sample is fully determined by (parent graph, config, sample_index); the
per-sample random stream is derived from (seed, sample_index) so batches can
run in any order or in parallel without changing results.
"""

from __future__ import annotations

import json
import logging
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import UndersizedComponentError
from .graph import (
    KnowledgeGraph,
    StructuralCharacteristics,
    degree_vector,
    from_label_triples,
    save_graph,
    structural_characteristics,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    ratio_min: float = 0.5
    ratio_max: float = 1.0
    top_k_start: int = 10
    seed: int = 0
    num_samples: int = 1

    def __post_init__(self):
        if not (0.0 < self.ratio_min <= self.ratio_max <= 1.0):
            raise ValueError("need 0 < ratio_min <= ratio_max <= 1")
        if self.top_k_start < 1 or self.num_samples < 1:
            raise ValueError("top_k_start and num_samples must be positive")


@dataclass
class SampledSubgraph:
    subgraph: KnowledgeGraph
    characteristics: StructuralCharacteristics
    ratio_used: float
    start_entity: str
    sample_index: int


def _top_k_by_degree(g: KnowledgeGraph, k: int) -> np.ndarray:
    """Entity ids of the k highest-degree entities, ties broken by id."""
    deg = degree_vector(g)
    order = np.lexsort((np.arange(g.n_entities), -deg))
    return order[: min(k, g.n_entities)]


def _bfs_collect(
    g: KnowledgeGraph, start: int, target: int, rng: np.random.Generator
) -> list[int]:
    """FIFO BFS over the undirected projection with shuffled neighbor
    expansion; returns up to ``target`` node ids in visit order."""
    visited = np.zeros(g.n_entities, dtype=bool)
    visited[start] = True
    collected = [start]
    queue: deque[int] = deque([start])
    while queue and len(collected) < target:
        node = queue.popleft()
        neighbors = g.undirected_neighbors[node].copy()
        rng.shuffle(neighbors)
        for nxt in neighbors.tolist():
            if not visited[nxt]:
                visited[nxt] = True
                collected.append(nxt)
                queue.append(nxt)
                if len(collected) == target:
                    break
    return collected


def induce_subgraph(g: KnowledgeGraph, node_ids: list[int]) -> KnowledgeGraph:
    """Subgraph on all parent triples whose head and tail are both sampled."""
    mask = np.zeros(g.n_entities, dtype=bool)
    mask[node_ids] = True
    keep = mask[g.triples[:, 0]] & mask[g.triples[:, 2]]
    ents, rels = g.entities, g.relations
    rows = [
        (ents[h], rels[r], ents[t]) for h, r, t in g.triples[keep].tolist()
    ]
    return from_label_triples(rows)


def sample_subgraph(
    g: KnowledgeGraph, cfg: SamplerConfig, sample_index: int
) -> SampledSubgraph:
    """Draw one connected subgraph.

    Draws the ratio r uniformly from [ratio_min, ratio_max], picks a start
    uniformly among the ``top_k_start`` highest-degree entities, and BFS-grows
    until round(|V| * r) nodes are collected.  If the start's component is
    exhausted early the next top-k entity is tried (up to k attempts) before
    an UndersizedComponentError is raised.
    """
    if g.n_entities < 2:
        raise ValueError("parent graph needs at least 2 entities")
    rng = np.random.default_rng([cfg.seed, sample_index])
    ratio = float(rng.uniform(cfg.ratio_min, cfg.ratio_max))
    target = round(g.n_entities * ratio)
    top_k = _top_k_by_degree(g, cfg.top_k_start)
    first_choice = int(rng.integers(len(top_k)))

    best = 0
    nodes: list[int] | None = None
    start = -1
    for attempt in range(len(top_k)):
        start = int(top_k[(first_choice + attempt) % len(top_k)])
        collected = _bfs_collect(g, start, target, rng)
        if len(collected) == target:
            nodes = collected
            break
        best = max(best, len(collected))
    if nodes is None:
        raise UndersizedComponentError(requested=target, achieved=best)

    sub = induce_subgraph(g, nodes)
    return SampledSubgraph(
        subgraph=sub,
        characteristics=structural_characteristics(sub),
        ratio_used=ratio,
        start_entity=g.entities[start],
        sample_index=sample_index,
    )


def _sample_or_none(
    g: KnowledgeGraph, cfg: SamplerConfig, index: int
) -> SampledSubgraph | None:
    try:
        return sample_subgraph(g, cfg, index)
    except UndersizedComponentError as exc:
        log.warning("sample %d skipped: %s", index, exc)
        return None


def sample_batch(
    g: KnowledgeGraph, cfg: SamplerConfig, workers: int = 1
) -> list[SampledSubgraph]:
    """Draw ``cfg.num_samples`` independent subgraphs (indexes 0..n-1).

    Undersized-component failures are logged and skipped; results are ordered
    by sample_index and independent of the worker count.
    """
    indexes = range(cfg.num_samples)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sample_or_none, [g] * cfg.num_samples, [cfg] * cfg.num_samples, indexes))
    else:
        results = [_sample_or_none(g, cfg, i) for i in indexes]
    return [s for s in results if s is not None]


def write_sample(sample: SampledSubgraph, out_dir: str, seed: int) -> tuple[str, str]:
    """Write one sample as tsv-triples plus a JSON sidecar; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, f"subgraph_{sample.sample_index:03d}")
    tsv_path, json_path = stem + ".tsv", stem + ".json"
    save_graph(sample.subgraph, tsv_path)
    record = dict(sample.characteristics.to_dict())
    record.update(
        ratio_used=sample.ratio_used,
        start_entity=sample.start_entity,
        seed=seed,
        sample_index=sample.sample_index,
        schema_version=1,
    )
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return tsv_path, json_path
