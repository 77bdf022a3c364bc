"""Knowledge-graph data model, ingestion, degree statistics, and the six
structural characteristics used throughout the toolkit.

A graph is a directed multigraph of (head, relation, tail) triples over
interned entity/relation vocabularies.  Instances are immutable after
construction and safe to share across workers; every characteristic below is
a pure function of the graph.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DatasetError,
    ParseError,
    UndefinedDensityError,
    UndefinedIndexError,
)

LabelTriple = tuple[str, str, str]


@dataclass(frozen=True)
class Triple:
    """One directed fact: ids into the owning graph's vocabularies."""

    head: int
    relation: int
    tail: int


@dataclass
class KnowledgeGraph:
    """Interned triple store with adjacency indexes.

    ``entities`` and ``relations`` are ordered vocabularies (first-appearance
    order); ``triples`` is an ``(m, 3)`` int array of (head, relation, tail)
    ids with exact duplicates dropped at construction.  Treat instances as
    immutable: the triple array is marked read-only.
    """

    entities: tuple[str, ...]
    relations: tuple[str, ...]
    triples: np.ndarray
    duplicates_dropped: int = 0
    # Extra splits for owe-directory datasets: split name -> raw label triples.
    aux_splits: dict[str, tuple[LabelTriple, ...]] = field(default_factory=dict)
    descriptions: dict[str, str] | None = None

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        self.triples.setflags(write=False)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_triples(self) -> int:
        return int(self.triples.shape[0])

    @cached_property
    def entity_index(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.entities)}

    @cached_property
    def relation_index(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.relations)}

    @cached_property
    def triple_set(self) -> frozenset[tuple[int, int, int]]:
        return frozenset(map(tuple, self.triples.tolist()))

    @cached_property
    def out_adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per entity: ((relation, tail), ...) in triple order."""
        out: list[list[tuple[int, int]]] = [[] for _ in range(self.n_entities)]
        for h, r, t in self.triples.tolist():
            out[h].append((r, t))
        return tuple(tuple(lst) for lst in out)

    @cached_property
    def in_adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per entity: ((relation, head), ...) in triple order."""
        inc: list[list[tuple[int, int]]] = [[] for _ in range(self.n_entities)]
        for h, r, t in self.triples.tolist():
            inc[t].append((r, h))
        return tuple(tuple(lst) for lst in inc)

    @cached_property
    def undirected_neighbors(self) -> tuple[np.ndarray, ...]:
        """Per entity: sorted unique neighbor ids over the undirected
        simple projection (self-loops dropped)."""
        sets: list[set[int]] = [set() for _ in range(self.n_entities)]
        for h, _, t in self.triples.tolist():
            if h != t:
                sets[h].add(t)
                sets[t].add(h)
        return tuple(np.fromiter(sorted(s), dtype=np.int64, count=len(s)) for s in sets)

    @cached_property
    def neighbor_sets(self) -> tuple[frozenset[int], ...]:
        """Per entity: union of out- and in-neighbor ids (self included only
        via self-loops)."""
        sets: list[set[int]] = [set() for _ in range(self.n_entities)]
        for h, _, t in self.triples.tolist():
            sets[h].add(t)
            sets[t].add(h)
        return tuple(frozenset(s) for s in sets)

    @cached_property
    def relation_sets(self) -> tuple[frozenset[int], ...]:
        """Per entity: set of incident relation types (either direction)."""
        sets: list[set[int]] = [set() for _ in range(self.n_entities)]
        for h, r, t in self.triples.tolist():
            sets[h].add(r)
            sets[t].add(r)
        return tuple(frozenset(s) for s in sets)

    def iter_triples(self) -> Iterator[Triple]:
        for h, r, t in self.triples.tolist():
            yield Triple(h, r, t)

    def label_triples(self) -> list[LabelTriple]:
        ents, rels = self.entities, self.relations
        return [(ents[h], rels[r], ents[t]) for h, r, t in self.triples.tolist()]


def from_label_triples(
    rows: Iterable[LabelTriple],
    *,
    aux_splits: dict[str, tuple[LabelTriple, ...]] | None = None,
    descriptions: dict[str, str] | None = None,
) -> KnowledgeGraph:
    """Intern labels in first-appearance order; drop exact duplicate rows."""
    ent_index: dict[str, int] = {}
    rel_index: dict[str, int] = {}
    seen: set[tuple[int, int, int]] = set()
    triples: list[tuple[int, int, int]] = []
    duplicates = 0
    for h_lab, r_lab, t_lab in rows:
        h = ent_index.setdefault(h_lab, len(ent_index))
        r = rel_index.setdefault(r_lab, len(rel_index))
        t = ent_index.setdefault(t_lab, len(ent_index))
        key = (h, r, t)
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        triples.append(key)
    return KnowledgeGraph(
        entities=tuple(ent_index),
        relations=tuple(rel_index),
        triples=np.array(triples, dtype=np.int64).reshape(-1, 3),
        duplicates_dropped=duplicates,
        aux_splits=aux_splits or {},
        descriptions=descriptions,
    )


def _read_tsv_triples(path: str) -> list[LabelTriple]:
    rows: list[LabelTriple] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            rows.append((parts[0], parts[1], parts[2]))
    if not rows:
        raise DatasetError(f"empty dataset: {path}")
    return rows


def _read_descriptions(path: str) -> dict[str, str]:
    desc: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise ParseError(path, lineno, "expected 'entity TAB description'")
            desc[parts[0]] = parts[1]
    return desc


def load_graph(path: str, format: str = "tsv-triples") -> KnowledgeGraph:
    """Load a dataset.

    ``tsv-triples``: one (head, relation, tail) per line, tab-separated.
    ``owe-directory``: a directory holding train.txt/valid.txt/test.txt in the
    same format (plus an optional ``entity2text.txt`` descriptions file); the
    returned graph is built from the train split, with valid/test kept as raw
    label triples under ``aux_splits``.
    """
    if format == "tsv-triples":
        if not os.path.isfile(path):
            raise DatasetError(f"no such file: {path}")
        return from_label_triples(_read_tsv_triples(path))
    if format == "owe-directory":
        if not os.path.isdir(path):
            raise DatasetError(f"no such directory: {path}")
        train_path = os.path.join(path, "train.txt")
        if not os.path.isfile(train_path):
            raise DatasetError(f"owe-directory layout requires train.txt under {path}")
        aux: dict[str, tuple[LabelTriple, ...]] = {}
        for split in ("valid", "test"):
            split_path = os.path.join(path, f"{split}.txt")
            if os.path.isfile(split_path):
                aux[split] = tuple(_read_tsv_triples(split_path))
        desc = None
        desc_path = os.path.join(path, "entity2text.txt")
        if os.path.isfile(desc_path):
            desc = _read_descriptions(desc_path)
        return from_label_triples(
            _read_tsv_triples(train_path), aux_splits=aux, descriptions=desc
        )
    raise DatasetError(f"unknown dataset format: {format!r}")


def save_graph(g: KnowledgeGraph, path: str) -> None:
    """Write the graph as tsv-triples (one triple per line, in triple order)."""
    with open(path, "w", encoding="utf-8") as fh:
        for h_lab, r_lab, t_lab in g.label_triples():
            fh.write(f"{h_lab}\t{r_lab}\t{t_lab}\n")


# ---------------------------------------------------------------------------
# Degree statistics and Gini-form imbalance indices
# ---------------------------------------------------------------------------


def degree_vector(g: KnowledgeGraph) -> np.ndarray:
    """Total degree (in + out over directed triples) per entity id.

    Isolated vocabulary entities get degree 0; the sum over all entities is
    exactly twice the triple count.
    """
    n = g.n_entities
    deg = np.bincount(g.triples[:, 0], minlength=n) + np.bincount(
        g.triples[:, 2], minlength=n
    )
    return deg.astype(np.int64)


def gini_index(values: Sequence[float] | np.ndarray) -> float:
    """Mean absolute difference over all ordered pairs, normalized by twice
    the mean: sum_{i,j} |x_i - x_j| / (2 n^2 xbar).

    Computed via the sorted prefix-sum identity in O(n log n); the O(n^2)
    definition is kept in the test suite as the oracle.  Result lies in
    [0, 1 - 1/n].
    """
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n == 0:
        raise UndefinedIndexError("no values")
    total = float(x.sum())
    if total <= 0.0:
        raise UndefinedIndexError("index undefined: mean value is zero")
    k = np.arange(n, dtype=np.float64)
    pairwise = 2.0 * float(np.sum((2.0 * k - n + 1.0) * x))
    return pairwise / (2.0 * n * total)


def degree_distribution_index(degrees: Sequence[int] | np.ndarray) -> float:
    """Imbalance of the entity degree distribution (Gini form over degrees)."""
    return gini_index(degrees)


def relation_type_index(g: KnowledgeGraph) -> float:
    """Imbalance of per-relation triple counts (Gini form over counts)."""
    if g.n_triples == 0 or g.n_relations == 0:
        raise UndefinedIndexError("relation type index undefined: no triples")
    counts = np.bincount(g.triples[:, 1], minlength=g.n_relations)
    return gini_index(counts)


# ---------------------------------------------------------------------------
# Graph-level characteristics
# ---------------------------------------------------------------------------


def graph_density(g: KnowledgeGraph) -> float:
    """Distinct directed entity pairs with at least one triple, over n(n-1).

    Parallel relations between the same pair count once; self-loops are not
    counted (the n(n-1) maximum excludes them).
    """
    n = g.n_entities
    if n < 2:
        raise UndefinedDensityError(f"density undefined for {n} entities")
    h, t = g.triples[:, 0], g.triples[:, 2]
    off_loop = h != t
    pairs = np.unique(h[off_loop].astype(np.int64) * n + t[off_loop])
    return float(pairs.size) / (n * (n - 1))


def global_clustering_coefficient(g: KnowledgeGraph) -> float:
    """Transitivity of the undirected simple projection.

    3 x (number of triangles) / (number of connected ordered triplets, i.e.
    length-2 paths); 0 when no such triplet exists.
    """
    neigh = [set(a.tolist()) for a in g.undirected_neighbors]
    degs = np.array([len(s) for s in neigh], dtype=np.float64)
    triads = float(np.sum(degs * (degs - 1.0)))
    if triads == 0.0:
        return 0.0
    closed = 0
    for u, nu in enumerate(neigh):
        for v in nu:
            if v > u:
                closed += len(nu & neigh[v])
    # closed = 3 * triangles (one count per edge of each triangle);
    # unordered length-2 paths = triads / 2.
    return 2.0 * closed / triads


def strongly_connected_components(g: KnowledgeGraph) -> int:
    """Number of SCCs of the directed graph (Kosaraju, iterative).

    Isolated vocabulary entities count as singleton components.
    """
    n = g.n_entities
    out: list[list[int]] = [[] for _ in range(n)]
    rev: list[list[int]] = [[] for _ in range(n)]
    for h, _, t in g.triples.tolist():
        out[h].append(t)
        rev[t].append(h)

    order: list[int] = []
    state = np.zeros(n, dtype=np.int8)  # 0 unseen, 1 on stack, 2 done
    for root in range(n):
        if state[root]:
            continue
        stack = [(root, 0)]
        state[root] = 1
        while stack:
            node, ptr = stack[-1]
            if ptr < len(out[node]):
                stack[-1] = (node, ptr + 1)
                nxt = out[node][ptr]
                if not state[nxt]:
                    state[nxt] = 1
                    stack.append((nxt, 0))
            else:
                stack.pop()
                state[node] = 2
                order.append(node)

    seen = np.zeros(n, dtype=bool)
    components = 0
    for root in reversed(order):
        if seen[root]:
            continue
        components += 1
        stack2 = [root]
        seen[root] = True
        while stack2:
            node = stack2.pop()
            for nxt in rev[node]:
                if not seen[nxt]:
                    seen[nxt] = True
                    stack2.append(nxt)
    return components


_CHARACTERISTIC_FIELDS = (
    "graph_density",
    "global_clustering_coefficient",
    "num_relation_types",
    "degree_distribution_index",
    "relation_type_index",
    "num_strongly_connected_components",
)


@dataclass(frozen=True)
class StructuralCharacteristics:
    """The six-component characteristics vector of one (sub)graph.

    Field order is the fixed serialization order used everywhere a vector
    representation is needed.
    """

    graph_density: float
    global_clustering_coefficient: float
    num_relation_types: int
    degree_distribution_index: float
    relation_type_index: float
    num_strongly_connected_components: int

    FIELDS = _CHARACTERISTIC_FIELDS

    def __post_init__(self):
        for name in _CHARACTERISTIC_FIELDS:
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite characteristic {name}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [float(getattr(self, name)) for name in _CHARACTERISTIC_FIELDS],
            dtype=np.float64,
        )

    def to_dict(self) -> dict[str, float | int]:
        return {name: getattr(self, name) for name in _CHARACTERISTIC_FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "StructuralCharacteristics":
        return cls(**{name: d[name] for name in _CHARACTERISTIC_FIELDS})


def structural_characteristics(g: KnowledgeGraph) -> StructuralCharacteristics:
    """Compute all six characteristics; requires a non-empty graph."""
    if g.n_triples == 0 or g.n_entities < 2:
        raise UndefinedIndexError(
            "characteristics require at least 2 entities and 1 triple"
        )
    return StructuralCharacteristics(
        graph_density=graph_density(g),
        global_clustering_coefficient=global_clustering_coefficient(g),
        num_relation_types=g.n_relations,
        degree_distribution_index=degree_distribution_index(degree_vector(g)),
        relation_type_index=relation_type_index(g),
        num_strongly_connected_components=strongly_connected_components(g),
    )
