"""Quantitative machinery: quadratic surrogate regression over labeled
(characteristics, performance) samples, variance-based Sobol sensitivity
indices, and Pearson/Spearman correlation with p-values.

Sobol estimation uses the pick-freeze scheme on a scrambled low-discrepancy
point set: two N x d blocks A and B plus the cross blocks AB_i (A with column
i from B) and BA_i (B with column i from A).  First-order indices use the
B-mix form, total-order the squared-difference form, and closed second-order
effects come from the BA_j x AB_k products with the two first-order terms
subtracted.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special
from scipy.stats import qmc, rankdata

from .errors import (
    SurrogateFitError,
    UndefinedCorrelationError,
    UndefinedIndicesError,
)
from .graph import KnowledgeGraph, StructuralCharacteristics, degree_vector


@dataclass(frozen=True)
class LabeledSample:
    theta: StructuralCharacteristics
    mrr: float
    hits10: float
    sample_index: int

    def __post_init__(self):
        if not (np.isfinite(self.mrr) and np.isfinite(self.hits10)):
            raise ValueError("non-finite performance value")


# ---------------------------------------------------------------------------
# Quadratic surrogate
# ---------------------------------------------------------------------------


def _quad_basis(z: np.ndarray) -> np.ndarray:
    """Basis {1, z_i, z_i z_j (i <= j)} on standardized inputs."""
    n, d = z.shape
    cols = [np.ones(n)]
    cols.extend(z[:, i] for i in range(d))
    cols.extend(z[:, i] * z[:, j] for i in range(d) for j in range(i, d))
    return np.stack(cols, axis=1)


def _basis_names(d: int, names: Sequence[str]) -> list[str]:
    out = ["1"]
    out.extend(names)
    out.extend(f"{names[i]}*{names[j]}" for i in range(d) for j in range(i, d))
    return out


@dataclass
class Surrogate:
    kind: str
    coefficients: np.ndarray
    input_mean: np.ndarray
    input_std: np.ndarray
    r2: float
    loo_r2: float
    feature_names: list[str]

    @property
    def dim(self) -> int:
        return int(self.input_mean.size)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = (x - self.input_mean) / self.input_std
        return _quad_basis(z) @ self.coefficients


def fit_surrogate(
    samples: Sequence[LabeledSample],
    target: str = "mrr",
    ridge: float = 1e-4,
) -> Surrogate:
    """Ridge least squares of the chosen target on the quadratic basis over
    standardized characteristic vectors.  Reports in-sample R^2 and the
    closed-form leave-one-out R^2.  The intercept is not penalized."""
    if target not in ("mrr", "hits10"):
        raise ValueError(f"unknown target {target!r}")
    x = np.stack([s.theta.as_array() for s in samples])
    y = np.array([getattr(s, target) for s in samples], dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    z = (x - mean) / std
    basis = _quad_basis(z)
    p = basis.shape[1]
    if ridge <= 0 and basis.shape[0] < p:
        raise SurrogateFitError(
            f"{basis.shape[0]} samples cannot determine {p} coefficients without ridge"
        )
    penalty = np.full(p, ridge)
    penalty[0] = 0.0
    gram = basis.T @ basis + np.diag(penalty)
    try:
        gram_inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise SurrogateFitError(f"singular design: {exc}") from exc
    coef = gram_inv @ basis.T @ y
    if not np.all(np.isfinite(coef)):
        raise SurrogateFitError("non-finite coefficients")

    resid = y - basis @ coef
    sst = float(np.sum((y - y.mean()) ** 2))
    ssr = float(np.sum(resid**2))
    r2 = 1.0 if sst == 0.0 else 1.0 - ssr / sst
    hat_diag = np.einsum("ij,jk,ik->i", basis, gram_inv, basis)
    denom = np.maximum(1.0 - hat_diag, 1e-12)
    press = float(np.sum((resid / denom) ** 2))
    loo_r2 = 1.0 if sst == 0.0 else 1.0 - press / sst
    d = x.shape[1]
    names = list(StructuralCharacteristics.FIELDS)[:d] if d == 6 else [
        f"x{i + 1}" for i in range(d)
    ]
    return Surrogate(
        kind="quadratic-polynomial",
        coefficients=coef,
        input_mean=mean,
        input_std=std,
        r2=r2,
        loo_r2=loo_r2,
        feature_names=_basis_names(d, names),
    )


# ---------------------------------------------------------------------------
# Sobol indices
# ---------------------------------------------------------------------------


@dataclass
class SobolIndices:
    first_order: np.ndarray
    total_order: np.ndarray
    second_order: np.ndarray  # (d, d), diagonal unused (nan)
    first_order_se: np.ndarray
    total_order_se: np.ndarray
    second_order_se: np.ndarray
    sample_count: int
    bounds: np.ndarray  # (d, 2)
    names: list[str]

    def to_dict(self) -> dict:
        d = len(self.names)
        second = [
            [
                None if i == j else self.second_order[i, j]
                for j in range(d)
            ]
            for i in range(d)
        ]
        second_se = [
            [None if i == j else self.second_order_se[i, j] for j in range(d)]
            for i in range(d)
        ]
        return {
            "schema_version": 1,
            "sample_count": self.sample_count,
            "dimensions": [
                {
                    "name": self.names[i],
                    "bounds": [self.bounds[i, 0], self.bounds[i, 1]],
                    "first_order": self.first_order[i],
                    "first_order_se": self.first_order_se[i],
                    "total_order": self.total_order[i],
                    "total_order_se": self.total_order_se[i],
                }
                for i in range(d)
            ],
            "second_order": second,
            "second_order_se": second_se,
        }


def sobol_indices(
    f: Callable[[np.ndarray], np.ndarray] | Surrogate,
    bounds: Sequence[tuple[float, float]],
    n: int,
    seed: int = 0,
    names: Sequence[str] | None = None,
) -> SobolIndices:
    """Estimate first-, second- and total-order indices of ``f`` under inputs
    uniform over the bounds box.  ``f`` must map an (N, d) array to (N,)
    outputs; a fitted Surrogate is accepted directly.  ``n`` must be a power
    of two >= 64 (the point set is a scrambled Sobol sequence)."""
    if n < 64 or n & (n - 1):
        raise ValueError("sample budget must be a power of two >= 64")
    bounds_arr = np.asarray(bounds, dtype=np.float64).reshape(-1, 2)
    d = bounds_arr.shape[0]
    lo, hi = bounds_arr[:, 0], bounds_arr[:, 1]
    if not np.all(np.isfinite(bounds_arr)) or not np.all(lo < hi):
        raise ValueError("bounds must be finite with lo < hi per dimension")
    func = f.predict if isinstance(f, Surrogate) else f

    sampler = qmc.Sobol(d=2 * d, scramble=True, seed=np.random.default_rng([seed]))
    unit = sampler.random(n)
    a = lo + unit[:, :d] * (hi - lo)
    b = lo + unit[:, d:] * (hi - lo)
    y_a = np.asarray(func(a), dtype=np.float64).reshape(n)
    y_b = np.asarray(func(b), dtype=np.float64).reshape(n)
    mu = float(np.concatenate([y_a, y_b]).mean())
    var = float(np.concatenate([y_a, y_b]).var())
    if var == 0.0 or not np.isfinite(var):
        raise UndefinedIndicesError("output variance is zero")
    ca, cb = y_a - mu, y_b - mu

    c_ab = np.empty((d, n))
    c_ba = np.empty((d, n))
    for i in range(d):
        ab = a.copy()
        ab[:, i] = b[:, i]
        c_ab[i] = np.asarray(func(ab), dtype=np.float64).reshape(n) - mu
        ba = b.copy()
        ba[:, i] = a[:, i]
        c_ba[i] = np.asarray(func(ba), dtype=np.float64).reshape(n) - mu

    def stream_stats(terms: np.ndarray) -> tuple[float, float]:
        est = float(terms.mean()) / var
        se = float(terms.std(ddof=1)) / math.sqrt(n) / var
        return est, se

    first = np.empty(d)
    first_se = np.empty(d)
    total = np.empty(d)
    total_se = np.empty(d)
    for i in range(d):
        first[i], first_se[i] = stream_stats(cb * (c_ab[i] - ca))
        total[i], total_se[i] = stream_stats(0.5 * (ca - c_ab[i]) ** 2)

    second = np.full((d, d), np.nan)
    second_se = np.full((d, d), np.nan)
    for j, k in itertools.combinations(range(d), 2):
        closed_terms = c_ba[j] * c_ab[k] - ca * cb
        closed, se = stream_stats(closed_terms)
        second[j, k] = second[k, j] = closed - first[j] - first[k]
        second_se[j, k] = second_se[k, j] = se

    return SobolIndices(
        first_order=first,
        total_order=total,
        second_order=second,
        first_order_se=first_se,
        total_order_se=total_se,
        second_order_se=second_se,
        sample_count=n,
        bounds=bounds_arr,
        names=list(names) if names else [f"x{i + 1}" for i in range(d)],
    )


# ---------------------------------------------------------------------------
# Correlation
# ---------------------------------------------------------------------------


@dataclass
class CorrelationResult:
    pearson_r: float
    spearman_rho: float
    p_value_pearson: float
    p_value_spearman: float
    n: int

    def to_dict(self) -> dict:
        return {
            "pearson_r": self.pearson_r,
            "p_value_pearson": self.p_value_pearson,
            "spearman_rho": self.spearman_rho,
            "p_value_spearman": self.p_value_spearman,
            "n": self.n,
        }


def _check_inputs(x: np.ndarray, y: np.ndarray) -> None:
    if x.size != y.size:
        raise UndefinedCorrelationError("inputs differ in length")
    if x.size < 3:
        raise UndefinedCorrelationError("need at least 3 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("constant input")


def _t_p_value(r: float, n: int) -> float:
    """Two-sided p-value of the correlation t statistic with n-2 degrees of
    freedom, via the regularized incomplete beta function."""
    nu = n - 2
    if 1.0 - r * r <= 0.0:
        return 0.0
    t2 = r * r * nu / (1.0 - r * r)
    return float(special.betainc(nu / 2.0, 0.5, nu / (nu + t2)))


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Sample Pearson r with its two-sided t-approximation p-value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_inputs(x, y)
    cx, cy = x - x.mean(), y - y.mean()
    r = float(np.dot(cx, cy) / math.sqrt(np.dot(cx, cx) * np.dot(cy, cy)))
    r = max(-1.0, min(1.0, r))
    return r, _t_p_value(r, x.size)


def spearman(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Spearman rho: Pearson r of mid-ranks (ties get average ranks)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_inputs(x, y)
    return pearson(rankdata(x, method="average"), rankdata(y, method="average"))


def correlation(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    r, pr = pearson(x, y)
    rho, ps = spearman(x, y)
    return CorrelationResult(r, rho, pr, ps, len(np.asarray(x)))


def permutation_p_value(
    x: Sequence[float], y: Sequence[float], statistic: str = "pearson"
) -> float:
    """Exact two-sided permutation p-value (all n! permutations of y).

    Only sensible for small n; refuses n > 12.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_inputs(x, y)
    n = x.size
    if n > 12:
        raise ValueError("exact permutation test limited to n <= 12")
    if statistic == "spearman":
        x = rankdata(x, method="average")
        y = rankdata(y, method="average")
    elif statistic != "pearson":
        raise ValueError(f"unknown statistic {statistic!r}")
    cx = x - x.mean()
    cx /= math.sqrt(np.dot(cx, cx))
    cy = y - y.mean()
    cy /= math.sqrt(np.dot(cy, cy))
    observed = abs(float(np.dot(cx, cy)))
    hits = 0
    total = 0
    chunk: list = []
    for perm in itertools.permutations(cy.tolist()):
        chunk.append(perm)
        if len(chunk) == 100_000:
            stats = np.abs(np.array(chunk) @ cx)
            hits += int(np.sum(stats >= observed - 1e-12))
            total += len(chunk)
            chunk = []
    if chunk:
        stats = np.abs(np.array(chunk) @ cx)
        hits += int(np.sum(stats >= observed - 1e-12))
        total += len(chunk)
    return hits / total


@dataclass
class DegreeCorrelation:
    unbinned: CorrelationResult
    binned: CorrelationResult
    scatter: list[tuple[int, float]]          # (degree, mean reciprocal rank)
    binned_scatter: list[tuple[int, float]]   # (degree, mean over entities)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "unbinned": self.unbinned.to_dict(),
            "binned": self.binned.to_dict(),
            "scatter": [[d, v] for d, v in self.scatter],
            "binned_scatter": [[d, v] for d, v in self.binned_scatter],
        }


def per_entity_degree_correlation(
    g: KnowledgeGraph, per_entity_mrr: dict[int, float]
) -> DegreeCorrelation:
    """Correlate entity degree against mean per-entity reciprocal rank.

    Emits the entity-level correlation plus a degree-binned variant (entities
    grouped by exact degree, mean value per bin).
    """
    deg = degree_vector(g)
    items = sorted(per_entity_mrr.items())
    degrees = [int(deg[e]) for e, _ in items]
    values = [v for _, v in items]
    unbinned = correlation(degrees, values)

    bins: dict[int, list[float]] = {}
    for d_val, v in zip(degrees, values):
        bins.setdefault(d_val, []).append(v)
    bin_deg = sorted(bins)
    bin_val = [math.fsum(bins[d_val]) / len(bins[d_val]) for d_val in bin_deg]
    binned = correlation(bin_deg, bin_val)
    return DegreeCorrelation(
        unbinned=unbinned,
        binned=binned,
        scatter=list(zip(degrees, values)),
        binned_scatter=list(zip(bin_deg, bin_val)),
    )
