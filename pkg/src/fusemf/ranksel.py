"""Factorization rank estimation.

Quality of a candidate rank vector is measured by internal cross-validation
on the observed target entries: residual sum of squares and explained
variance on held-in and held-out cells, plus the cophenetic correlation of
the consensus clustering of the target types across runs.  A coordinate-wise
bisection walks each type's rank range and stops where the residual curve
flattens.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import isfinite, nan

import numpy as np
from scipy.cluster.hierarchy import cophenet, linkage
from scipy.spatial.distance import squareform

from .factorize import FitConfig, factorize
from .initialization import InitStrategy
from .schema import FusionSchema

__all__ = [
    "RankRange",
    "RankSearchConfig",
    "RankQuality",
    "RankQualityReport",
    "rss",
    "explained_variance",
    "connectivity_matrix",
    "cophenetic",
    "evaluate_rank_vector",
    "select_ranks",
]


@dataclass(frozen=True)
class RankRange:
    type: int
    lo: int
    hi: int

    def __post_init__(self):
        if not (1 <= self.lo <= self.hi):
            raise ValueError(f"invalid rank range [{self.lo}, {self.hi}]")


@dataclass
class RankSearchConfig:
    n_runs: int = 5
    holdout: float = 0.2
    seed: int = 0
    max_iters: int = 100
    check_interval: int = 5
    epsilon: float = 1e-5
    init: InitStrategy = field(default_factory=lambda: InitStrategy("random_acol"))
    # residual-curve flattening threshold, relative to the full-range gain
    elbow_gain: float = 0.12
    refine_passes: int = 2


@dataclass(frozen=True)
class RankQuality:
    ranks: tuple[int, ...]
    rss: float
    explained_variance: float
    rss_out: float
    explained_variance_out: float
    cophenetic: float


@dataclass
class RankQualityReport:
    selected: tuple[int, ...]
    evaluations: list[RankQuality]
    n_evaluations: int


def rss(R: np.ndarray, reconstruction: np.ndarray, observed_mask: np.ndarray) -> float:
    """Sum of squared residuals over the observed cells."""
    diff = (np.asarray(R, float) - np.asarray(reconstruction, float))[np.asarray(observed_mask, bool)]
    return float(np.sum(diff * diff))


def explained_variance(R: np.ndarray, reconstruction: np.ndarray,
                       observed_mask: np.ndarray) -> float:
    """One minus the masked RSS over the total squared mass of ``R``.

    The denominator runs over every entry while the residual runs over the
    mask only.  NaN when ``R`` is identically zero.
    """
    denom = float(np.sum(np.asarray(R, float) ** 2))
    if denom == 0.0:
        return nan
    return 1.0 - rss(R, reconstruction, observed_mask) / denom


def connectivity_matrix(G: np.ndarray) -> np.ndarray:
    """Binary co-clustering of rows by their dominant factor column.

    Ties resolve to the lowest column index.
    """
    labels = np.asarray(G).argmax(axis=1)
    return (labels[:, None] == labels[None, :]).astype(float)


def cophenetic(consensus: np.ndarray) -> float:
    """Cophenetic correlation of the consensus matrix.

    Correlates the consensus-derived distances with the cophenetic distances
    of their average-linkage dendrogram.  NaN when either distance vector is
    constant (single effective cluster), where the correlation is undefined.
    """
    C = np.asarray(consensus, dtype=float)
    d = squareform(1.0 - C, checks=False)
    if d.size == 0 or np.ptp(d) == 0.0:
        return nan
    coph = cophenet(linkage(d, method="average"))
    if np.std(coph) == 0.0:
        return nan
    return float(np.corrcoef(d, coph)[0, 1])


def _with_target_values(schema: FusionSchema, values: np.ndarray) -> FusionSchema:
    """Shallow schema copy whose target relation carries ``values``."""
    from .schema import RelationMatrix

    clone = FusionSchema()
    clone.types = schema.types
    clone.constraints = schema.constraints
    clone.relations = [
        RelationMatrix(r.id, r.source, r.target, values, r.observed_mask, True)
        if r.is_target else r
        for r in schema.relations
    ]
    return clone


class _InternalCv:
    """Shared holdout masks and run seeds, so rank vectors are compared on
    common random numbers."""

    def __init__(self, schema: FusionSchema, config: RankSearchConfig):
        self.schema = schema
        self.config = config
        target = schema.target
        obs = np.argwhere(target.observed_mask)
        root = np.random.default_rng(config.seed)
        n_out = round(config.holdout * len(obs))
        self.runs = []
        for _ in range(config.n_runs):
            perm = root.permutation(len(obs))
            self.runs.append((obs[perm[:n_out]], int(root.integers(2 ** 63))))
        self.cache: dict[tuple[int, ...], RankQuality] = {}
        self.n_evaluations = 0

    def evaluate(self, ranks: dict[int, int]) -> RankQuality:
        key = tuple(ranks[t.id] for t in self.schema.types)
        if key in self.cache:
            return self.cache[key]
        self.n_evaluations += 1
        schema, config = self.schema, self.config
        target = schema.target
        stored = target.values
        rss_in, r2_in, rss_out, r2_out = [], [], [], []
        conn_src, conn_dst = [], []
        for held_cells, run_seed in self.runs:
            train = stored.copy()
            train[held_cells[:, 0], held_cells[:, 1]] = 0.0
            masked = _with_target_values(schema, train)
            system, _ = factorize(masked, ranks, config.init,
                                  FitConfig(epsilon=config.epsilon,
                                            check_interval=config.check_interval,
                                            max_iters=config.max_iters,
                                            seed=run_seed))
            recon = system.G[target.source] @ system.S[(target.source, target.target)] \
                @ system.G[target.target].T
            held_mask = np.zeros_like(target.observed_mask)
            held_mask[held_cells[:, 0], held_cells[:, 1]] = True
            in_mask = target.observed_mask & ~held_mask
            rss_in.append(rss(stored, recon, in_mask))
            rss_out.append(rss(stored, recon, held_mask))
            r2_in.append(explained_variance(stored, recon, in_mask))
            r2_out.append(explained_variance(stored, recon, held_mask))
            conn_src.append(connectivity_matrix(system.G[target.source]))
            conn_dst.append(connectivity_matrix(system.G[target.target]))
        rhos = [cophenetic(np.mean(conn_src, axis=0)),
                cophenetic(np.mean(conn_dst, axis=0))]
        finite = [r for r in rhos if isfinite(r)]
        quality = RankQuality(
            ranks=key,
            rss=float(np.mean(rss_in)),
            explained_variance=float(np.mean(r2_in)),
            rss_out=float(np.mean(rss_out)),
            explained_variance_out=float(np.mean(r2_out)),
            cophenetic=float(np.mean(finite)) if finite else nan,
        )
        self.cache[key] = quality
        return quality


def evaluate_rank_vector(schema: FusionSchema, ranks: dict[int, int],
                         config: RankSearchConfig | None = None) -> RankQuality:
    """Quality triple of one rank vector under seeded internal holdouts."""
    return _InternalCv(schema, config or RankSearchConfig()).evaluate(ranks)


def select_ranks(schema: FusionSchema, ranges: list[RankRange],
                 config: RankSearchConfig | None = None,
                 _evaluator=None) -> tuple[dict[int, int], RankQualityReport]:
    """Coordinate-wise bisection over the rank ranges.

    Each coordinate is searched by evaluating the borders and midpoints of a
    shrinking interval; the search recurses into the left half once the
    held-in residual improvement beyond the midpoint falls under
    ``elbow_gain`` times the full-range improvement (the residual curve's
    flattening point), otherwise into the right half.  One refinement pass
    repeats the sweep with the other coordinates fixed at their estimates.
    """
    config = config or RankSearchConfig()
    if not ranges:
        raise ValueError("no rank ranges given")
    by_type = {r.type: r for r in ranges}
    for t in schema.types:
        if t.id not in by_type:
            raise ValueError(f"missing rank range for type {t.name!r}")
        if by_type[t.id].hi > t.count:
            raise ValueError(f"rank range upper bound exceeds type {t.name!r} size")

    cv = _InternalCv(schema, config)
    evaluator = _evaluator if _evaluator is not None else cv.evaluate

    current = {t.id: (by_type[t.id].lo + by_type[t.id].hi) // 2 for t in schema.types}

    def improvement(type_id: int, value: int) -> float:
        ranks = dict(current)
        ranks[type_id] = value
        return evaluator(ranks).explained_variance

    for _ in range(max(1, config.refine_passes)):
        previous = dict(current)
        for t in schema.types:
            lo, hi = by_type[t.id].lo, by_type[t.id].hi
            if lo == hi:
                current[t.id] = lo
                continue
            span = improvement(t.id, hi) - improvement(t.id, lo)
            if span <= 0:
                current[t.id] = lo
                continue
            tau = config.elbow_gain * span
            a, b = lo, hi
            while b - a > 1:
                mid = (a + b) // 2
                if improvement(t.id, b) - improvement(t.id, mid) <= tau:
                    b = mid
                else:
                    a = mid
            current[t.id] = b if improvement(t.id, b) - improvement(t.id, a) > tau else a
        if current == previous:
            break

    final_quality = evaluator(current)
    selected = tuple(current[t.id] for t in schema.types)
    if _evaluator is None:
        evaluations = sorted(cv.cache.values(), key=lambda q: (sum(q.ranks), q.ranks))
        n_evals = cv.n_evaluations
    else:
        evaluations = [final_quality]
        n_evals = 0
    report = RankQualityReport(selected=selected, evaluations=evaluations,
                               n_evaluations=n_evals)
    return current, report
