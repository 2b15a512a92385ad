"""Cross-validated evaluation of fusion models.

Folds partition the objects of the target's source type.  Per fold, every
matrix touching that type loses the test objects, an ensemble is fitted on
the remainder, test objects are folded back in from their non-target data,
and the reconstructed target rows are scored against the held-out truth.
Two decision rules are reported side by side: a fixed threshold on the
reconstructed scores and the column-centric mean-of-known-associations rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blockops import BlockLayout, assemble_constraint_block, assemble_relation_block
from .factorize import (DIVERGENCE_LIMIT, FactorSystem, FitConfig, FitTrace,
                        objective, update_g, update_s)
from .initialization import InitStrategy, TypeProfile, init_factor
from .nnls import nnls
from .predict import FoldInProfile, fold_in
from .schema import FusionSchema, SchemaError
from .synthetic import SyntheticSpec, synth_generate  # noqa: F401  (re-export)

__all__ = [
    "CvConfig",
    "EnsembleConfig",
    "EvaluationReport",
    "FlatSystem",
    "balance_target",
    "f1",
    "run_cv",
    "flatten_early_integration",
    "fit_flattened",
    "ablation_run",
    "AblationCell",
    "sparsify_constraint",
]


@dataclass
class CvConfig:
    folds: int = 10
    seed: int = 0
    threshold: float = 0.5
    balance: bool = False

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie in (0, 1)")


@dataclass
class EnsembleConfig:
    size: int = 15
    rank_jitter: int = 1


@dataclass
class EvaluationReport:
    fold_f1: list[float]
    fold_f1_candidate: list[float]
    per_label_f1: list[float]
    diagnostics: dict = field(default_factory=dict)
    flattened: bool = False

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.fold_f1)) if self.fold_f1 else 0.0

    @property
    def mean_f1_candidate(self) -> float:
        return float(np.mean(self.fold_f1_candidate)) if self.fold_f1_candidate else 0.0


def balance_target(values: np.ndarray, observed_mask: np.ndarray,
                   seed: int) -> np.ndarray:
    """Mark as many unobserved cells observed-negative as there are positives.

    Returns a new mask; the sampled cells keep their stored zero value.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(observed_mask, dtype=bool)
    n_pos = int(np.count_nonzero(mask & (values > 0)))
    if n_pos == 0:
        return mask.copy()
    candidates = np.flatnonzero(~mask.ravel())
    if len(candidates) < n_pos:
        raise ValueError(f"cannot sample {n_pos} negatives from "
                         f"{len(candidates)} unobserved cells")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(candidates, size=n_pos, replace=False)
    out = mask.copy()
    out.ravel()[chosen] = True
    return out


def f1(predicted: set, truth: set) -> float:
    """Harmonic mean of precision and recall; zero when both are undefined."""
    tp = len(predicted & truth)
    fp = len(predicted - truth)
    fn = len(truth - predicted)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


# ---------------------------------------------------------------------------
# fold construction

def _remove_objects(schema: FusionSchema, type_id: int,
                    keep: np.ndarray) -> FusionSchema:
    """Training schema without the dropped objects of ``type_id``.

    Rows disappear from relations leaving the type, columns from relations
    entering it, and both rows and columns from its constraints.
    """
    out = FusionSchema()
    for t in schema.types:
        out.add_object_type(t.name, len(keep) if t.id == type_id else t.count)
    for r in schema.relations:
        values, mask = r.values, r.observed_mask
        if r.source == type_id:
            values, mask = values[keep], mask[keep]
        elif r.target == type_id:
            values, mask = values[:, keep], mask[:, keep]
        out.add_relation(r.source, r.target, values, mask, r.is_target)
    for c in schema.constraints:
        values = c.values
        if c.type == type_id:
            values = values[np.ix_(keep, keep)]
        out.add_constraint(c.type, values)
    return out


def _member_ranks(base: dict[int, int], sizes: dict[int, int], jitter: int,
                  rng) -> dict[int, int]:
    if jitter == 0:
        return dict(base)
    return {i: int(np.clip(k + rng.integers(-jitter, jitter + 1), 1, sizes[i]))
            for i, k in base.items()}


def _fold_f1_scores(preds, recon_train, truth_rows, obs_rows, train_values,
                    train_mask, threshold):
    """(threshold-rule F1, candidate-rule F1, per-column counts) for one fold."""
    true_pos = (truth_rows >= 0.5) & obs_rows
    thr_pos = (preds >= threshold) & obs_rows
    known = train_mask & (train_values > 0)
    col_mean = np.full(preds.shape[1], np.inf)
    for q in range(preds.shape[1]):
        if known[:, q].any():
            col_mean[q] = recon_train[known[:, q], q].mean()
    cand_pos = (preds > col_mean[None, :]) & obs_rows

    def micro(pred_pos):
        tp = int((true_pos & pred_pos).sum())
        fp = int((~true_pos & pred_pos).sum())
        fn = int((true_pos & ~pred_pos).sum())
        return 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0

    per_col = np.stack([(true_pos & thr_pos).sum(axis=0),
                        (~true_pos & thr_pos).sum(axis=0),
                        (true_pos & ~thr_pos).sum(axis=0)])
    return micro(thr_pos), micro(cand_pos), per_col


# ---------------------------------------------------------------------------
# structured cross-validation

def run_cv(schema: FusionSchema, ranks: dict[int, int],
           cv: CvConfig | None = None, fit: FitConfig | None = None,
           ensemble: EnsembleConfig | None = None,
           init: InitStrategy | None = None,
           flatten: bool = False,
           reselect_ranges=None, reselect_config=None) -> EvaluationReport:
    """Cross-validated F1 of the fusion model (or its flattened counterpart).

    Ranks are normally chosen once, up front; passing ``reselect_ranges``
    (with an optional search config) re-runs the rank search inside every
    training fold instead.
    """
    cv = cv or CvConfig()
    fit = fit or FitConfig()
    ensemble = ensemble or EnsembleConfig()
    init = init or InitStrategy("random_acol")
    report = schema.validate()
    if not report.ok:
        raise ValueError("schema failed validation: " + "; ".join(report.messages))

    target = schema.target
    fold_type = target.source
    n_objects = schema.types[fold_type].count
    if cv.folds > n_objects:
        raise ValueError(f"{cv.folds} folds exceed the {n_objects} target-type objects")

    observed = target.observed_mask
    if cv.balance:
        observed = balance_target(target.values, observed, cv.seed)
        schema = _with_target_mask(schema, observed)
        target = schema.target

    rng = np.random.default_rng(cv.seed)
    fold_ids = np.array_split(rng.permutation(n_objects), cv.folds)
    non_target_ids = [r.id for r in schema.relations_touching(fold_type)
                      if not r.is_target]

    fold_scores, fold_scores_cand = [], []
    per_col_counts = np.zeros((3, schema.types[target.target].count))
    diverged = converged_members = skipped = 0
    for test_idx in fold_ids:
        test_idx = np.sort(test_idx)
        keep = np.setdiff1d(np.arange(n_objects), test_idx)
        train_schema = _remove_objects(schema, fold_type, keep)
        fold_ranks = ranks
        if reselect_ranges is not None:
            from .ranksel import RankSearchConfig, select_ranks
            search = reselect_config or RankSearchConfig(seed=cv.seed)
            capped = [type(r)(r.type, r.lo, min(r.hi, train_schema.types[r.type].count))
                      for r in reselect_ranges]
            fold_ranks, _ = select_ranks(train_schema, capped, search)
        member_seeds = [int(rng.integers(2 ** 63)) for _ in range(ensemble.size)]
        n_test, n_cols = len(test_idx), schema.types[target.target].count
        preds = np.zeros((n_test, n_cols))
        recon_train = np.zeros((len(keep), n_cols))
        for m_seed in member_seeds:
            m_rng = np.random.default_rng(m_seed)
            m_ranks = _member_ranks(fold_ranks,
                                    {t.id: t.count for t in train_schema.types},
                                    ensemble.rank_jitter, m_rng)
            if flatten:
                flat, trace = fit_flattened(train_schema, sum(m_ranks.values()),
                                            fit, init, int(m_rng.integers(2 ** 63)))
                preds += _flat_predict_rows(flat, train_schema, schema, test_idx)
                recon_train += flat.reconstruct_block(fold_type, target.target)
            else:
                from .factorize import factorize
                system, trace = factorize(train_schema, m_ranks, init,
                                          FitConfig(fit.epsilon, fit.check_interval,
                                                    fit.max_iters,
                                                    int(m_rng.integers(2 ** 63))))
                preds += _predict_rows(system, train_schema, schema, test_idx,
                                       non_target_ids)
                recon_train += system.G[fold_type] @ system.S[(fold_type, target.target)] \
                    @ system.G[target.target].T
            diverged += trace.diverged
            converged_members += trace.converged
        preds /= ensemble.size
        recon_train /= ensemble.size
        truth_rows = target.values[test_idx]
        obs_rows = observed[test_idx]
        skipped += int((~obs_rows.any(axis=1)).sum())
        s_thr, s_cand, per_col = _fold_f1_scores(
            preds, recon_train, truth_rows, obs_rows,
            target.values[keep], observed[keep], cv.threshold)
        fold_scores.append(s_thr)
        fold_scores_cand.append(s_cand)
        per_col_counts += per_col

    tp, fp, fn = per_col_counts
    with np.errstate(invalid="ignore", divide="ignore"):
        per_label = np.where(2 * tp + fp + fn > 0, 2 * tp / (2 * tp + fp + fn), 0.0)
    return EvaluationReport(
        fold_f1=fold_scores,
        fold_f1_candidate=fold_scores_cand,
        per_label_f1=[float(v) for v in per_label],
        diagnostics={"diverged_members": int(diverged),
                     "converged_members": int(converged_members),
                     "test_rows_without_truth": int(skipped)},
        flattened=flatten,
    )


def _with_target_mask(schema: FusionSchema, mask: np.ndarray) -> FusionSchema:
    from .schema import RelationMatrix

    clone = FusionSchema()
    clone.types = schema.types
    clone.constraints = schema.constraints
    clone.relations = [
        RelationMatrix(r.id, r.source, r.target, r.values, mask, True)
        if r.is_target else r
        for r in schema.relations
    ]
    return clone


def _predict_rows(system: FactorSystem, train_schema: FusionSchema,
                  full_schema: FusionSchema, test_idx, non_target_ids) -> np.ndarray:
    """Fold each test object in from its non-target data and reconstruct."""
    target = full_schema.target
    fold_type = target.source
    n_cols = full_schema.types[target.target].count
    out = np.zeros((len(test_idx), n_cols))
    if not non_target_ids:
        return out
    core = system.S[(fold_type, target.target)] @ system.G[target.target].T
    for row, p in enumerate(test_idx):
        segments = []
        for rid in non_target_ids:
            r = full_schema.relations[rid]
            segments.append(r.values[p] if r.source == fold_type else r.values[:, p])
        profile = FoldInProfile(fold_type, np.concatenate(segments))
        x = fold_in(system, train_schema, profile, relations=non_target_ids)
        out[row] = x @ core
    return out


# ---------------------------------------------------------------------------
# flattened early integration

@dataclass
class FlatSystem:
    """Unstructured factorization of the assembled relation matrix."""

    G: np.ndarray
    S: np.ndarray
    layout: BlockLayout

    def reconstruct(self) -> np.ndarray:
        return self.G @ self.S @ self.G.T

    def reconstruct_block(self, i: int, j: int) -> np.ndarray:
        return self.reconstruct()[self.layout.row_slice(i), self.layout.row_slice(j)]


def flatten_early_integration(schema: FusionSchema) -> tuple[np.ndarray, BlockLayout]:
    """Assembled relation matrix plus its layout, the flattened system's input."""
    layout = BlockLayout.from_schema(schema)
    return assemble_relation_block(schema, layout), layout


def fit_flattened(schema: FusionSchema, k: int, fit: FitConfig | None = None,
                  init: InitStrategy | None = None,
                  seed: int | None = None) -> tuple[FlatSystem, FitTrace]:
    """Factorize the assembled matrix with one unstructured factor pair.

    Runs the same alternating updates on a single self-block, so the core is
    full and the factor mixes all types; constraints enter through their
    assembled block diagonal matrices.
    """
    fit = fit or FitConfig()
    init = init or InitStrategy("random_acol")
    big, layout = flatten_early_integration(schema)
    cons = {0: [assemble_constraint_block(schema, t, layout)
                for t in range(1, schema.max_constraint_index() + 1)]}
    if not cons[0]:
        cons = {}
    seed = fit.seed if seed is None else seed
    G0 = init_factor(init, TypeProfile(0, big), k, seed)
    blocks = {(0, 0): big}
    G = {0: G0}
    target = schema.target
    trace = FitTrace()
    S = None
    for it in range(1, fit.max_iters + 1):
        pre = objective(G, S, blocks, cons) if (fit.track_sstep and S is not None) else None
        S = update_s(G, blocks)
        if pre is not None:
            trace.sstep_objectives.append((pre, objective(G, S, blocks, cons)))
        G_next = update_g(G, S, blocks, cons)
        if not np.isfinite(G_next[0]).all() or G_next[0].max(initial=0.0) > DIVERGENCE_LIMIT:
            trace.diverged = True
            break
        G = G_next
        trace.iterations_run = it
        if it % fit.check_interval == 0:
            recon = G[0] @ S[(0, 0)] @ G[0].T
            resid = float(np.linalg.norm(
                target.values
                - recon[layout.row_slice(target.source), layout.row_slice(target.target)]))
            trace.target_residuals.append((it, resid))
            trace.objective_samples.append((it, objective(G, S, blocks, cons)))
            if resid < fit.epsilon:
                trace.converged = True
                break
    S = update_s(G, blocks)
    return FlatSystem(G[0], S[(0, 0)], layout), trace


def _flat_predict_rows(flat: FlatSystem, train_schema: FusionSchema,
                       full_schema: FusionSchema, test_idx) -> np.ndarray:
    """Fold test objects into the flattened system and read the target rows."""
    target = full_schema.target
    fold_type, col_type = target.source, target.target
    layout = flat.layout
    total = layout.total_rows
    keep = np.ones(total, dtype=bool)
    keep[layout.row_slice(fold_type)] = False      # own-type segment is structurally zero
    keep[layout.row_slice(col_type)] = False       # hidden target segment
    A = (flat.G @ flat.S.T)[keep]
    target_slice = layout.row_slice(col_type)
    out = np.zeros((len(test_idx), full_schema.types[col_type].count))
    for row, p in enumerate(test_idx):
        o = np.zeros(total)
        for r in full_schema.relations:
            if r.is_target or fold_type not in (r.source, r.target):
                continue
            if r.source == fold_type:
                o[layout.row_slice(r.target)] = r.values[p]
            else:
                o[layout.row_slice(r.source)] = r.values[:, p]
        x = nnls(A, o[keep])
        out[row] = (x @ flat.S @ flat.G.T)[target_slice]
    return out


# ---------------------------------------------------------------------------
# ablation

@dataclass(frozen=True)
class AblationCell:
    name: str
    relation_ids: tuple[int, ...]
    constraint_ids: tuple[int, ...] = ()
    constraint_density: float = 1.0


def sparsify_constraint(values: np.ndarray, density: float, seed: int) -> np.ndarray:
    """Zero a random subset of entries so they no longer affect the penalty."""
    if not (0.0 <= density <= 1.0):
        raise ValueError("density must lie in [0, 1]")
    values = np.asarray(values, dtype=float)
    if density == 1.0:
        return values.copy()
    rng = np.random.default_rng(seed)
    keep = rng.random(values.shape) < density
    return np.where(keep, values, 0.0)


def subset_schema(schema: FusionSchema, cell: AblationCell,
                  seed: int = 0) -> tuple[FusionSchema, dict[int, int]]:
    """Schema restricted to a subset of sources, types reindexed.

    The target must be kept and the remaining fusion graph connected.
    """
    rel_ids = set(cell.relation_ids)
    relations = [r for r in schema.relations if r.id in rel_ids]
    if not any(r.is_target for r in relations):
        raise SchemaError(f"ablation subset {cell.name!r} drops the target relation")
    used_types = sorted({t for r in relations for t in (r.source, r.target)})
    type_map = {old: new for new, old in enumerate(used_types)}
    out = FusionSchema()
    for old in used_types:
        t = schema.types[old]
        out.add_object_type(t.name, t.count)
    for r in relations:
        out.add_relation(type_map[r.source], type_map[r.target],
                         r.values, r.observed_mask, r.is_target)
    cons_ids = set(cell.constraint_ids)
    for c in schema.constraints:
        if c.id in cons_ids and c.type in type_map:
            values = sparsify_constraint(c.values, cell.constraint_density, seed)
            out.add_constraint(type_map[c.type], values)
    report = out.validate()
    if not report.connected:
        raise SchemaError(f"ablation subset {cell.name!r} disconnects the fusion "
                          "graph (isolated: " + ", ".join(report.isolated_types) + ")")
    return out, type_map


def ablation_run(schema: FusionSchema, cells: list[AblationCell],
                 ranks: dict[int, int], cv: CvConfig | None = None,
                 fit: FitConfig | None = None,
                 ensemble: EnsembleConfig | None = None,
                 init: InitStrategy | None = None) -> list[tuple[AblationCell, EvaluationReport]]:
    """Cross-validated F1 per source subset, in the given order."""
    results = []
    for cell in cells:
        sub, type_map = subset_schema(schema, cell, seed=(cv.seed if cv else 0))
        sub_ranks = {type_map[old]: ranks[old] for old in type_map}
        results.append((cell, run_cv(sub, sub_ranks, cv, fit, ensemble, init)))
    return results
