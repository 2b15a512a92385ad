"""Prediction from fitted factor systems.

Covers target reconstruction, non-negative least-squares fold-in of unseen
objects, the row/column-centric candidate rules, percentile strengths, and
majority-vote ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .factorize import FactorSystem
from .nnls import kkt_residuals, nnls
from .schema import FusionSchema, RelationMatrix

__all__ = [
    "FoldInProfile",
    "PredictionEntry",
    "PredictionSet",
    "reconstruct",
    "fold_in_matrix",
    "fold_in",
    "extend_model",
    "candidates_row_centric",
    "candidates_column_centric",
    "percentile_strength",
    "ensemble_predict",
    "known_positives",
    "majority_threshold",
]

FOLD_IN_TOL = 1e-8


@dataclass(frozen=True)
class FoldInProfile:
    """Concatenated relation values of one new object of ``type``.

    Segments follow schema declaration order over the relations used:
    outgoing relations contribute the object's would-be row, incoming ones
    its would-be column.
    """

    type: int
    vector: np.ndarray


@dataclass(frozen=True)
class PredictionEntry:
    p: int
    q: int
    score: float
    percentile: float
    votes: int


@dataclass
class PredictionSet:
    entries: list[PredictionEntry]
    ensemble_size: int
    diagnostics: dict = field(default_factory=dict)


def reconstruct(system: FactorSystem, i: int, j: int) -> np.ndarray:
    """Reconstructed relation block ``G_i S_ij G_j^T``."""
    if (i, j) not in system.S:
        raise KeyError(f"relation block ({i}, {j}) is absent from the model")
    return system.G[i] @ system.S[(i, j)] @ system.G[j].T


def _profile_relations(schema: FusionSchema, type_id: int,
                       relations=None) -> list[RelationMatrix]:
    rels = [r for r in schema.relations if type_id in (r.source, r.target)]
    if relations is not None:
        wanted = set(relations)
        rels = [r for r in rels if r.id in wanted]
    if not rels:
        raise ValueError(f"no relations available to fold a type-{type_id} object in")
    return rels


def fold_in_matrix(system: FactorSystem, schema: FusionSchema, type_id: int,
                   relations=None, restricted: bool = True) -> np.ndarray:
    """Design matrix mapping a new object's latent coordinates to its profile.

    Row blocks follow the profile segment order.  With ``restricted`` the
    columns span only the object's own type coordinates (the model's
    generative form for an appended factor row); otherwise they span every
    type's coordinates, mirroring the reconstruction algebra of the full
    system.
    """
    rels = _profile_relations(schema, type_id, relations)
    type_order = [t.id for t in schema.types]
    col_types = [type_id] if restricted else type_order
    row_blocks = []
    for r in rels:
        if r.source == type_id:
            j = r.target
            def seg(l, j=j):
                return system.G[j] @ system.S[(l, j)].T if (l, j) in system.S else None
        else:
            j = r.source
            def seg(l, j=j):
                return system.G[j] @ system.S[(j, l)] if (j, l) in system.S else None
        blocks = []
        for l in col_types:
            piece = seg(l)
            if piece is None:
                piece = np.zeros((system.sizes[j], system.ranks[l]))
            blocks.append(piece)
        row_blocks.append(np.hstack(blocks))
    return np.vstack(row_blocks)


def fold_in(system: FactorSystem, schema: FusionSchema, profile: FoldInProfile,
            tolerance: float = FOLD_IN_TOL, relations=None,
            restricted: bool = True) -> np.ndarray:
    """Latent coordinates of an unseen object by non-negative least squares.

    Returns the ``k_i`` coordinates of the object's own type; with the
    unrestricted variant the full solution is computed first and its own-type
    block extracted.
    """
    A = fold_in_matrix(system, schema, profile.type, relations, restricted)
    o = np.asarray(profile.vector, dtype=float)
    if o.shape != (A.shape[0],):
        raise ValueError(f"profile has length {o.shape}, expected ({A.shape[0]},)")
    x = nnls(A, o)
    neg, grad_violation, comp = kkt_residuals(A, o, x)
    scale = max(1.0, float(np.abs(A).max(initial=0.0)) * max(1.0, float(np.abs(o).max(initial=0.0))))
    if max(neg, grad_violation, comp) > tolerance * scale:
        raise RuntimeError("fold-in solve violated the KKT tolerance "
                           f"({max(neg, grad_violation, comp):.3e} > {tolerance * scale:.3e})")
    if restricted:
        return x
    offset = 0
    for t in schema.types:
        if t.id == profile.type:
            return x[offset:offset + system.ranks[t.id]]
        offset += system.ranks[t.id]
    raise ValueError(f"type {profile.type} not present in schema")


def extend_model(system: FactorSystem, schema: FusionSchema,
                 profile: FoldInProfile, tolerance: float = FOLD_IN_TOL,
                 relations=None) -> FactorSystem:
    """New system whose type factor gains the folded-in object as a last row."""
    x = fold_in(system, schema, profile, tolerance, relations)
    extended = system.copy()
    extended.G[profile.type] = np.vstack([extended.G[profile.type], x[None, :]])
    extended.sizes[profile.type] += 1
    return extended


def _known_as_row_sets(known, n_rows: int) -> list[set]:
    if isinstance(known, (set, frozenset)):
        rows = [set() for _ in range(n_rows)]
        for p, q in known:
            rows[p].add(q)
        return rows
    return [set(s) for s in known]


def candidates_row_centric(scores: np.ndarray, known) -> list[tuple[int, int]]:
    """Pairs whose score strictly exceeds the row's mean known-association score.

    ``known`` is a set of (row, col) pairs or a per-row sequence of column
    sets.  Rows without known associations yield no candidates.
    """
    scores = np.asarray(scores, dtype=float)
    rows = _known_as_row_sets(known, scores.shape[0])
    out = []
    for p in range(scores.shape[0]):
        if not rows[p]:
            continue
        cols = sorted(rows[p])
        mean = scores[p, cols].mean()
        for q in range(scores.shape[1]):
            if q not in rows[p] and scores[p, q] > mean:
                out.append((p, q))
    return out


def candidates_column_centric(scores: np.ndarray, known) -> list[tuple[int, int]]:
    """Transpose-symmetric variant of :func:`candidates_row_centric`."""
    scores = np.asarray(scores, dtype=float)
    if isinstance(known, (set, frozenset)):
        known_t = {(q, p) for p, q in known}
    else:
        known_t = {(q, p) for p, qs in enumerate(known) for q in qs}
    return [(p, q) for q, p in candidates_row_centric(scores.T, known_t)]


def percentile_strength(scores: np.ndarray, q: int, value: float, known):
    """Percentile of ``value`` among the known-association scores of column ``q``.

    Inclusive convention: the fraction (times 100) of known scores less than
    or equal to ``value``.  Returns ``None`` when the column has no known
    associations.
    """
    scores = np.asarray(scores, dtype=float)
    if isinstance(known, (set, frozenset)):
        rows = sorted(p for p, col in known if col == q)
    else:
        rows = sorted(p for p, qs in enumerate(known) if q in qs)
    if not rows:
        return None
    col = scores[rows, q]
    return 100.0 * float(np.count_nonzero(col <= value)) / len(col)


def known_positives(relation: RelationMatrix) -> set[tuple[int, int]]:
    """Observed strictly positive cells of a relation, as (row, col) pairs."""
    rows, cols = np.nonzero(relation.observed_mask & (relation.values > 0))
    return set(zip(rows.tolist(), cols.tolist()))


def majority_threshold(size: int) -> int:
    """Smallest vote count that is more than one half of ``size``."""
    return size // 2 + 1


def ensemble_predict(models: list[FactorSystem], schema: FusionSchema,
                     mode: str = "combined") -> PredictionSet:
    """Majority-vote candidates across independently fitted systems.

    A pair is kept when the candidate rule fires in more than half of the
    models.  ``mode`` selects the rule: ``row``, ``column``, or ``combined``
    (row-centric voting, survivors annotated with column percentiles of the
    mean score matrix).  Scores are averaged over models; the vote count and
    order of models never change the result.
    """
    if not models:
        raise ValueError("ensemble needs at least one model")
    if mode not in ("row", "column", "combined"):
        raise ValueError(f"unknown ensemble mode {mode!r}")
    target = schema.target
    known = known_positives(target)
    rule = candidates_column_centric if mode == "column" else candidates_row_centric

    votes: dict[tuple[int, int], int] = {}
    stacked = []
    for model in models:
        scores = reconstruct(model, target.source, target.target)
        stacked.append(scores)
        for pair in rule(scores, known):
            votes[pair] = votes.get(pair, 0) + 1
    # per-cell sorted summation keeps the mean bitwise order-independent
    mean_scores = np.sort(np.stack(stacked), axis=0).sum(axis=0) / len(models)

    need = majority_threshold(len(models))
    rows_with_known = {p for p, _ in known}
    skipped_rows = target.values.shape[0] - len(rows_with_known)
    entries = []
    for (p, q), v in sorted(votes.items()):
        if v < need:
            continue
        pct = percentile_strength(mean_scores, q, float(mean_scores[p, q]), known)
        entries.append(PredictionEntry(p, q, float(mean_scores[p, q]),
                                       float("nan") if pct is None else pct, v))
    return PredictionSet(entries, len(models),
                         diagnostics={"rows_without_known_associations": skipped_rows})
