"""Type-factor initialization strategies and the initialization quality metric.

Every strategy maps a type profile (the horizontal concatenation of all
relation data touching the type) to a non-negative ``n x k`` factor,
deterministically for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from .schema import FusionSchema

__all__ = [
    "InitStrategy",
    "TypeProfile",
    "build_profile",
    "init_factor",
    "svd_distance",
    "relative_error",
    "STRATEGY_NAMES",
]

STRATEGY_NAMES = ("random", "random_c", "random_acol", "kmeans", "nndsvda")

ACOL_SUBSET_SIZE = 5
RANDOM_C_DENSEST_FRACTION = 0.2
KMEANS_FLOOR = 0.01
KMEANS_MAX_ITER = 100


@dataclass(frozen=True)
class InitStrategy:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = self.kind.lower()
        if kind == "nndsvd":
            kind = "nndsvda"
        if kind not in STRATEGY_NAMES:
            raise ValueError(f"unknown initialization strategy {self.kind!r}; "
                             f"expected one of {STRATEGY_NAMES}")
        object.__setattr__(self, "kind", kind)


@dataclass(frozen=True)
class TypeProfile:
    """All relation data touching one type, columns side by side.

    Outgoing relations contribute their rows, incoming ones their transposed
    columns, in schema declaration order.
    """

    type: int
    matrix: np.ndarray


def build_profile(schema: FusionSchema, type_id: int) -> TypeProfile:
    parts = []
    for r in schema.relations:
        if r.source == type_id:
            parts.append(r.values)
        elif r.target == type_id:
            parts.append(r.values.T)
    if not parts:
        raise ValueError(f"type {type_id} participates in no relation")
    return TypeProfile(type_id, np.hstack(parts))


def init_factor(strategy: InitStrategy, profile: TypeProfile, k: int,
                seed: int) -> np.ndarray:
    """Non-negative ``n x k`` starting factor for one type."""
    matrix = profile.matrix
    n = matrix.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k = {k} exceeds the number of objects {n}")
    rng = np.random.default_rng(seed)
    if strategy.kind == "random":
        return rng.random((n, k))
    if strategy.kind == "random_acol":
        size = min(strategy.params.get("acol_subset_size", ACOL_SUBSET_SIZE),
                   matrix.shape[1])
        cols = [matrix[:, rng.choice(matrix.shape[1], size=size, replace=False)]
                .mean(axis=1) for _ in range(k)]
        return np.maximum(np.stack(cols, axis=1), 0.0)
    if strategy.kind == "random_c":
        return _random_c(matrix, k, rng, strategy.params)
    if strategy.kind == "kmeans":
        return _kmeans_indicator(matrix, k, rng)
    return _nndsvda(matrix, k)


def _random_c(matrix: np.ndarray, k: int, rng, params) -> np.ndarray:
    # densest = most nonzero entries, ties broken by column L1 mass
    nnz = (matrix != 0).sum(axis=0)
    mass = np.abs(matrix).sum(axis=0)
    order = np.lexsort((mass, nnz))[::-1]
    n_dense = max(1, round(RANDOM_C_DENSEST_FRACTION * matrix.shape[1]))
    pool = order[:n_dense]
    size = min(params.get("subset_size", ACOL_SUBSET_SIZE), len(pool))
    cols = [matrix[:, rng.choice(pool, size=size, replace=False)].mean(axis=1)
            for _ in range(k)]
    return np.maximum(np.stack(cols, axis=1), 0.0)


def _kmeans_indicator(matrix: np.ndarray, k: int, rng) -> np.ndarray:
    if k == 1:
        labels = np.zeros(matrix.shape[0], dtype=int)
    else:
        _, labels = kmeans2(matrix, k, iter=KMEANS_MAX_ITER, minit="++",
                            seed=rng)
    out = np.full((matrix.shape[0], k), KMEANS_FLOOR)
    out[np.arange(matrix.shape[0]), labels] = 1.0
    return out


def _nndsvda(matrix: np.ndarray, k: int) -> np.ndarray:
    """Non-negative double SVD, zeros replaced by the profile mean."""
    U, sv, Vt = np.linalg.svd(matrix, full_matrices=False)
    n = matrix.shape[0]
    out = np.zeros((n, k))
    n_comp = min(k, len(sv))
    if n_comp > 0:
        out[:, 0] = np.sqrt(sv[0]) * np.abs(U[:, 0])
    for j in range(1, n_comp):
        u, v = U[:, j], Vt[j]
        up, un = np.maximum(u, 0.0), np.maximum(-u, 0.0)
        vp, vn = np.maximum(v, 0.0), np.maximum(-v, 0.0)
        up_n, un_n = np.linalg.norm(up), np.linalg.norm(un)
        vp_n, vn_n = np.linalg.norm(vp), np.linalg.norm(vn)
        m_p, m_n = up_n * vp_n, un_n * vn_n
        if m_p >= m_n:
            sigma, vec, norm = m_p, up, up_n
        else:
            sigma, vec, norm = m_n, un, un_n
        if norm > 0:
            out[:, j] = np.sqrt(sv[j] * sigma) * vec / norm
    mean = float(np.abs(matrix).mean())
    out[out <= 0] = mean
    return out


def svd_distance(R: np.ndarray, k: int) -> float:
    """Frobenius distance from ``R`` to its best rank-``k`` approximation."""
    R = np.asarray(R, dtype=float)
    if not (1 <= k <= min(R.shape)):
        raise ValueError(f"k must be in [1, {min(R.shape)}], got {k}")
    sv = np.linalg.svd(R, compute_uv=False)
    return float(np.sqrt(np.sum(sv[k:] ** 2)))


def relative_error(R: np.ndarray, G_i: np.ndarray, S_ij: np.ndarray,
                   G_j: np.ndarray, k: int | None = None):
    """Reconstruction error relative to the optimal rank-``k`` approximation.

    ``k`` defaults to ``max`` of the two factor ranks, a pessimistic choice.
    Returns ``None`` when the rank-``k`` truncation is already exact
    (rank-saturated), where the ratio is undefined.
    """
    if k is None:
        k = max(G_i.shape[1], G_j.shape[1])
    d_f = svd_distance(R, k)
    if d_f < 1e-12:
        return None
    resid = float(np.linalg.norm(R - G_i @ S_ij @ G_j.T))
    return (resid - d_f) / d_f
