"""Alternating multiplicative optimization of the fusion system.

One iteration first solves the relation cores exactly by penalized least
squares given the type factors, then improves the non-negative type factors
with a multiplicative square-root-ratio step that also folds in must-link /
cannot-link penalties.  Convergence is judged on the target block residual
only; the global objective is recorded for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blockops import gram_pinv, relation_blocks, split_pos_neg
from .schema import FusionSchema

__all__ = [
    "FactorSystem",
    "FitConfig",
    "FitTrace",
    "update_s",
    "update_g",
    "objective",
    "converged",
    "factorize",
]

# Added to every denominator entry of the multiplicative step: keeps the
# ratio finite and sends entries with vanishing support to zero.
DENOM_DELTA = 1e-12

# Factor magnitude above which the iteration is declared divergent.  Strong
# must-link rewards make the penalized objective unbounded below (the cores
# absorb the scale), so runaway growth is detectable purely from G.
DIVERGENCE_LIMIT = 1e100


@dataclass
class FactorSystem:
    """Fitted factors: one non-negative matrix per type, one core per block."""

    ranks: dict[int, int]
    sizes: dict[int, int]
    G: dict[int, np.ndarray]
    S: dict[tuple[int, int], np.ndarray]

    def copy(self) -> "FactorSystem":
        return FactorSystem(dict(self.ranks), dict(self.sizes),
                            {i: g.copy() for i, g in self.G.items()},
                            {k: s.copy() for k, s in self.S.items()})


@dataclass
class FitConfig:
    epsilon: float = 1e-5
    check_interval: int = 5
    max_iters: int = 500
    seed: int = 0
    track_sstep: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.check_interval < 1:
            raise ValueError("check_interval must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass
class FitTrace:
    iterations_run: int = 0
    objective_samples: list[tuple[int, float]] = field(default_factory=list)
    target_residuals: list[tuple[int, float]] = field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    # (before, after) objective around each core update when tracking is on
    sstep_objectives: list[tuple[float, float]] = field(default_factory=list)


def _blocks_of(source) -> dict[tuple[int, int], np.ndarray]:
    if isinstance(source, FusionSchema):
        return relation_blocks(source)
    return source


def _constraints_of(source, constraints) -> dict[int, list[np.ndarray]]:
    if constraints is not None:
        return constraints
    if isinstance(source, FusionSchema):
        out: dict[int, list[np.ndarray]] = {}
        for c in source.constraints:
            out.setdefault(c.type, []).append(c.values)
        return out
    return {}


def update_s(G: dict[int, np.ndarray], schema) -> dict[tuple[int, int], np.ndarray]:
    """Exact core update given fixed type factors.

    Blockwise evaluation of the dense rule ``pinv(G^T G) G^T R G pinv(G^T G)``;
    the pseudoinverse keeps the step defined for rank-deficient factors.
    """
    blocks = _blocks_of(schema)
    pinv = {i: gram_pinv(Gi) for i, Gi in G.items()}
    proj = {i: pinv[i] @ G[i].T for i in G}
    return {(i, j): proj[i] @ Rij @ proj[j].T for (i, j), Rij in blocks.items()}


def update_g(G: dict[int, np.ndarray], S: dict[tuple[int, int], np.ndarray],
             schema, constraints=None) -> dict[int, np.ndarray]:
    """Multiplicative factor update.

    Each factor is scaled elementwise by the square root of a non-negative
    ratio assembled from the sign splits of the summed block products and of
    the constraint matrices; non-negativity is preserved by construction.
    """
    blocks = _blocks_of(schema)
    cons = _constraints_of(schema, constraints)
    grams = {i: Gi.T @ Gi for i, Gi in G.items()}
    out = {}
    for i, Gi in G.items():
        N = np.zeros_like(Gi)
        D = np.zeros((Gi.shape[1], Gi.shape[1]))
        for (a, b), Rab in blocks.items():
            if a != i:
                continue
            N += Rab @ (G[b] @ S[(b, a)])
            D += S[(a, b)] @ grams[b] @ S[(b, a)]
        n_split = split_pos_neg(N)
        d_split = split_pos_neg(D)
        num = n_split.pos + Gi @ d_split.neg
        den = n_split.neg + Gi @ d_split.pos
        for theta in cons.get(i, ()):
            t_split = split_pos_neg(theta)
            num = num + t_split.neg @ Gi
            den = den + t_split.pos @ Gi
        out[i] = Gi * np.sqrt(num / (den + DENOM_DELTA))
    return out


def objective(G: dict[int, np.ndarray], S: dict[tuple[int, int], np.ndarray],
              schema, constraints=None) -> float:
    """Squared Frobenius reconstruction error plus constraint trace penalties.

    Can be negative only through must-link (negative) trace contributions.
    """
    blocks = _blocks_of(schema)
    cons = _constraints_of(schema, constraints)
    total = 0.0
    for (i, j), Rij in blocks.items():
        resid = Rij - G[i] @ S[(i, j)] @ G[j].T
        total += float(np.sum(resid * resid))
    for i, thetas in cons.items():
        for theta in thetas:
            total += float(np.trace(G[i].T @ theta @ G[i]))
    return total


def converged(R_target: np.ndarray, G_i: np.ndarray, S_ij: np.ndarray,
              G_j: np.ndarray, epsilon: float) -> bool:
    """True iff the target block residual norm is strictly below epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    resid = R_target - G_i @ S_ij @ G_j.T
    return bool(np.linalg.norm(resid) < epsilon)


def target_residual(schema: FusionSchema, G, S) -> float:
    t = schema.target
    resid = t.values - G[t.source] @ S[(t.source, t.target)] @ G[t.target].T
    return float(np.linalg.norm(resid))


def factorize(schema: FusionSchema, ranks: dict[int, int], init_strategy=None,
              config: FitConfig | None = None) -> tuple[FactorSystem, FitTrace]:
    """Fit the factor system by alternating core and factor updates.

    Starts from the chosen initialization, alternates :func:`update_s` then
    :func:`update_g`, and checks the target-block convergence criterion every
    ``check_interval`` iterations.  Stops at convergence, at ``max_iters``, or
    when the factors grow past the divergence limit (the last finite iterate
    is kept and the trace flags the run).
    """
    from .initialization import InitStrategy, build_profile, init_factor

    config = config or FitConfig()
    if init_strategy is None:
        init_strategy = InitStrategy("random_acol")
    report = schema.validate()
    if not report.ok:
        raise ValueError("schema failed validation: " + "; ".join(report.messages))
    for t in schema.types:
        k = ranks.get(t.id)
        if k is None or k < 1:
            raise ValueError(f"rank for type {t.name!r} must be >= 1")
        if k > t.count:
            raise ValueError(f"rank {k} for type {t.name!r} exceeds its {t.count} objects")

    blocks = relation_blocks(schema)
    cons = _constraints_of(schema, None)
    target = schema.target

    seed_root = np.random.default_rng(config.seed)
    G = {}
    for t in schema.types:
        profile = build_profile(schema, t.id)
        G[t.id] = init_factor(init_strategy, profile, ranks[t.id],
                              int(seed_root.integers(2 ** 63)))

    trace = FitTrace()
    S: dict[tuple[int, int], np.ndarray] | None = None
    for it in range(1, config.max_iters + 1):
        pre = objective(G, S, blocks, cons) if (config.track_sstep and S is not None) else None
        S = update_s(G, blocks)
        if pre is not None:
            trace.sstep_objectives.append((pre, objective(G, S, blocks, cons)))
        G_next = update_g(G, S, blocks, cons)
        if any(not np.isfinite(Gi).all() or (Gi.size and Gi.max() > DIVERGENCE_LIMIT)
               for Gi in G_next.values()):
            trace.diverged = True
            break
        G = G_next
        trace.iterations_run = it
        if it % config.check_interval == 0:
            resid = float(np.linalg.norm(
                target.values - G[target.source] @ S[(target.source, target.target)]
                @ G[target.target].T))
            trace.target_residuals.append((it, resid))
            trace.objective_samples.append((it, objective(G, S, blocks, cons)))
            if resid < config.epsilon:
                trace.converged = True
                break

    S = update_s(G, blocks)
    system = FactorSystem(ranks=dict(ranks),
                          sizes={t.id: t.count for t in schema.types},
                          G=G, S=S)
    return system, trace
