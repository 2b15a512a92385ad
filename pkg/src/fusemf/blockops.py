"""Block-structured linear algebra for the fusion system.

Provides the dense assembly of the relation block matrix, the block diagonal
constraint matrices, and the factor blocks, together with the sign split and
the Gram pseudoinverse used by the multiplicative updates.  Dense assembly
exists primarily as a test oracle; the optimizer works blockwise and must
agree with it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schema import FusionSchema

__all__ = [
    "BlockLayout",
    "SignSplit",
    "split_pos_neg",
    "relation_blocks",
    "assemble_relation_block",
    "assemble_constraint_block",
    "assemble_factor_block",
    "assemble_core_block",
    "gram_pinv",
]

GRAM_RCOND = 1e-12


@dataclass(frozen=True)
class BlockLayout:
    """Row/rank offsets of every type inside the assembled matrices."""

    type_order: tuple[int, ...]
    row_offsets: tuple[int, ...]
    rank_offsets: tuple[int, ...]

    @classmethod
    def from_schema(cls, schema: FusionSchema, ranks: dict[int, int] | None = None):
        order = tuple(t.id for t in schema.types)
        rows = np.concatenate([[0], np.cumsum([t.count for t in schema.types])])
        if ranks is None:
            ranks_list = [0] * len(order)
        else:
            ranks_list = [ranks[t] for t in order]
        ranks_off = np.concatenate([[0], np.cumsum(ranks_list)])
        return cls(order, tuple(int(v) for v in rows), tuple(int(v) for v in ranks_off))

    def row_slice(self, type_id: int) -> slice:
        i = self.type_order.index(type_id)
        return slice(self.row_offsets[i], self.row_offsets[i + 1])

    def rank_slice(self, type_id: int) -> slice:
        i = self.type_order.index(type_id)
        return slice(self.rank_offsets[i], self.rank_offsets[i + 1])

    @property
    def total_rows(self) -> int:
        return self.row_offsets[-1]

    @property
    def total_ranks(self) -> int:
        return self.rank_offsets[-1]


@dataclass(frozen=True)
class SignSplit:
    """Elementwise decomposition X = pos - neg with disjoint supports."""

    pos: np.ndarray
    neg: np.ndarray


def split_pos_neg(x) -> SignSplit:
    """Split a real matrix into non-negative positive and negative parts."""
    x = np.asarray(x, dtype=float)
    return SignSplit(np.maximum(x, 0.0), np.maximum(-x, 0.0))


def relation_blocks(schema: FusionSchema) -> dict[tuple[int, int], np.ndarray]:
    """Effective off-diagonal blocks of the assembled relation matrix.

    A declared relation occupies its (source, target) block.  A missing
    reverse block is filled with the transpose, so both orientations are
    always present; when both directions are declared with different data,
    each keeps its own values.
    """
    blocks: dict[tuple[int, int], np.ndarray] = {}
    for r in schema.relations:
        blocks[(r.source, r.target)] = r.values
    for r in schema.relations:
        blocks.setdefault((r.target, r.source), r.values.T)
    return blocks


def assemble_relation_block(schema: FusionSchema,
                            layout: BlockLayout | None = None) -> np.ndarray:
    """Dense relation block matrix with zero diagonal blocks."""
    layout = layout or BlockLayout.from_schema(schema)
    out = np.zeros((layout.total_rows, layout.total_rows))
    for (i, j), block in relation_blocks(schema).items():
        out[layout.row_slice(i), layout.row_slice(j)] = block
    return out


def assemble_constraint_block(schema: FusionSchema, t: int,
                              layout: BlockLayout | None = None) -> np.ndarray:
    """Dense block diagonal constraint matrix for constraint index ``t``.

    The block of a type with fewer than ``t`` constraints stays zero.
    """
    if t < 1:
        raise ValueError(f"constraint index must be >= 1, got {t}")
    layout = layout or BlockLayout.from_schema(schema)
    out = np.zeros((layout.total_rows, layout.total_rows))
    for c in schema.constraints:
        if c.index == t:
            sl = layout.row_slice(c.type)
            out[sl, sl] = c.values
    return out


def assemble_factor_block(schema: FusionSchema, G: dict[int, np.ndarray],
                          layout: BlockLayout) -> np.ndarray:
    """Dense block diagonal type-factor matrix."""
    out = np.zeros((layout.total_rows, layout.total_ranks))
    for i, Gi in G.items():
        out[layout.row_slice(i), layout.rank_slice(i)] = Gi
    return out


def assemble_core_block(schema: FusionSchema, S: dict[tuple[int, int], np.ndarray],
                        layout: BlockLayout) -> np.ndarray:
    """Dense relation-core matrix with zero diagonal blocks."""
    out = np.zeros((layout.total_ranks, layout.total_ranks))
    for (i, j), Sij in S.items():
        out[layout.rank_slice(i), layout.rank_slice(j)] = Sij
    return out


def gram_pinv(G) -> np.ndarray:
    """Moore-Penrose pseudoinverse of the Gram matrix G^T G.

    Singular values below ``GRAM_RCOND`` times the largest one are treated
    as zero, which keeps the multiplicative iteration defined when factor
    columns die out.
    """
    G = np.asarray(G, dtype=float)
    return np.linalg.pinv(G.T @ G, rcond=GRAM_RCOND)
