"""Fusion schema: object types, inter-type relation matrices, same-type constraints.

A fusion system couples several object types through rectangular relation
matrices and optional square constraint matrices.  The schema validates the
shapes and the connectivity of the induced type graph before anything is
factorized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SchemaError",
    "ObjectType",
    "RelationMatrix",
    "ConstraintMatrix",
    "ValidationReport",
    "FusionSchema",
]


class SchemaError(ValueError):
    """Raised when a schema element violates a structural precondition."""


@dataclass(frozen=True)
class ObjectType:
    id: int
    name: str
    count: int


@dataclass
class RelationMatrix:
    """Directed relation between two distinct object types.

    ``values`` is dense; cells absent from ``observed_mask`` are stored as
    zeros and take part in the factorization as zeros.  The mask matters for
    residual statistics and evaluation only.
    """

    id: int
    source: int
    target: int
    values: np.ndarray
    observed_mask: np.ndarray
    is_target: bool = False


@dataclass
class ConstraintMatrix:
    """Square same-type penalty matrix.

    Sign convention: negative entries reward similarity (must-link), positive
    entries penalize it (cannot-link).  Any real values are accepted; the
    convention is documentation, not validation.
    """

    id: int
    type: int
    index: int
    values: np.ndarray


@dataclass
class ValidationReport:
    connected: bool
    single_target: bool
    dimension_ok: bool
    isolated_types: list[str] = field(default_factory=list)
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.connected and self.single_target and self.dimension_ok


class FusionSchema:
    """Mutable builder for a fusion system; immutable once validated and fitted.

    Object identity is positional: objects of a type are the row/column
    indices ``0 .. count-1``.  Type ids are small integers handed out by
    :meth:`add_object_type`.
    """

    def __init__(self):
        self.types: list[ObjectType] = []
        self.relations: list[RelationMatrix] = []
        self.constraints: list[ConstraintMatrix] = []

    # -- construction -----------------------------------------------------

    def add_object_type(self, name: str, count: int) -> int:
        if any(t.name == name for t in self.types):
            raise SchemaError(f"duplicate object type name: {name!r}")
        if count < 1:
            raise SchemaError(f"object type {name!r} needs count >= 1, got {count}")
        tid = len(self.types)
        self.types.append(ObjectType(tid, name, int(count)))
        return tid

    def add_relation(self, source: int, target: int, values,
                     observed_mask=None, is_target: bool = False) -> int:
        if source == target:
            raise SchemaError("a relation may not connect a type to itself; "
                              "use a constraint matrix for same-type data")
        self._check_type_id(source)
        self._check_type_id(target)
        values = np.asarray(values, dtype=float)
        shape = (self.types[source].count, self.types[target].count)
        if values.shape != shape:
            raise SchemaError(f"relation values must be {shape}, got {values.shape}")
        if observed_mask is None:
            observed_mask = np.ones(shape, dtype=bool)
        else:
            observed_mask = np.asarray(observed_mask, dtype=bool)
            if observed_mask.shape != shape:
                raise SchemaError(f"observed mask must be {shape}, got {observed_mask.shape}")
        if is_target:
            if any(r.is_target for r in self.relations):
                raise SchemaError("schema already has a target relation")
            observed = values[observed_mask]
            if observed.size and (observed.min() < 0.0 or observed.max() > 1.0):
                raise SchemaError("target relation values must lie in [0, 1]")
        rid = len(self.relations)
        self.relations.append(RelationMatrix(rid, source, target, values,
                                             observed_mask, bool(is_target)))
        return rid

    def add_constraint(self, type_id: int, values) -> int:
        self._check_type_id(type_id)
        values = np.asarray(values, dtype=float)
        n = self.types[type_id].count
        if values.shape != (n, n):
            raise SchemaError(f"constraint for type {type_id} must be {(n, n)}, "
                              f"got {values.shape}")
        index = 1 + sum(1 for c in self.constraints if c.type == type_id)
        cid = len(self.constraints)
        self.constraints.append(ConstraintMatrix(cid, type_id, index, values))
        return cid

    # -- queries ----------------------------------------------------------

    @property
    def target(self) -> RelationMatrix:
        for r in self.relations:
            if r.is_target:
                return r
        raise SchemaError("schema has no target relation")

    def has_target(self) -> bool:
        return any(r.is_target for r in self.relations)

    def type_by_name(self, name: str) -> ObjectType:
        for t in self.types:
            if t.name == name:
                return t
        raise SchemaError(f"unknown object type: {name!r}")

    def constraints_for(self, type_id: int) -> list[ConstraintMatrix]:
        return [c for c in self.constraints if c.type == type_id]

    def max_constraint_index(self) -> int:
        return max((c.index for c in self.constraints), default=0)

    def relations_touching(self, type_id: int) -> list[RelationMatrix]:
        return [r for r in self.relations if type_id in (r.source, r.target)]

    def sizes(self) -> list[int]:
        return [t.count for t in self.types]

    # -- validation -------------------------------------------------------

    def validate(self) -> ValidationReport:
        """Check connectivity, target uniqueness and matrix dimensions.

        Pure: repeated calls return identical reports.
        """
        messages = []
        dimension_ok = True
        for r in self.relations:
            shape = (self.types[r.source].count, self.types[r.target].count)
            if r.values.shape != shape or r.observed_mask.shape != shape:
                dimension_ok = False
                messages.append(f"relation {r.id} has shape {r.values.shape}, expected {shape}")
        for c in self.constraints:
            n = self.types[c.type].count
            if c.values.shape != (n, n):
                dimension_ok = False
                messages.append(f"constraint {c.id} has shape {c.values.shape}, expected {(n, n)}")

        n_targets = sum(1 for r in self.relations if r.is_target)
        single_target = n_targets == 1
        if not single_target:
            messages.append(f"schema has {n_targets} target relations, expected exactly 1")

        connected, isolated = self._connectivity()
        if not connected:
            messages.append("fusion graph is not connected; isolated types: "
                            + ", ".join(isolated))
        return ValidationReport(connected, single_target, dimension_ok,
                                isolated, messages)

    def _connectivity(self) -> tuple[bool, list[str]]:
        n = len(self.types)
        if n == 0:
            return False, []
        adjacency = {i: set() for i in range(n)}
        for r in self.relations:
            adjacency[r.source].add(r.target)
            adjacency[r.target].add(r.source)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adjacency[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        isolated = [self.types[i].name for i in range(n) if i not in seen]
        return not isolated, isolated

    def _check_type_id(self, type_id: int) -> None:
        if not (0 <= type_id < len(self.types)):
            raise SchemaError(f"unknown object type id: {type_id}")
