import numpy as np
import pytest

from fusemf import FusionSchema, SchemaError
from fusemf.blockops import BlockLayout, assemble_constraint_block, assemble_relation_block

from conftest import random_schema


def test_first_type_registration():
    schema = FusionSchema()
    tid = schema.add_object_type("gene", 3)
    assert tid == 0
    assert schema.types[0].count == 3


def test_duplicate_type_name_rejected():
    schema = FusionSchema()
    schema.add_object_type("gene", 3)
    with pytest.raises(SchemaError, match="duplicate"):
        schema.add_object_type("gene", 5)


def test_nonpositive_count_rejected():
    schema = FusionSchema()
    with pytest.raises(SchemaError, match="count"):
        schema.add_object_type("term", 0)


class TestAddRelation:
    def setup_method(self):
        self.schema = FusionSchema()
        self.a = self.schema.add_object_type("a", 2)
        self.b = self.schema.add_object_type("b", 3)

    def test_matching_dimensions_accepted(self):
        rid = self.schema.add_relation(self.a, self.b, np.ones((2, 3)))
        assert rid == 0

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(SchemaError, match="must be"):
            self.schema.add_relation(self.a, self.b, np.ones((3, 2)))

    def test_target_range_enforced(self):
        values = np.ones((2, 3))
        values[0, 0] = 1.5
        with pytest.raises(SchemaError, match=r"\[0, 1\]"):
            self.schema.add_relation(self.a, self.b, values, is_target=True)

    def test_self_relation_rejected(self):
        with pytest.raises(SchemaError, match="itself"):
            self.schema.add_relation(self.a, self.a, np.ones((2, 2)))

    def test_second_target_rejected(self):
        self.schema.add_relation(self.a, self.b, np.ones((2, 3)) / 2, is_target=True)
        with pytest.raises(SchemaError, match="already has a target"):
            self.schema.add_relation(self.b, self.a, np.ones((3, 2)) / 2, is_target=True)

    def test_both_directions_kept_verbatim(self):
        fwd = np.arange(6, dtype=float).reshape(2, 3)
        rev = np.ones((3, 2))
        self.schema.add_relation(self.a, self.b, fwd)
        self.schema.add_relation(self.b, self.a, rev)
        assert np.array_equal(self.schema.relations[0].values, fwd)
        assert np.array_equal(self.schema.relations[1].values, rev)


class TestAddConstraint:
    def test_sequential_indexing(self):
        schema = FusionSchema()
        t = schema.add_object_type("t", 4)
        schema.add_constraint(t, np.zeros((4, 4)))
        schema.add_constraint(t, np.ones((4, 4)))
        assert [c.index for c in schema.constraints] == [1, 2]

    def test_dimension_mismatch_rejected(self):
        schema = FusionSchema()
        t = schema.add_object_type("t", 4)
        with pytest.raises(SchemaError):
            schema.add_constraint(t, np.zeros((3, 4)))

    def test_all_zero_constraint_accepted(self):
        schema = FusionSchema()
        t = schema.add_object_type("t", 4)
        cid = schema.add_constraint(t, np.zeros((4, 4)))
        assert schema.constraints[cid].index == 1


class TestValidate:
    def test_sparse_relation_pattern_is_connected(self):
        # four types where two of them are never directly related
        from fusemf.fixtures import demo_four_types
        schema = demo_four_types()
        pairs = {(r.source, r.target) for r in schema.relations}
        assert (0, 2) not in pairs and (2, 0) not in pairs
        report = schema.validate()
        assert report.connected and report.ok

    def test_disconnected_two_types(self):
        schema = FusionSchema()
        schema.add_object_type("a", 2)
        schema.add_object_type("b", 2)
        report = schema.validate()
        assert not report.connected
        assert "b" in report.isolated_types

    def test_two_targets_fail_validation(self):
        schema = FusionSchema()
        a = schema.add_object_type("a", 2)
        b = schema.add_object_type("b", 2)
        schema.add_relation(a, b, np.ones((2, 2)) / 2, is_target=True)
        # force the invalid state the builder guards against
        schema.relations.append(
            type(schema.relations[0])(1, b, a, np.ones((2, 2)) / 2,
                                      np.ones((2, 2), dtype=bool), True))
        report = schema.validate()
        assert not report.single_target and not report.ok

    def test_validate_is_pure(self):
        schema = FusionSchema()
        schema.add_object_type("a", 2)
        first = schema.validate()
        second = schema.validate()
        assert first == second


def test_validated_schemas_assemble_without_errors():
    rng = np.random.default_rng(42)
    for _ in range(25):
        schema = random_schema(rng)
        report = schema.validate()
        assert report.ok
        layout = BlockLayout.from_schema(schema)
        big = assemble_relation_block(schema, layout)
        assert big.shape == (layout.total_rows, layout.total_rows)
        for t in range(1, schema.max_constraint_index() + 1):
            theta = assemble_constraint_block(schema, t, layout)
            assert theta.shape == big.shape
