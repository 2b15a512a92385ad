import numpy as np
import pytest

from fusemf import FusionSchema
from fusemf.synthetic import SyntheticSpec, synth_generate


def planted_chain(seed=0, sizes=(20, 15), ranks=(3, 2), noise=0.0, density=1.0,
                  target_mode="graded", extra=()):
    """Two-or-more-type chain with planted factors; returns (schema, truth)."""
    relations = [(i, i + 1) for i in range(len(sizes) - 1)]
    spec = SyntheticSpec(sizes=list(sizes), ranks=list(ranks),
                         relations=relations, target=(0, 1),
                         noise_sigma=noise, target_density=density,
                         target_mode=target_mode, seed=seed)
    for key, value in extra:
        setattr(spec, key, value)
    return synth_generate(spec)


@pytest.fixture
def two_type_schema():
    """Tiny hand-built schema: 2 x 3 target plus its reverse."""
    schema = FusionSchema()
    a = schema.add_object_type("a", 2)
    b = schema.add_object_type("b", 3)
    schema.add_relation(a, b, np.array([[0.1, 0.5, 0.9],
                                        [0.4, 0.2, 0.8]]), is_target=True)
    return schema


def random_schema(rng, n_types=3, with_constraints=True, max_size=8, max_extra=2):
    """Random connected schema for property-style checks."""
    sizes = rng.integers(2, max_size + 1, size=n_types)
    schema = FusionSchema()
    for i, n in enumerate(sizes):
        schema.add_object_type(f"t{i}", int(n))
    # spanning chain keeps the graph connected
    edges = [(i, i + 1) for i in range(n_types - 1)]
    for _ in range(int(rng.integers(0, max_extra + 1))):
        i, j = rng.choice(n_types, size=2, replace=False)
        edges.append((int(i), int(j)))
    seen = set()
    for idx, (i, j) in enumerate(edges):
        if (i, j) in seen:
            continue
        seen.add((i, j))
        values = rng.random((sizes[i], sizes[j]))
        if idx == 0:
            values = values / values.max()
        schema.add_relation(i, j, values, is_target=(idx == 0))
    if with_constraints:
        for i in range(n_types):
            for _ in range(int(rng.integers(0, 3))):
                m = 0.1 * rng.standard_normal((sizes[i], sizes[i]))
                schema.add_constraint(i, (m + m.T) / 2)
    return schema
