"""Small worked-example fusion systems used by the tests and shipped demos."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .schema import FusionSchema
from .synthetic import SyntheticSpec, SyntheticTruth, synth_generate

__all__ = ["demo_four_types", "demo_six_types", "six_type_spec", "materialize_demo"]


def demo_four_types(seed: int = 0) -> FusionSchema:
    """Four types with a sparse relation pattern and mixed constraint counts.

    Types a, b, c, d with sizes 6, 5, 4, 7.  Relations a->b (target), b->a
    (distinct data), b->c, d->b, d->a, d->c; there is no data between a and c,
    yet the graph is connected.  One constraint on b, two on d, none
    elsewhere.
    """
    rng = np.random.default_rng(seed)
    schema = FusionSchema()
    a = schema.add_object_type("a", 6)
    b = schema.add_object_type("b", 5)
    c = schema.add_object_type("c", 4)
    d = schema.add_object_type("d", 7)

    def rand(nr, nc):
        return rng.random((nr, nc))

    target = rand(6, 5)
    schema.add_relation(a, b, target / target.max(), is_target=True)
    schema.add_relation(b, a, rand(5, 6))
    schema.add_relation(b, c, rand(5, 4))
    schema.add_relation(d, b, rand(7, 5))
    schema.add_relation(d, a, rand(7, 6))
    schema.add_relation(d, c, rand(7, 4))

    def constraint(n):
        m = 0.05 * rng.standard_normal((n, n))
        m = (m + m.T) / 2
        np.fill_diagonal(m, 0.0)
        return m

    schema.add_constraint(b, constraint(5))
    schema.add_constraint(d, constraint(7))
    schema.add_constraint(d, constraint(7))
    return schema


def six_type_spec(seed: int = 0, density: float = 0.35, noise: float = 0.15,
                  constraint_scale: float = 0.03, informativeness: float = 1.0,
                  cluster_floor: float = 0.3) -> SyntheticSpec:
    """Planted six-type configuration with a multi-hop fusion graph.

    The target couples the first two types; two further types reach the
    target types only through intermediaries.  Constraints exist for types
    0, 1, 4 and 5.
    """
    return SyntheticSpec(
        sizes=[24, 12, 10, 14, 8, 9],
        ranks=[2, 2, 2, 2, 2, 2],
        relations=[(0, 1), (0, 2), (0, 3), (0, 5), (3, 4), (3, 1), (5, 1)],
        target=(0, 1),
        noise_sigma=noise,
        target_density=density,
        informativeness=informativeness,
        constraint_types=[0, 1, 4, 5],
        constraint_scale=constraint_scale,
        seed=seed,
        target_mode="binary",
        cluster_floor=cluster_floor,
    )


def demo_six_types(seed: int = 0, **overrides) -> tuple[FusionSchema, SyntheticTruth]:
    spec = six_type_spec(seed)
    for key, value in overrides.items():
        setattr(spec, key, value)
    return synth_generate(spec)


def materialize_demo(directory, which: str = "six", seed: int = 0) -> Path:
    """Write a demo schema to disk in the CLI formats; returns the config path."""
    from .io import write_matrix, _atomic_write

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if which == "four":
        schema = demo_four_types(seed)
    elif which == "six":
        schema, _ = demo_six_types(seed)
    else:
        raise ValueError(f"unknown demo {which!r}")

    lines = ["# fusemf demo schema"]
    for t in schema.types:
        lines.append(f"type {t.name} {t.count}")
    for r in schema.relations:
        fname = f"R_{schema.types[r.source].name}_{schema.types[r.target].name}.mtx"
        write_matrix(directory / fname, r.values, r.observed_mask)
        suffix = " target" if r.is_target else ""
        lines.append(f"relation {schema.types[r.source].name} "
                     f"{schema.types[r.target].name} {fname}{suffix}")
    for c in schema.constraints:
        fname = f"C_{schema.types[c.type].name}_{c.index}.mtx"
        write_matrix(directory / fname, c.values)
        lines.append(f"constraint {schema.types[c.type].name} {fname}")
    for t in schema.types:
        lines.append(f"ranks {t.name} 2")
    lines += ["param seed 0", "param max_iters 100"]
    config_path = directory / "schema.cfg"
    _atomic_write(config_path, "\n".join(lines) + "\n")
    return config_path
