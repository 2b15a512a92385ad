"""File formats: coordinate matrices, schema configs, persisted models, reports.

All writes go through a temp-file-plus-rename so partially written files never
appear, and all floats use 17 significant digits so write/read round-trips are
exact.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .factorize import FactorSystem
from .schema import FusionSchema

__all__ = [
    "MatrixFormatError",
    "ConfigError",
    "write_matrix",
    "read_matrix",
    "SchemaConfig",
    "parse_config",
    "load_schema",
    "save_models",
    "load_models",
    "write_table",
]

MATRIX_HEADER = "%%fusemf coordinate"


class MatrixFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _fmt(value: float) -> str:
    return f"{float(value):.17g}"


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_matrix(path, values: np.ndarray, mask: np.ndarray | None = None) -> None:
    """Write observed cells (all cells when ``mask`` is None) as coordinates."""
    values = np.asarray(values, dtype=float)
    rows, cols = values.shape
    lines = [f"{MATRIX_HEADER} {rows} {cols}"]
    if mask is None:
        cells = ((r, c) for r in range(rows) for c in range(cols))
    else:
        mask = np.asarray(mask, dtype=bool)
        cells = zip(*np.nonzero(mask))
    for r, c in cells:
        lines.append(f"{r} {c} {_fmt(values[r, c])}")
    _atomic_write(path, "\n".join(lines) + "\n")


def read_matrix(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a coordinate matrix; absent cells are unobserved zeros."""
    path = Path(path)
    with open(path) as handle:
        lines = handle.read().splitlines()
    if not lines or not lines[0].startswith(MATRIX_HEADER):
        raise MatrixFormatError(f"{path}:1: expected header '{MATRIX_HEADER} <rows> <cols>'")
    header = lines[0].split()
    if len(header) != 4:
        raise MatrixFormatError(f"{path}:1: malformed header {lines[0]!r}")
    try:
        rows, cols = int(header[2]), int(header[3])
    except ValueError as err:
        raise MatrixFormatError(f"{path}:1: non-integer dimensions") from err
    values = np.zeros((rows, cols))
    mask = np.zeros((rows, cols), dtype=bool)
    for number, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise MatrixFormatError(f"{path}:{number}: expected 'row col value'")
        try:
            r, c, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as err:
            raise MatrixFormatError(f"{path}:{number}: {err}") from err
        if not (0 <= r < rows and 0 <= c < cols):
            raise MatrixFormatError(f"{path}:{number}: index ({r}, {c}) outside "
                                    f"{rows} x {cols}")
        if mask[r, c]:
            raise MatrixFormatError(f"{path}:{number}: duplicate coordinate ({r}, {c})")
        values[r, c] = v
        mask[r, c] = True
    return values, mask


# ---------------------------------------------------------------------------
# schema config

@dataclass
class SchemaConfig:
    """Parsed declaration of a fusion schema plus fit parameters."""

    types: list[tuple[str, int]] = field(default_factory=list)
    relations: list[dict] = field(default_factory=list)
    constraints: list[dict] = field(default_factory=list)
    rank_ranges: dict[str, tuple[int, int]] = field(default_factory=dict)
    params: dict[str, str] = field(default_factory=dict)
    base_dir: Path = Path(".")


def parse_config(path) -> SchemaConfig:
    """Parse the line-oriented schema declaration.

    Directives: ``type <name> <count>``, ``relation <src> <dst> <file>
    [target]``, ``constraint <type> <file>``, ``ranks <type> <lo> [<hi>]``,
    ``param <key> <value>``.
    """
    path = Path(path)
    config = SchemaConfig(base_dir=path.parent)
    with open(path) as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            where = f"{path}:{number}"
            kind = parts[0]
            if kind == "type":
                if len(parts) != 3:
                    raise ConfigError(f"{where}: expected 'type <name> <count>'")
                try:
                    config.types.append((parts[1], int(parts[2])))
                except ValueError as err:
                    raise ConfigError(f"{where}: {err}") from err
            elif kind == "relation":
                if len(parts) not in (4, 5) or (len(parts) == 5 and parts[4] != "target"):
                    raise ConfigError(f"{where}: expected 'relation <src> <dst> <file> [target]'")
                config.relations.append({"source": parts[1], "target": parts[2],
                                         "file": parts[3], "is_target": len(parts) == 5,
                                         "line": number})
            elif kind == "constraint":
                if len(parts) != 3:
                    raise ConfigError(f"{where}: expected 'constraint <type> <file>'")
                config.constraints.append({"type": parts[1], "file": parts[2],
                                           "line": number})
            elif kind == "ranks":
                if len(parts) not in (3, 4):
                    raise ConfigError(f"{where}: expected 'ranks <type> <lo> [<hi>]'")
                try:
                    lo = int(parts[2])
                    hi = int(parts[3]) if len(parts) == 4 else lo
                except ValueError as err:
                    raise ConfigError(f"{where}: {err}") from err
                config.rank_ranges[parts[1]] = (lo, hi)
            elif kind == "param":
                if len(parts) != 3:
                    raise ConfigError(f"{where}: expected 'param <key> <value>'")
                config.params[parts[1]] = parts[2]
            else:
                raise ConfigError(f"{where}: unknown directive {kind!r}")
    if not config.types:
        raise ConfigError(f"{path}: config declares no object types")
    return config


def load_schema(config: SchemaConfig) -> FusionSchema:
    """Materialize the declared schema, reading every matrix file."""
    schema = FusionSchema()
    ids = {}
    for name, count in config.types:
        ids[name] = schema.add_object_type(name, count)
    for rel in config.relations:
        for side in ("source", "target"):
            if rel[side] not in ids:
                raise ConfigError(f"relation on line {rel['line']} references "
                                  f"unknown type {rel[side]!r}")
        values, mask = read_matrix(config.base_dir / rel["file"])
        schema.add_relation(ids[rel["source"]], ids[rel["target"]], values, mask,
                            rel["is_target"])
    for con in config.constraints:
        if con["type"] not in ids:
            raise ConfigError(f"constraint on line {con['line']} references "
                              f"unknown type {con['type']!r}")
        values, _ = read_matrix(config.base_dir / con["file"])
        schema.add_constraint(ids[con["type"]], values)
    return schema


# ---------------------------------------------------------------------------
# model persistence

def save_models(directory, schema: FusionSchema, members: list[FactorSystem],
                manifest_extra: dict | None = None) -> None:
    """Persist ensemble members as matrix files plus a JSON manifest.

    The directory is self-contained: relation shapes, the target data and all
    factors are stored, so prediction needs no other inputs.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = schema.target
    manifest = {
        "format": "fusemf-model/1",
        "types": [{"name": t.name, "count": t.count} for t in schema.types],
        "relations": [{"source": schema.types[r.source].name,
                       "target": schema.types[r.target].name,
                       "is_target": r.is_target} for r in schema.relations],
        "members": [],
    }
    manifest.update(manifest_extra or {})
    write_matrix(directory / "target.mtx", target.values, target.observed_mask)
    for m, system in enumerate(members):
        sub = directory / f"member_{m:03d}"
        sub.mkdir(exist_ok=True)
        entry = {"ranks": {schema.types[i].name: k for i, k in system.ranks.items()},
                 "factors": {}, "cores": {}}
        for i, G in system.G.items():
            fname = f"G_{schema.types[i].name}.mtx"
            write_matrix(sub / fname, G)
            entry["factors"][schema.types[i].name] = f"member_{m:03d}/{fname}"
        for (i, j), S in system.S.items():
            fname = f"S_{schema.types[i].name}__{schema.types[j].name}.mtx"
            write_matrix(sub / fname, S)
            entry["cores"][f"{schema.types[i].name}__{schema.types[j].name}"] = \
                f"member_{m:03d}/{fname}"
        manifest["members"].append(entry)
    _atomic_write(directory / "manifest.json",
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_models(directory) -> tuple[FusionSchema, list[FactorSystem], dict]:
    """Rebuild a skeleton schema (shapes plus target data) and the members."""
    directory = Path(directory)
    with open(directory / "manifest.json") as handle:
        manifest = json.load(handle)
    schema = FusionSchema()
    ids = {}
    for t in manifest["types"]:
        ids[t["name"]] = schema.add_object_type(t["name"], t["count"])
    target_values, target_mask = read_matrix(directory / "target.mtx")
    for rel in manifest["relations"]:
        src, dst = ids[rel["source"]], ids[rel["target"]]
        if rel["is_target"]:
            schema.add_relation(src, dst, target_values, target_mask, True)
        else:
            shape = (schema.types[src].count, schema.types[dst].count)
            schema.add_relation(src, dst, np.zeros(shape),
                                np.zeros(shape, dtype=bool))
    members = []
    for entry in manifest["members"]:
        ranks = {ids[name]: k for name, k in entry["ranks"].items()}
        G = {}
        for name, rel_path in entry["factors"].items():
            values, _ = read_matrix(directory / rel_path)
            G[ids[name]] = values
        S = {}
        for pair, rel_path in entry["cores"].items():
            a, b = pair.split("__")
            values, _ = read_matrix(directory / rel_path)
            S[(ids[a], ids[b])] = values
        members.append(FactorSystem(ranks=ranks,
                                    sizes={t.id: t.count for t in schema.types},
                                    G=G, S=S))
    return schema, members, manifest


def write_table(path, header: list[str], rows: list[list], comments: list[str] = ()) -> None:
    """Deterministic tab-separated report with optional leading comments."""
    lines = [f"# {c}" for c in comments]
    lines.append("\t".join(header))
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, float):
                cells.append(_fmt(cell))
            else:
                cells.append(str(cell))
        lines.append("\t".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")
