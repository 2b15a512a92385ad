"""Command-line interface.

Subcommands: validate, fit, predict, evaluate, synth, init-study.  Reports
are tab-separated text; report-producing commands also render PNG figures
next to their tables unless --no-figures is given.  Exit codes: 0 success,
1 validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluation, figures, io, predict, ranksel
from .factorize import FitConfig, factorize
from .initialization import STRATEGY_NAMES, InitStrategy, relative_error
from .schema import FusionSchema, SchemaError
from .synthetic import SyntheticSpec, synth_generate

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _add_common_fit_flags(parser):
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--epsilon", type=float, default=None)
    parser.add_argument("--max-iters", type=int, default=None)
    parser.add_argument("--check-interval", type=int, default=None)
    parser.add_argument("--ensemble-size", type=int, default=None)
    parser.add_argument("--init", choices=STRATEGY_NAMES, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusemf",
                                     description="Collective matrix tri-factorization "
                                                 "for multi-relational data fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a schema config")
    p.add_argument("config")

    p = sub.add_parser("fit", help="fit an ensemble and persist it")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="model directory")
    p.add_argument("--ranks", help="fixed ranks, e.g. gene=3,term=2")
    p.add_argument("--rank-ranges", help="search ranges, e.g. gene=1:8,term=1:6")
    p.add_argument("--no-figures", action="store_true")
    _add_common_fit_flags(p)

    p = sub.add_parser("predict", help="predict from a persisted model")
    p.add_argument("model_dir")
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--profile", help="matrix file with one row: the new object's "
                                         "concatenated relation values")
    group.add_argument("--all-unobserved", action="store_true")

    p = sub.add_parser("evaluate", help="cross-validated F1 report")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--balance", action="store_true")
    p.add_argument("--flatten", action="store_true",
                   help="also evaluate the flattened single-matrix baseline")
    p.add_argument("--ablate", help="source subsets, e.g. 'base=r0;more=r0+r1+c0' "
                                    "(c0@0.5 keeps half the constraint entries)")
    p.add_argument("--ranks")
    p.add_argument("--rank-ranges")
    p.add_argument("--reselect-per-fold", action="store_true",
                   help="re-run the rank search inside every training fold")
    p.add_argument("--no-figures", action="store_true")
    _add_common_fit_flags(p)

    p = sub.add_parser("synth", help="materialize a synthetic fusion system")
    p.add_argument("--out", required=True)
    p.add_argument("--sizes", required=True, help="comma list, e.g. 40,30,20")
    p.add_argument("--ranks", required=True, help="comma list, e.g. 4,3,2")
    p.add_argument("--relations", required=True,
                   help="comma list of i-j pairs, e.g. 0-1,1-2")
    p.add_argument("--target", required=True, help="target pair, e.g. 0-1")
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--informativeness", type=float, default=1.0)
    p.add_argument("--constraint-types", default="",
                   help="comma list of type indices receiving constraints")
    p.add_argument("--constraint-scale", type=float, default=0.01)
    p.add_argument("--target-mode", choices=("graded", "binary"), default="graded")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("init-study", help="compare initialization strategies")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--n-seeds", type=int, default=20)
    p.add_argument("--no-figures", action="store_true")
    _add_common_fit_flags(p)

    return parser


# ---------------------------------------------------------------------------
# shared plumbing

def _fit_params(config: io.SchemaConfig, args) -> dict:
    """Fit parameters: config 'param' lines overridden by explicit flags."""
    params = {
        "seed": 0, "epsilon": 1e-5, "max_iters": 500, "check_interval": 5,
        "ensemble_size": 15, "init": "random_acol", "threshold": 0.5,
    }
    casts = {"seed": int, "epsilon": float, "max_iters": int,
             "check_interval": int, "ensemble_size": int, "init": str,
             "threshold": float}
    for key, raw in config.params.items():
        if key not in casts:
            raise io.ConfigError(f"unknown param {key!r}")
        params[key] = casts[key](raw)
    for key in ("seed", "epsilon", "max_iters", "check_interval",
                "ensemble_size", "init"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    if getattr(args, "threshold", None) is not None:
        params["threshold"] = args.threshold
    return params


def _parse_rank_spec(text: str, ranged: bool) -> dict[str, tuple[int, int]]:
    out = {}
    for item in text.split(","):
        name, _, value = item.partition("=")
        if not value:
            raise ValueError(f"malformed rank entry {item!r}")
        if ranged and ":" in value:
            lo, hi = value.split(":")
            out[name] = (int(lo), int(hi))
        else:
            out[name] = (int(value), int(value))
    return out


def _resolve_ranks(schema: FusionSchema, config: io.SchemaConfig, args,
                   params: dict, out_dir: Path | None, want_figures: bool):
    """Fixed ranks, either given directly or found by the range search."""
    ranges = dict(config.rank_ranges)
    if getattr(args, "ranks", None):
        ranges.update(_parse_rank_spec(args.ranks, ranged=False))
    if getattr(args, "rank_ranges", None):
        ranges.update(_parse_rank_spec(args.rank_ranges, ranged=True))
    missing = [t.name for t in schema.types if t.name not in ranges]
    if missing:
        raise SchemaError("no ranks for types: " + ", ".join(missing))
    by_id = {schema.type_by_name(name).id: rng for name, rng in ranges.items()}
    if all(lo == hi for lo, hi in by_id.values()):
        return {i: lo for i, (lo, hi) in by_id.items()}, None
    search = ranksel.RankSearchConfig(seed=params["seed"],
                                      max_iters=min(params["max_iters"], 150),
                                      epsilon=params["epsilon"],
                                      init=InitStrategy(params["init"]))
    selected, report = ranksel.select_ranks(
        schema, [ranksel.RankRange(i, lo, hi) for i, (lo, hi) in by_id.items()],
        search)
    if out_dir is not None:
        rows = [[*q.ranks, q.rss, q.explained_variance, q.rss_out,
                 q.explained_variance_out, q.cophenetic]
                for q in report.evaluations]
        header = [f"k_{t.name}" for t in schema.types] + \
                 ["rss", "r2", "rss_out", "r2_out", "rho"]
        io.write_table(out_dir / "rank_search.tsv", header, rows,
                       comments=[f"selected: "
                                 + ",".join(str(v) for v in report.selected),
                                 f"evaluations: {report.n_evaluations}"])
        if want_figures:
            figures.rank_curves_figure(report, out_dir / "rank_search.png")
    return selected, report


def _fit_ensemble(schema, ranks, params, size):
    members, traces = [], []
    rng = np.random.default_rng(params["seed"])
    sizes = {t.id: t.count for t in schema.types}
    for _ in range(size):
        m_rng = np.random.default_rng(int(rng.integers(2 ** 63)))
        jittered = {i: int(np.clip(k + m_rng.integers(-1, 2), 1, sizes[i]))
                    for i, k in ranks.items()} if size > 1 else dict(ranks)
        system, trace = factorize(schema, jittered, InitStrategy(params["init"]),
                                  FitConfig(params["epsilon"], params["check_interval"],
                                            params["max_iters"],
                                            int(m_rng.integers(2 ** 63))))
        members.append(system)
        traces.append(trace)
    return members, traces


# ---------------------------------------------------------------------------
# commands

def cmd_validate(args) -> int:
    config = io.parse_config(args.config)
    schema = io.load_schema(config)
    report = schema.validate()
    print(f"types: {len(schema.types)}  relations: {len(schema.relations)}  "
          f"constraints: {len(schema.constraints)}")
    print(f"connected: {report.connected}")
    print(f"single target: {report.single_target}")
    print(f"dimensions: {report.dimension_ok}")
    for message in report.messages:
        print(f"  - {message}")
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_fit(args) -> int:
    config = io.parse_config(args.config)
    schema = io.load_schema(config)
    report = schema.validate()
    if not report.ok:
        for message in report.messages:
            print(message, file=sys.stderr)
        return EXIT_INVALID
    params = _fit_params(config, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ranks, _ = _resolve_ranks(schema, config, args, params, out_dir,
                              not args.no_figures)
    members, traces = _fit_ensemble(schema, ranks, params, params["ensemble_size"])
    io.save_models(out_dir, schema, members, manifest_extra={
        "seed": params["seed"],
        "init": params["init"],
        "threshold": params["threshold"],
        "selected_ranks": {schema.types[i].name: k for i, k in ranks.items()},
        "traces": [{"iterations": t.iterations_run, "converged": t.converged,
                    "diverged": t.diverged,
                    "final_residual": (t.target_residuals[-1][1]
                                       if t.target_residuals else None)}
                   for t in traces],
    })
    if not args.no_figures:
        figures.trace_figure(traces, out_dir / "fit_trace.png")
    print(f"fitted {len(members)} members -> {out_dir}")
    return EXIT_OK


def cmd_predict(args) -> int:
    schema, members, manifest = io.load_models(args.model_dir)
    target = schema.target
    out_path = Path(args.out)
    threshold_votes = predict.majority_threshold(len(members))
    comments = [f"ensemble_size: {len(members)}",
                f"majority_threshold: {threshold_votes}"]
    if args.all_unobserved:
        result = predict.ensemble_predict(members, schema)
        unobserved = ~target.observed_mask
        rows = [[e.p, e.q, e.score, e.percentile, e.votes]
                for e in result.entries if unobserved[e.p, e.q]]
        comments.append("mode: all-unobserved candidates (row-centric rule, "
                        "column percentile)")
        comments.append(f"rows_without_known_associations: "
                        f"{result.diagnostics['rows_without_known_associations']}")
    else:
        values, _ = io.read_matrix(args.profile)
        if values.shape[0] != 1:
            raise ValueError("profile file must contain exactly one row")
        vector = values[0]
        fold_type = target.source
        known = {q for q, v in _target_segment(schema, vector).items() if v > 0}
        rows = []
        scores = np.zeros((len(members), schema.types[target.target].count))
        votes = np.zeros(schema.types[target.target].count, dtype=int)
        for m, member in enumerate(members):
            extended = predict.extend_model(
                member, schema, predict.FoldInProfile(fold_type, vector))
            row = predict.reconstruct(extended, fold_type, target.target)[-1]
            scores[m] = row
            if known:
                mean_known = np.mean([row[q] for q in known])
                votes += (row > mean_known) & \
                    np.array([q not in known for q in range(len(row))])
        mean_row = scores.mean(axis=0)
        known_pairs = predict.known_positives(target)
        for q in range(len(mean_row)):
            if known and votes[q] >= threshold_votes and q not in known:
                pct = predict.percentile_strength(
                    np.vstack([target.values, mean_row]), q,
                    float(mean_row[q]), known_pairs)
                rows.append([manifest["types"][fold_type]["count"], q,
                             float(mean_row[q]),
                             float("nan") if pct is None else pct, int(votes[q])])
        comments.append("mode: fold-in of one new object")
        if not known:
            comments.append("note: profile has no known target associations; "
                            "no candidates can be proposed")
    io.write_table(out_path, ["p", "q", "mean_score", "percentile", "votes"],
                   rows, comments=comments)
    print(f"wrote {len(rows)} candidate pairs -> {out_path}")
    return EXIT_OK


def _target_segment(schema: FusionSchema, vector: np.ndarray) -> dict[int, float]:
    """Target-relation slice of a fold-in profile, keyed by column index."""
    target = schema.target
    fold_type = target.source
    offset = 0
    for r in schema.relations:
        if fold_type not in (r.source, r.target):
            continue
        length = r.values.shape[1] if r.source == fold_type else r.values.shape[0]
        if r.is_target:
            segment = vector[offset:offset + length]
            return {q: float(v) for q, v in enumerate(segment)}
        offset += length
    return {}


def cmd_evaluate(args) -> int:
    config = io.parse_config(args.config)
    schema = io.load_schema(config)
    report = schema.validate()
    if not report.ok:
        for message in report.messages:
            print(message, file=sys.stderr)
        return EXIT_INVALID
    params = _fit_params(config, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reselect_ranges = reselect_config = None
    if args.reselect_per_fold:
        ranges = dict(config.rank_ranges)
        if args.rank_ranges:
            ranges.update(_parse_rank_spec(args.rank_ranges, ranged=True))
        reselect_ranges = [ranksel.RankRange(schema.type_by_name(n).id, lo, hi)
                           for n, (lo, hi) in ranges.items()]
        reselect_config = ranksel.RankSearchConfig(
            seed=params["seed"], max_iters=min(params["max_iters"], 150),
            epsilon=params["epsilon"], init=InitStrategy(params["init"]))
        ranks = {schema.type_by_name(n).id: lo for n, (lo, _) in ranges.items()}
    else:
        ranks, _ = _resolve_ranks(schema, config, args, params, out_dir,
                                  not args.no_figures)
    cv = evaluation.CvConfig(folds=args.folds, seed=params["seed"],
                             threshold=params["threshold"], balance=args.balance)
    fit = FitConfig(params["epsilon"], params["check_interval"],
                    params["max_iters"], params["seed"])
    ensemble = evaluation.EnsembleConfig(size=params["ensemble_size"])
    init = InitStrategy(params["init"])

    runs = [("structured",
             evaluation.run_cv(schema, ranks, cv, fit, ensemble, init,
                               reselect_ranges=reselect_ranges,
                               reselect_config=reselect_config))]
    if args.flatten:
        runs.append(("flattened",
                     evaluation.run_cv(schema, ranks, cv, fit, ensemble, init,
                                       flatten=True)))
    rows = []
    for name, rep in runs:
        rows.append([name, rep.mean_f1, rep.mean_f1_candidate]
                    + [f for f in rep.fold_f1])
    header = ["model", "mean_f1", "mean_f1_candidate"] + \
             [f"fold{i}" for i in range(args.folds)]
    io.write_table(out_dir / "evaluation.tsv", header, rows,
                   comments=[f"folds: {args.folds}", f"threshold: {params['threshold']}",
                             f"ensemble_size: {params['ensemble_size']}"])
    per_label = runs[0][1].per_label_f1
    io.write_table(out_dir / "per_label_f1.tsv", ["label", "f1"],
                   [[q, v] for q, v in enumerate(per_label)])
    if not args.no_figures:
        figures.evaluation_figure(runs, out_dir / "evaluation.png")

    if args.ablate:
        cells = _parse_ablation(args.ablate, schema)
        results = evaluation.ablation_run(schema, cells, ranks, cv, fit,
                                          ensemble, init)
        ab_rows = [[cell.name, rep.mean_f1,
                    float(np.std(rep.fold_f1)), rep.mean_f1_candidate]
                   for cell, rep in results]
        io.write_table(out_dir / "ablation.tsv",
                       ["subset", "mean_f1", "std_f1", "mean_f1_candidate"], ab_rows)
        if not args.no_figures:
            figures.ablation_figure([(r[0], r[1], r[2]) for r in ab_rows],
                                    out_dir / "ablation.png")
    for name, rep in runs:
        print(f"{name}: mean F1 {rep.mean_f1:.4f} "
              f"(candidate rule {rep.mean_f1_candidate:.4f})")
    return EXIT_OK


def _parse_ablation(text: str, schema: FusionSchema) -> list[evaluation.AblationCell]:
    cells = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        name, _, items = chunk.rpartition("=")
        if not name:
            name = items
        rel_ids, con_ids = [], []
        density = 1.0
        for item in items.split("+"):
            item = item.strip()
            ident, _, dens = item.partition("@")
            if dens:
                density = float(dens)
            if ident.startswith("r"):
                rel_ids.append(int(ident[1:]))
            elif ident.startswith("c"):
                con_ids.append(int(ident[1:]))
            else:
                raise ValueError(f"ablation item {item!r} must look like r0, c1 "
                                 "or c1@0.5")
        target_id = schema.target.id
        if target_id not in rel_ids:
            rel_ids.append(target_id)
        cells.append(evaluation.AblationCell(name, tuple(sorted(rel_ids)),
                                             tuple(sorted(con_ids)), density))
    return cells


def cmd_synth(args) -> int:
    sizes = [int(v) for v in args.sizes.split(",")]
    ranks = [int(v) for v in args.ranks.split(",")]
    relations = [tuple(int(x) for x in pair.split("-")) for pair in args.relations.split(",")]
    target = tuple(int(x) for x in args.target.split("-"))
    constraint_types = [int(v) for v in args.constraint_types.split(",") if v != ""]
    spec = SyntheticSpec(sizes=sizes, ranks=ranks, relations=relations,
                         target=target, noise_sigma=args.noise,
                         target_density=args.density,
                         informativeness=args.informativeness,
                         constraint_types=constraint_types,
                         constraint_scale=args.constraint_scale,
                         seed=args.seed, target_mode=args.target_mode)
    schema, truth = synth_generate(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["# synthetic fusion schema"]
    for t in schema.types:
        lines.append(f"type {t.name} {t.count}")
    for r in schema.relations:
        fname = f"R_{schema.types[r.source].name}_{schema.types[r.target].name}.mtx"
        io.write_matrix(out_dir / fname, r.values, r.observed_mask)
        lines.append(f"relation {schema.types[r.source].name} "
                     f"{schema.types[r.target].name} {fname}"
                     + (" target" if r.is_target else ""))
    for c in schema.constraints:
        fname = f"C_{schema.types[c.type].name}_{c.index}.mtx"
        io.write_matrix(out_dir / fname, c.values)
        lines.append(f"constraint {schema.types[c.type].name} {fname}")
    for t, k in zip(schema.types, ranks):
        lines.append(f"ranks {t.name} {k}")
    lines.append(f"param seed {args.seed}")
    io._atomic_write(out_dir / "schema.cfg", "\n".join(lines) + "\n")
    io.write_matrix(out_dir / "truth_target.mtx", truth.target_full)
    io.write_table(out_dir / "labels.tsv", ["type", "object", "cluster"],
                   [[schema.types[i].name, p, int(lab)]
                    for i, labs in sorted(truth.labels.items())
                    for p, lab in enumerate(labs)])
    print(f"synthetic system -> {out_dir}")
    return EXIT_OK


def cmd_init_study(args) -> int:
    config = io.parse_config(args.config)
    schema = io.load_schema(config)
    report = schema.validate()
    if not report.ok:
        for message in report.messages:
            print(message, file=sys.stderr)
        return EXIT_INVALID
    params = _fit_params(config, args)
    ranks = {schema.type_by_name(name).id: lo
             for name, (lo, hi) in config.rank_ranges.items()}
    missing = [t.name for t in schema.types if t.id not in ranks]
    if missing:
        raise SchemaError("config must fix ranks for: " + ", ".join(missing))
    target = schema.target
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    k_pair = max(ranks[target.source], ranks[target.target])
    rows = []
    for strategy in STRATEGY_NAMES:
        errs = {1: [], 20: []}
        for seed in range(args.n_seeds):
            for iters in (1, 20):
                system, _ = factorize(schema, ranks, InitStrategy(strategy),
                                      FitConfig(params["epsilon"],
                                                params["check_interval"],
                                                iters, params["seed"] + seed))
                err = relative_error(target.values, system.G[target.source],
                                     system.S[(target.source, target.target)],
                                     system.G[target.target], k_pair)
                if err is not None:
                    errs[iters].append(err)
        rows.append([strategy,
                     float(np.mean(errs[1])) if errs[1] else float("nan"),
                     float(np.std(errs[1])) if errs[1] else float("nan"),
                     float(np.mean(errs[20])) if errs[20] else float("nan"),
                     float(np.std(errs[20])) if errs[20] else float("nan")])
    io.write_table(out_dir / "init_study.tsv",
                   ["strategy", "err_after_1", "std_1", "err_after_20", "std_20"],
                   rows, comments=[f"seeds: {args.n_seeds}",
                                   "error: (residual - best rank-k residual) / "
                                   "best rank-k residual on the target"])
    if not args.no_figures:
        figures.init_study_figure(
            [(r[0], r[1], r[2], r[3], r[4]) for r in rows],
            out_dir / "init_study.png")
    for row in rows:
        print(f"{row[0]}: Err(1) = {row[1]:.3f}  Err(20) = {row[3]:.3f}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "init-study": cmd_init_study,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (io.ConfigError, io.MatrixFormatError, SchemaError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as err:  # runtime failures
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
