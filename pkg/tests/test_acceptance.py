"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
summary lines.
"""

import filecmp
import time

import numpy as np
import pytest
from scipy.stats import wilcoxon

from fusemf import FitConfig, FusionSchema, factorize, objective, update_g, update_s
from fusemf.blockops import (BlockLayout, assemble_constraint_block,
                             assemble_core_block, assemble_factor_block,
                             assemble_relation_block, gram_pinv)
from fusemf.cli import main
from fusemf.evaluation import (AblationCell, CvConfig, EnsembleConfig,
                               ablation_run, run_cv)
from fusemf.fixtures import six_type_spec
from fusemf.initialization import InitStrategy, relative_error
from fusemf.nnls import kkt_residuals, nnls
from fusemf.predict import (FoldInProfile, candidates_column_centric,
                            candidates_row_centric, ensemble_predict, fold_in,
                            fold_in_matrix, majority_threshold)
from fusemf.ranksel import RankRange, RankSearchConfig, evaluate_rank_vector, select_ranks
from fusemf.synthetic import SyntheticSpec, synth_generate

from conftest import random_schema
from test_factorize import dense_g_update, dense_objective
from test_predict import _grid_minimum, _stub_model, _ensemble_schema


def _report(number, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {number:2d} {status} - {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"criterion {number}: {name} {detail}"


def recovery_family(seed):
    """Three-type chain with planted ranks (4, 3, 2) used by criteria 4 and 5."""
    spec = SyntheticSpec(sizes=[40, 30, 20], ranks=[4, 3, 2],
                         relations=[(0, 1), (1, 2)], target=(0, 1),
                         noise_sigma=0.01, target_density=0.6,
                         target_mode="graded", seed=seed)
    return synth_generate(spec)[0]


def _symmetric_random_schema(rng, max_size=10):
    """Three types, one relation per unordered pair, so the assembled matrix
    is symmetric after the transpose fill."""
    sizes = rng.integers(2, max_size + 1, size=3)
    schema = FusionSchema()
    for i, n in enumerate(sizes):
        schema.add_object_type(f"t{i}", int(n))
    edges = [(0, 1), (1, 2)]
    if rng.random() < 0.5:
        edges.append((0, 2))
    for idx, (i, j) in enumerate(edges):
        values = rng.random((sizes[i], sizes[j]))
        if idx == 0:
            values = values / values.max()
        schema.add_relation(i, j, values, is_target=(idx == 0))
    return schema


def test_criterion_1_monotone_descent():
    start = time.time()
    rng = np.random.default_rng(2024)
    worst_rel_increase = 0.0
    for _ in range(20):
        schema = _symmetric_random_schema(rng)
        ranks = {t.id: int(rng.integers(1, min(4, t.count) + 1)) for t in schema.types}
        _, trace = factorize(schema, ranks,
                             config=FitConfig(max_iters=100, check_interval=5,
                                              seed=int(rng.integers(2 ** 31)),
                                              track_sstep=True))
        values = [v for _, v in trace.objective_samples]
        for earlier, later in zip(values, values[1:]):
            if earlier > 0:
                worst_rel_increase = max(worst_rel_increase,
                                         (later - earlier) / earlier)
        for before, after in trace.sstep_objectives:
            assert after <= before * (1 + 1e-12) + 1e-12, \
                "core update increased the objective"
    elapsed = time.time() - start
    ok = worst_rel_increase <= 1e-8 and elapsed < 30
    _report(1, "monotone descent at checkpoints + exact core-step descent", ok,
            f"worst relative increase {worst_rel_increase:.2e}, {elapsed:.1f}s")


def test_criterion_2_fixed_point():
    rng = np.random.default_rng(7)
    worst_g, worst_s = 0.0, 0.0
    for _ in range(10):
        G = {0: rng.random((8, 3)) + 0.1, 1: rng.random((6, 2)) + 0.1,
             2: rng.random((5, 2)) + 0.1}
        # cores bounded away from zero keep the fixed point non-degenerate
        S_true = {(0, 1): rng.random((3, 2)) + 0.5,
                  (1, 2): rng.random((2, 2)) + 0.5}
        blocks = {}
        S_full = {}
        for (i, j), s in S_true.items():
            blocks[(i, j)] = G[i] @ s @ G[j].T
            blocks[(j, i)] = blocks[(i, j)].T
            S_full[(i, j)] = s
            S_full[(j, i)] = s.T
        S_step = update_s(G, blocks)
        for key in S_full:
            worst_s = max(worst_s, float(np.max(np.abs(S_step[key] - S_full[key]))))
        G_step = update_g(G, S_step, blocks)
        for i in G:
            worst_g = max(worst_g, float(np.max(np.abs(G_step[i] - G[i]))))
    ok = worst_g <= 1e-12 and worst_s <= 1e-10
    _report(2, "fixed-point invariance for exactly factorizable input", ok,
            f"max dG {worst_g:.2e}, max dS {worst_s:.2e}")


def test_criterion_3_blockwise_dense_equivalence():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(50):
        schema = random_schema(rng, n_types=3, with_constraints=True, max_size=6)
        ranks = {t.id: int(rng.integers(1, min(3, t.count) + 1)) for t in schema.types}
        G = {t.id: rng.random((t.count, ranks[t.id])) + 0.05 for t in schema.types}
        layout = BlockLayout.from_schema(schema, ranks)
        R_dense = assemble_relation_block(schema, layout)
        thetas = [assemble_constraint_block(schema, t, layout)
                  for t in range(1, schema.max_constraint_index() + 1)]
        G_dense = assemble_factor_block(schema, G, layout)
        S = update_s(G, schema)
        P = gram_pinv(G_dense)
        S_dense_ref = P @ G_dense.T @ R_dense @ G_dense @ P
        for (i, j), Sij in S.items():
            ref = S_dense_ref[layout.rank_slice(i), layout.rank_slice(j)]
            worst = max(worst, float(np.max(np.abs(Sij - ref))))
        S_dense = assemble_core_block(schema, S, layout)
        G_next = update_g(G, S, schema)
        G_ref = dense_g_update(R_dense, G_dense, S_dense, thetas)
        for t in schema.types:
            ref = G_ref[layout.row_slice(t.id), layout.rank_slice(t.id)]
            worst = max(worst, float(np.max(np.abs(G_next[t.id] - ref))))
        obj_diff = abs(objective(G, S, schema)
                       - dense_objective(R_dense, G_dense, S_dense, thetas))
        worst = max(worst, obj_diff / max(1.0, abs(objective(G, S, schema))))
    ok = worst <= 1e-10
    _report(3, "blockwise updates match the dense formulas", ok,
            f"max abs deviation {worst:.2e} over 50 systems")


def test_criterion_4_planted_recovery():
    start = time.time()
    scores = []
    for seed in range(5):
        schema = recovery_family(seed)
        quality = evaluate_rank_vector(schema, {0: 4, 1: 3, 2: 2},
                                       RankSearchConfig(seed=1000 + seed))
        scores.append(quality.explained_variance_out)
    mean = float(np.mean(scores))
    elapsed = time.time() - start
    ok = mean >= 0.9 and elapsed < 60
    _report(4, "held-out explained variance on the planted chain", ok,
            f"mean r2 {mean:.4f} over 5 seeds, {elapsed:.1f}s")


def test_criterion_5_rank_selection():
    hits = 0
    picks = []
    for seed in range(10):
        schema = recovery_family(seed)
        ranks, _ = select_ranks(schema, [RankRange(i, 1, 8) for i in range(3)],
                                RankSearchConfig(seed=1000 + seed))
        pick = tuple(ranks[i] for i in range(3))
        picks.append(pick)
        hits += all(abs(a - b) <= 1 for a, b in zip(pick, (4, 3, 2)))
    ok = hits >= 8
    _report(5, "rank search lands within one of the planted ranks", ok,
            f"{hits}/10 seeds, picks {picks}")


def test_criterion_6_fold_in_kkt_and_grid_oracle():
    rng = np.random.default_rng(5)
    worst_kkt = 0.0
    # end-to-end instances: fitted systems, random profiles, the fold_in path
    for trial in range(20):
        schema = recovery_family(trial)
        system, _ = factorize(schema, {0: 4, 1: 3, 2: 2},
                              config=FitConfig(max_iters=30, seed=trial))
        length = sum(r.values.shape[1] if r.source == 0 else r.values.shape[0]
                     for r in schema.relations if 0 in (r.source, r.target))
        profile = FoldInProfile(0, rng.random(length))
        x = fold_in(system, schema, profile, tolerance=1e-8)
        A = fold_in_matrix(system, schema, 0)
        neg, grad_violation, comp = kkt_residuals(A, profile.vector, x)
        scale = max(1.0, float(np.abs(A).max()))
        worst_kkt = max(worst_kkt, max(neg, grad_violation, comp) / scale)
        assert x.min() >= 0.0
    # raw solver instances with mixed-sign data
    for _ in range(80):
        m = int(rng.integers(3, 15))
        n = int(rng.integers(1, 6))
        A = rng.standard_normal((m, n))
        b = rng.standard_normal(m)
        x = nnls(A, b)
        neg, grad_violation, comp = kkt_residuals(A, b, x)
        scale = max(1.0, float(np.abs(A).max()) * max(1.0, float(np.abs(b).max())))
        worst_kkt = max(worst_kkt, max(neg, grad_violation, comp) / scale)
    worst_gap = 0.0
    for trial in range(3):
        A = rng.random((6, 2)) + 0.1
        o = rng.random(6)
        x = nnls(A, o)
        ours = float(np.linalg.norm(A @ x - o) ** 2)
        best = _grid_minimum(A, o)
        worst_gap = max(worst_gap, ours - best)
    ok = worst_kkt <= 1e-8 and worst_gap <= 2e-3
    _report(6, "fold-in solver meets KKT and the grid oracle", ok,
            f"worst KKT {worst_kkt:.2e}, worst grid gap {worst_gap:.2e}")


def test_criterion_7_candidate_rule_oracle():
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(100):
        scores = rng.random((int(rng.integers(2, 8)), int(rng.integers(2, 8))))
        known = {(int(p), int(q))
                 for p in range(scores.shape[0])
                 for q in range(scores.shape[1]) if rng.random() < 0.3}
        expect_row = []
        for p in range(scores.shape[0]):
            cols = [q for (pp, q) in known if pp == p]
            if not cols:
                continue
            mean = sum(scores[p, q] for q in cols) / len(cols)
            for q in range(scores.shape[1]):
                if q not in cols and scores[p, q] > mean:
                    expect_row.append((p, q))
        expect_col = []
        for q in range(scores.shape[1]):
            rows = [p for (p, qq) in known if qq == q]
            if not rows:
                continue
            mean = sum(scores[p, q] for p in rows) / len(rows)
            for p in range(scores.shape[0]):
                if p not in rows and scores[p, q] > mean:
                    expect_col.append((p, q))
        if candidates_row_centric(scores, known) != sorted(expect_row):
            mismatches += 1
        if sorted(candidates_column_centric(scores, known)) != sorted(expect_col):
            mismatches += 1
    _report(7, "candidate rules match the literal double loop", mismatches == 0,
            f"{mismatches} mismatches over 100 matrices")


def test_criterion_8_ensemble_voting():
    values = np.zeros((1, 3))
    values[0, 0] = 1.0
    schema = _ensemble_schema(values)
    hit = np.array([[0.5, 0.9, 0.1]])
    miss = np.array([[0.5, 0.2, 0.1]])
    results = {}
    for n_hits in (8, 7):
        models = [_stub_model(hit)] * n_hits + [_stub_model(miss)] * (15 - n_hits)
        result = ensemble_predict(models, schema)
        results[n_hits] = {(e.p, e.q) for e in result.entries}
    rng = np.random.default_rng(13)
    models = [_stub_model(rng.random((1, 3))) for _ in range(15)]
    forward = ensemble_predict(models, schema)
    backward = ensemble_predict(models[::-1], schema)
    ok = ((0, 1) in results[8] and (0, 1) not in results[7]
          and majority_threshold(15) == 8 and forward.entries == backward.entries)
    _report(8, "majority voting keeps 8/15 and drops 7/15, order-invariant", ok)


def test_criterion_9_ablation_trend():
    start = time.time()
    rows = []
    for seed in range(24):
        spec = six_type_spec(seed, cluster_floor=0.45, noise=0.2, density=0.3,
                             constraint_scale=0.05)
        schema, _ = synth_generate(spec)
        target_id = schema.target.id
        r02 = next(r.id for r in schema.relations if (r.source, r.target) == (0, 2))
        cons01 = tuple(c.id for c in schema.constraints if c.type in (0, 1))
        cells = [AblationCell("target-only", (target_id,)),
                 AblationCell("plus-relation", (target_id, r02)),
                 AblationCell("plus-constraints", (target_id, r02), cons01)]
        results = ablation_run(schema, cells, {i: 2 for i in range(6)},
                               CvConfig(folds=3, seed=7000 + seed),
                               FitConfig(max_iters=30),
                               EnsembleConfig(size=3, rank_jitter=0))
        rows.append([rep.mean_f1_candidate for _, rep in results])
    arr = np.array(rows)
    ok = True
    details = []
    for i, name in [(0, "target->+relation"), (1, "+relation->+constraints")]:
        diffs = arr[:, i + 1] - arr[:, i]
        if np.allclose(diffs, 0):
            details.append(f"{name}: identical (within noise - flagged)")
            continue
        p_greater = wilcoxon(arr[:, i + 1], arr[:, i], alternative="greater")[1]
        p_less = wilcoxon(arr[:, i + 1], arr[:, i], alternative="less")[1]
        if p_greater < 0.1:
            details.append(f"{name}: increase, p={p_greater:.4f}")
        elif p_less < 0.1:
            ok = False
            details.append(f"{name}: DECREASE, p={p_less:.4f}")
        else:
            details.append(f"{name}: within noise - flagged "
                           f"(mean diff {diffs.mean():+.4f}, p_greater={p_greater:.3f})")
    elapsed = time.time() - start
    _report(9, "source-ablation F1 trend", ok,
            "; ".join(details) + f"; {elapsed:.0f}s")


def test_criterion_10_structured_beats_flattened():
    start = time.time()
    pairs = []
    for seed in range(10):
        spec = SyntheticSpec(sizes=[24, 12, 12, 14, 18], ranks=[2] * 5,
                             relations=[(0, 1), (0, 2), (2, 3), (3, 4)],
                             target=(0, 1), noise_sigma=0.1, target_density=0.5,
                             target_mode="binary", cluster_floor=0.3,
                             label_flip=0.1, nuisance={(3, 4): (8, 20.0)},
                             seed=seed)
        schema, _ = synth_generate(spec)
        ranks = {i: 2 for i in range(5)}
        cv = CvConfig(folds=3, seed=7000 + seed)
        fit = FitConfig(max_iters=60)
        ensemble = EnsembleConfig(size=3, rank_jitter=0)
        structured = run_cv(schema, ranks, cv, fit, ensemble)
        flattened = run_cv(schema, ranks, cv, fit, ensemble, flatten=True)
        pairs.append((structured.mean_f1, flattened.mean_f1))
    arr = np.array(pairs)
    gap = float(arr[:, 0].mean() - arr[:, 1].mean())
    elapsed = time.time() - start
    ok = gap >= 0.05
    _report(10, "structured fusion beats flattened early integration", ok,
            f"structured {arr[:, 0].mean():.3f} vs flattened {arr[:, 1].mean():.3f}, "
            f"gap {gap:+.3f}, {elapsed:.0f}s")


def test_criterion_11_initialization_ordering():
    errs = {"random": [], "random_acol": []}
    for seed in range(20):
        schema = recovery_family(seed)
        target = schema.target
        k = max(4, 3)
        for strategy in errs:
            system, _ = factorize(schema, {0: 4, 1: 3, 2: 2},
                                  InitStrategy(strategy),
                                  FitConfig(max_iters=20, seed=3000 + seed))
            err = relative_error(target.values, system.G[0],
                                 system.S[(0, 1)], system.G[1], k)
            assert err is not None
            errs[strategy].append(err)
    acol, rand = np.mean(errs["random_acol"]), np.mean(errs["random"])
    # the metric is exactly zero when the factors equal the rank-k truncation
    rng = np.random.default_rng(0)
    m = rng.random((9, 7))
    U, sv, Vt = np.linalg.svd(m, full_matrices=False)
    exact = relative_error(m, U[:, :3] * sv[:3], np.eye(3), Vt[:3].T, 3)
    ok = acol <= rand and abs(exact) <= 1e-9
    _report(11, "informed initialization beats plain random", ok,
            f"Err(20): random_acol {acol:.3f} vs random {rand:.3f}; "
            f"svd-exact metric {exact:.1e}")


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_cli")
    code = main(["synth", "--out", str(root / "data"),
                 "--sizes", "14,8,6", "--ranks", "2,2,2",
                 "--relations", "0-1,0-2", "--target", "0-1",
                 "--density", "0.8", "--noise", "0.02",
                 "--target-mode", "binary", "--seed", "11"])
    assert code == 0
    return root


def test_criterion_12_cli_determinism(cli_workspace):
    start = time.time()
    root = cli_workspace
    config = str(root / "data" / "schema.cfg")

    def synth_cmd(out):
        return ["synth", "--out", str(out), "--sizes", "10,7", "--ranks", "2,2",
                "--relations", "0-1", "--target", "0-1", "--density", "0.7",
                "--seed", "3"]

    def fit_cmd(out):
        return ["fit", config, "--out", str(out), "--ensemble-size", "2",
                "--max-iters", "25", "--seed", "5"]

    def evaluate_cmd(out):
        return ["evaluate", config, "--out", str(out), "--folds", "2",
                "--ensemble-size", "1", "--max-iters", "20", "--seed", "5",
                "--flatten", "--ablate", "target=r0;all=r0+r1"]

    def init_study_cmd(out):
        return ["init-study", config, "--out", str(out), "--n-seeds", "2",
                "--max-iters", "20"]

    mismatched = []
    for name, cmd in [("synth", synth_cmd), ("fit", fit_cmd),
                      ("evaluate", evaluate_cmd), ("init-study", init_study_cmd)]:
        out_a, out_b = root / f"{name}_a", root / f"{name}_b"
        assert main(cmd(out_a)) == 0
        assert main(cmd(out_b)) == 0
        rel_a = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
        rel_b = sorted(p.relative_to(out_b) for p in out_b.rglob("*") if p.is_file())
        if rel_a != rel_b:
            mismatched.append(name)
            continue
        for rel in rel_a:
            if not filecmp.cmp(out_a / rel, out_b / rel, shallow=False):
                mismatched.append(f"{name}:{rel}")
    # predict twice from the same fitted model, both modes
    model = root / "fit_a"
    for tag in ("a", "b"):
        assert main(["predict", str(model), "--all-unobserved",
                     "--out", str(root / f"pred_{tag}.tsv")]) == 0
    if not filecmp.cmp(root / "pred_a.tsv", root / "pred_b.tsv", shallow=False):
        mismatched.append("predict")
    from fusemf.io import read_matrix, write_matrix
    r01, _ = read_matrix(root / "data" / "R_type0_type1.mtx")
    r02, _ = read_matrix(root / "data" / "R_type0_type2.mtx")
    write_matrix(root / "profile.mtx", np.concatenate([r01[0], r02[0]])[None, :])
    for tag in ("a", "b"):
        assert main(["predict", str(model), "--profile", str(root / "profile.mtx"),
                     "--out", str(root / f"fold_{tag}.tsv")]) == 0
    if not filecmp.cmp(root / "fold_a.tsv", root / "fold_b.tsv", shallow=False):
        mismatched.append("predict-profile")
    # validate writes no files; its stdout must still be reproducible
    import contextlib
    import io as stdlib_io
    captured = []
    for _ in range(2):
        buf = stdlib_io.StringIO()
        with contextlib.redirect_stdout(buf):
            assert main(["validate", config]) == 0
        captured.append(buf.getvalue())
    if captured[0] != captured[1]:
        mismatched.append("validate")
    elapsed = time.time() - start
    _report(12, "every command is byte-deterministic for fixed seed", not mismatched,
            f"{elapsed:.0f}s" + (f"; mismatches: {mismatched}" if mismatched else ""))
