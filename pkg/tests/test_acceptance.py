"""Acceptance suite: one test per exit criterion, one verdict line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the verdict lines.
Heavy artifacts (trained corpora, forests, comparison runs) are built once
via module-scoped fixtures and shared across criteria.
"""

import json
import math
import time

import numpy as np
import pytest

from divens.dataset import LabeledDataset, load_csv, split, standardize, synth_blobs
from divens.diversity import (
    METRIC_NAMES,
    pair_counts,
    metric_arch_dist,
    metric_cos_dist,
    metric_dis,
    metric_prop1,
    metric_prop2,
    metric_prop_harm,
    PairCounts,
)
from divens.ensemble import fit_stacking, predict_ensemble
from divens.genome import Genome, SearchSpaceBounds, normalize, random_genome
from divens.harness import cmd_compare, cmd_evaluate, cmd_sample, cmd_search, cmd_train_surrogate, config_from_dict
from divens.learner import TrainConfig, build, train_population
from divens.search import (
    ExactDistanceOracle,
    NsConfig,
    RecordingOracle,
    ReplayOracle,
    SurrogateDistanceOracle,
    run,
    select_final_ensemble,
)
from divens.stats import mann_whitney_u
from divens.surrogate import ForestParams, build_distance_dataset, fit, rank_fidelity


def verdict(num: int, name: str, passed: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {num:02d} {'PASS' if passed else 'FAIL'} [{name}] {detail}")


# -- shared desk-scale artifacts ----------------------------------------------------
@pytest.fixture(scope="module")
def digits_setup():
    full = load_csv("data/digits.csv")
    data = LabeledDataset(features=full.features[:1000], labels=full.labels[:1000],
                          class_count=full.class_count)
    parts = standardize(split(data, (0.7, 0.15, 0.15), np.random.default_rng(1)))
    bounds = SearchSpaceBounds(r_min=2, r_max=6, c_min=4, c_max=16,
                               o_min=16, o_max=64, d_min=0.1, d_max=0.6)
    train_cfg = TrainConfig(epochs=8, batch_size=32, learning_rate=0.02, seed=1)
    return parts, bounds, train_cfg


@pytest.fixture(scope="module")
def digits_forest(digits_setup):
    """40-architecture corpus; forest fit on 80% of pairs, 20% held out."""
    parts, bounds, train_cfg = digits_setup
    rng = np.random.default_rng(100)
    genomes = [random_genome(bounds, rng) for _ in range(40)]
    profiles = train_population(genomes, parts, train_cfg)
    records = build_distance_dataset(list(zip(genomes, profiles)), bounds, mirror=True)
    hold_rng = np.random.default_rng(7)
    n_blocks = len(records) // 2
    held_ids = set(hold_rng.choice(n_blocks, size=round(0.2 * n_blocks), replace=False).tolist())
    train_records, held_records = [], []
    for b in range(n_blocks):
        rows = records[2 * b : 2 * b + 2]
        if b in held_ids:
            held_records.append(rows[0])
        else:
            train_records.extend(rows)
    forest = fit(train_records, ForestParams(tree_count=100), np.random.default_rng(2))
    return forest, held_records


@pytest.fixture(scope="module")
def blobs_setup():
    bounds = SearchSpaceBounds(r_min=1, r_max=3, c_min=4, c_max=8,
                               o_min=4, o_max=16, d_min=0.1, d_max=0.4)
    data = synth_blobs(4, 100, 8, 0.55, np.random.default_rng(5))
    parts = standardize(split(data, (0.7, 0.15, 0.15), np.random.default_rng(5)))
    train_cfg = TrainConfig(epochs=10, batch_size=32, learning_rate=0.08, seed=1)
    return parts, bounds, train_cfg


@pytest.fixture(scope="module")
def blobs_forest(blobs_setup):
    parts, bounds, train_cfg = blobs_setup
    rng = np.random.default_rng(77)
    genomes = [random_genome(bounds, rng) for _ in range(40)]
    profiles = train_population(genomes, parts, train_cfg)
    records = build_distance_dataset(list(zip(genomes, profiles)), bounds, mirror=True)
    return fit(records, ForestParams(tree_count=100), np.random.default_rng(3))


@pytest.fixture(scope="module")
def comparison_runs(blobs_setup, blobs_forest):
    """Matched-seed exact and surrogate runs on the runtime-comparison config."""
    parts, bounds, _ = blobs_setup
    started = time.perf_counter()
    rows = {"exact": [], "surrogate": []}
    for seed in range(10):
        for mode in ("exact", "surrogate"):
            cfg = NsConfig(iterations=5, population_size=12, ensemble_size=4,
                           metric="cos_dist", k_neighbours=3, archive_sample_size=5,
                           tournament_size=6, mode=mode, seed=500 + seed)
            tc = TrainConfig(epochs=10, batch_size=32, learning_rate=0.08, seed=500 + seed)
            t0 = time.perf_counter()
            result = run(cfg, bounds, parts, tc,
                         rf=blobs_forest if mode == "surrogate" else None)
            wall = time.perf_counter() - t0
            stack = fit_stacking(result.models, parts.val, 300)
            acc = predict_ensemble(result.models, stack, parts.test).accuracy
            rows[mode].append({"seed": 500 + seed, "wall_s": wall, "test_accuracy": acc})
    rows["total_wall_s"] = time.perf_counter() - started
    return rows


@pytest.fixture(scope="module")
def trend_runs(digits_setup, digits_forest):
    """Surrogate-mode searches per metric over 10 seeds on the digits corpus."""
    parts, bounds, train_cfg = digits_setup
    forest, _ = digits_forest
    accs = {}
    for metric in ("prop1", "prop2", "cos_dist"):
        accs[metric] = []
        for seed in range(10):
            cfg = NsConfig(iterations=20, population_size=20, ensemble_size=5,
                           metric=metric, k_neighbours=5, archive_sample_size=10,
                           tournament_size=10, mode="surrogate", seed=1000 + seed)
            result = run(cfg, bounds, parts, train_cfg, rf=forest)
            stack = fit_stacking(result.models, parts.val, 300)
            accs[metric].append(predict_ensemble(result.models, stack, parts.test).accuracy)
    return accs


# -- criterion 1: metric oracle equivalence -----------------------------------------
def test_criterion_1_metric_oracle_equivalence():
    rng = np.random.default_rng(42)
    bounds = SearchSpaceBounds(r_min=2, r_max=6, c_min=4, c_max=16,
                               o_min=16, o_max=64, d_min=0.1, d_max=0.9)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 80))
        p_i = rng.integers(0, 2, n).astype(bool)
        p_j = rng.integers(0, 2, n).astype(bool)
        n11 = n00 = n01 = n10 = 0
        for a, b in zip(p_i, p_j):
            if a and b:
                n11 += 1
            elif not a and not b:
                n00 += 1
            elif b:
                n01 += 1
            else:
                n10 += 1
        c = pair_counts(p_i, p_j)
        assert (c.n11, c.n00, c.n01, c.n10) == (n11, n00, n01, n10)
        diff = n01 + n10
        assert metric_prop1(c) == (diff / (n11 + diff) if n11 + diff else 0.0)
        assert metric_prop2(c) == (diff / (n00 + diff) if n00 + diff else 0.0)
        p1, p2 = metric_prop1(c), metric_prop2(c)
        assert metric_prop_harm(c) == (2 * p1 * p2 / (p1 + p2) if p1 + p2 else 0.0)
        assert metric_dis(c) == diff / n

        w_i, w_j = (~p_i).astype(float), (~p_j).astype(float)
        dot = math.fsum(a * b for a, b in zip(w_i, w_j))
        nu = math.fsum(a * a for a in w_i)
        nv = math.fsum(b * b for b in w_j)
        if nu == 0.0 and nv == 0.0:
            oracle_cos = 0.0
        elif nu == 0.0 or nv == 0.0:
            oracle_cos = 1.0
        else:
            oracle_cos = 1.0 - dot / (math.sqrt(nu) * math.sqrt(nv))
        cos_err = abs(metric_cos_dist(w_i, w_j) - oracle_cos)
        assert cos_err < 1e-12

        a_i = normalize(random_genome(bounds, rng), bounds)[1:]
        a_j = normalize(random_genome(bounds, rng), bounds)[1:]
        dot = math.fsum(x * y for x, y in zip(a_i, a_j))
        nu = math.fsum(x * x for x in a_i)
        nv = math.fsum(y * y for y in a_j)
        if nu == 0.0 and nv == 0.0:
            oracle_arch = 0.0
        elif nu == 0.0 or nv == 0.0:
            oracle_arch = 1.0
        else:
            oracle_arch = 1.0 - dot / (math.sqrt(nu) * math.sqrt(nv))
        arch_err = abs(metric_arch_dist(a_i, a_j) - oracle_arch)
        assert arch_err < 1e-12
        worst = max(worst, cos_err, arch_err)
    elapsed = time.perf_counter() - t0
    passed = elapsed < 5.0
    verdict(1, "metric oracle equivalence", passed,
            f"1000 pairs, count metrics exact, cosine worst diff {worst:.2e}, {elapsed:.2f}s")
    assert passed


# -- criterion 2: worked values ------------------------------------------------------
def test_criterion_2_worked_values():
    c = PairCounts(n11=5, n00=2, n01=2, n10=1)
    checks = {
        "prop1": metric_prop1(c) == 0.375,
        "prop2": metric_prop2(c) == 0.6,
        "prop_harm": abs(metric_prop_harm(c) - 0.45 / 0.975) < 1e-15,
        "dis": metric_dis(c) == 0.3,
        "cos_dist": metric_cos_dist(np.array([1, 1, 0, 0]), np.array([1, 0, 1, 0])) == 0.5,
    }
    bounds = SearchSpaceBounds(r_min=2, r_max=6, c_min=4, c_max=16,
                               o_min=16, o_max=64, d_min=0.1, d_max=0.9)
    g = Genome(j=True, c=10, blocks=((16, 0.1), (64, 0.9)))
    vec = normalize(g, bounds)
    checks["norm_rep"] = vec.tolist() == [1, 0.5, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1]
    passed = all(checks.values())
    verdict(2, "worked-value checks", passed,
            ", ".join(f"{k}={'ok' if v else 'MISMATCH'}" for k, v in checks.items()))
    assert passed


# -- criterion 3: gradient correctness -----------------------------------------------
def test_criterion_3_gradient_correctness():
    rng = np.random.default_rng(321)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(100):
        g = Genome(
            j=False,
            c=int(rng.integers(2, 5)),
            blocks=tuple(
                (int(rng.integers(2, 6)), float(rng.uniform(0.0, 0.6)))
                for _ in range(int(rng.integers(1, 3)))
            ),
        )
        feature_dim = int(rng.integers(2, 5))
        classes = int(rng.integers(2, 4))
        m = build(g, feature_dim, classes, np.random.default_rng(trial))
        x = rng.normal(size=(6, feature_dim))
        y = rng.integers(0, classes, 6)
        masks = m.draw_masks(np.random.default_rng(trial + 1), 6)
        _, grads = m.loss_and_grad(x, y, masks)
        analytic = np.concatenate([arr.ravel() for arr in grads])
        base = m.params_flat()
        fd = np.zeros_like(base)
        eps = 1e-5
        for k in range(base.size):
            bump = base.copy()
            bump[k] = base[k] + eps
            m.set_params_flat(bump)
            up = m.loss(x, y, masks)
            bump[k] = base[k] - eps
            m.set_params_flat(bump)
            down = m.loss(x, y, masks)
            fd[k] = (up - down) / (2 * eps)
        m.set_params_flat(base)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), 1e-6)
        worst = max(worst, float(np.max(np.abs(analytic - fd) / denom)))
    elapsed = time.perf_counter() - t0
    passed = worst < 1e-4 and elapsed < 30.0
    verdict(3, "gradient correctness", passed,
            f"100 trials, worst relative error {worst:.2e}, {elapsed:.1f}s")
    assert passed


# -- criteria 4 and 5: speedup and accuracy parity -----------------------------------
def test_criterion_4_surrogate_speedup(comparison_runs):
    exact = np.median([r["wall_s"] for r in comparison_runs["exact"]])
    surrogate = np.median([r["wall_s"] for r in comparison_runs["surrogate"]])
    total = comparison_runs["total_wall_s"]
    passed = surrogate <= exact / 3.0 and total <= 900.0
    verdict(4, "surrogate speedup", passed,
            f"median exact {exact:.2f}s vs surrogate {surrogate:.2f}s "
            f"(ratio {exact / surrogate:.1f}x, need >= 3), suite {total:.0f}s of 900s budget")
    assert passed


def test_criterion_5_no_loss_of_accuracy(comparison_runs):
    exact = float(np.median([r["test_accuracy"] for r in comparison_runs["exact"]]))
    surrogate = float(np.median([r["test_accuracy"] for r in comparison_runs["surrogate"]]))
    passed = surrogate >= exact - 0.05
    verdict(5, "no loss of accuracy", passed,
            f"median test accuracy exact {exact:.3f} vs surrogate {surrogate:.3f} "
            f"(gap {surrogate - exact:+.3f}, tolerance -0.05)")
    assert passed


# -- criterion 6: oracle-substitution equivalence ------------------------------------
def test_criterion_6_oracle_substitution(blobs_setup):
    parts, bounds, _ = blobs_setup
    identical = []
    for seed in (11, 12, 13):
        tc = TrainConfig(epochs=4, batch_size=32, learning_rate=0.08, seed=seed)
        exact_cfg = NsConfig(iterations=3, population_size=6, ensemble_size=2,
                             metric="cos_dist", k_neighbours=3, archive_sample_size=2,
                             tournament_size=3, mode="exact", seed=seed)
        recorder = RecordingOracle(ExactDistanceOracle(parts, tc, "cos_dist"))
        reference = run(exact_cfg, bounds, parts, tc, oracle=recorder)
        replay_cfg = NsConfig(iterations=3, population_size=6, ensemble_size=2,
                              metric="cos_dist", k_neighbours=3, archive_sample_size=2,
                              tournament_size=3, mode="surrogate", seed=seed)
        replayed = run(replay_cfg, bounds, parts, tc, oracle=ReplayOracle(recorder.log))
        same = (
            [e["state_digest"] for e in reference.report["iterations"]]
            == [e["state_digest"] for e in replayed.report["iterations"]]
            and [g.to_record() for g in reference.genomes]
            == [g.to_record() for g in replayed.genomes]
            and reference.report["ensemble"]["ns_star"] == replayed.report["ensemble"]["ns_star"]
        )
        identical.append(same)
    passed = all(identical)
    verdict(6, "oracle-substitution equivalence", passed,
            f"3 seeds, trajectories bit-identical: {identical}")
    assert passed


# -- criterion 7: surrogate rank fidelity --------------------------------------------
def test_criterion_7_rank_fidelity(digits_forest):
    forest, held_records = digits_forest
    report = rank_fidelity(forest, held_records)
    rho = report.spearman["cos_dist"]
    passed = not report.degenerate["cos_dist"] and rho >= 0.5
    detail = ", ".join(f"{name} {report.spearman[name]:.2f}" for name in METRIC_NAMES)
    verdict(7, "surrogate rank fidelity", passed,
            f"held-out pairs {len(held_records)}, Spearman: {detail} (cos_dist needs >= 0.5)")
    assert passed


# -- criterion 8: error-metric trend --------------------------------------------------
def test_criterion_8_error_metric_trend(trend_runs, tmp_path_factory):
    medians = {m: float(np.median(v)) for m, v in trend_runs.items()}
    report = {
        "per_metric_accuracies": trend_runs,
        "medians": medians,
        "mann_whitney_p": {
            "prop2_vs_prop1": mann_whitney_u(trend_runs["prop2"], trend_runs["prop1"]).p_value,
            "cos_dist_vs_prop1": mann_whitney_u(trend_runs["cos_dist"], trend_runs["prop1"]).p_value,
        },
    }
    out = tmp_path_factory.mktemp("acceptance") / "error_metric_trend.json"
    out.write_text(json.dumps(report, indent=2, sort_keys=True))
    print(f"\nerror-metric trend report written to {out}")
    print(json.dumps(report["medians"], indent=2, sort_keys=True))
    print(json.dumps(report["mann_whitney_p"], indent=2, sort_keys=True))
    passed = (
        medians["prop2"] >= medians["prop1"] and medians["cos_dist"] >= medians["prop1"]
    )
    verdict(8, "error-metric trend", passed,
            f"median accuracy prop1 {medians['prop1']:.3f}, prop2 {medians['prop2']:.3f}, "
            f"cos_dist {medians['cos_dist']:.3f}; "
            f"p(prop2>prop1) {report['mann_whitney_p']['prop2_vs_prop1']:.2e}, "
            f"p(cos>prop1) {report['mann_whitney_p']['cos_dist_vs_prop1']:.2e}")
    assert passed


# -- criterion 9: determinism of every command ---------------------------------------
TINY_RAW = {
    "seed": 3,
    "dataset": {"kind": "blobs", "classes": 2, "per_class": 30, "dim": 4, "spread": 0.5},
    "split": {"train": 0.6, "val": 0.2, "test": 0.2},
    "search_space": {
        "Number of blocks": "1:2",
        "Number of channels in the first convolution": "3:5",
        "Number of channels in residual blocks": "3:6",
        "Dropout probability in residual blocks": "0.0:0.5",
    },
    "novelty_search": {
        "Iterations": 2,
        "Final ensemble size": 2,
        "Population size": 3,
        "Diversity metric": "cos_dist",
        "Number of neighbours K": 2,
        "Size n_A of archive sample": 1,
        "Size of tournament for selection": 2,
    },
    "training": {"epochs": 1, "batch_size": 16, "learning_rate": 0.05},
    "stacking": {"iterations": 20, "learning_rate": 0.5},
    "surrogate": {"sample_size": 6, "trees": 8, "min_leaf": 2, "mirror_pairs": True},
    "repetitions": 1,
}


def _masked(payload):
    if isinstance(payload, dict):
        return {k: _masked(v) for k, v in payload.items()
                if k not in ("wall_clock", "timing", "timestamp") and "wall" not in k}
    if isinstance(payload, list):
        return [_masked(v) for v in payload]
    return payload


def test_criterion_9_determinism_suite(tmp_path):
    cfg = config_from_dict(TINY_RAW)
    outcomes = {}

    for tag in ("a", "b"):
        base = tmp_path / tag
        sample_out = cmd_sample(cfg, base / "sample")
        cmd_train_surrogate(cfg, sample_out["dataset"], base / "surrogate")
        cmd_search(cfg, base / "run", mode="surrogate",
                   model_path=base / "surrogate" / "surrogate.rf")
        cmd_search(cfg, base / "run_exact", mode="exact")
        cmd_compare(cfg, base / "cmp", model_path=base / "surrogate" / "surrogate.rf",
                    repetitions=1)
        cmd_evaluate(cfg, base / "run")

    def same_bytes(rel):
        return (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def same_masked_json(rel):
        a = json.loads((tmp_path / "a" / rel).read_text())
        b = json.loads((tmp_path / "b" / rel).read_text())
        return _masked(a) == _masked(b)

    outcomes["distances.csv bytes"] = same_bytes("sample/distances.csv")
    outcomes["sample manifest"] = same_masked_json("sample/sample_manifest.json")
    outcomes["surrogate.rf bytes"] = same_bytes("surrogate/surrogate.rf")
    outcomes["fidelity report"] = same_masked_json("surrogate/fidelity_report.json")
    outcomes["search report"] = same_masked_json("run/report.json")
    outcomes["exact search report"] = same_masked_json("run_exact/report.json")
    outcomes["ensemble manifest"] = same_masked_json("run/ensemble/manifest.json")
    outcomes["member model bytes"] = same_bytes("run/ensemble/member_0.model")
    outcomes["stack bytes"] = same_bytes("run/ensemble/stack.bin")
    outcomes["comparison summary"] = same_masked_json("cmp/comparison.json")
    outcomes["evaluation"] = same_masked_json("run/evaluation.json")

    passed = all(outcomes.values())
    verdict(9, "determinism suite", passed,
            ", ".join(f"{k}: {'ok' if v else 'DIFFERS'}" for k, v in outcomes.items()))
    assert passed


# -- criterion 10: bookkeeping invariants ---------------------------------------------
def test_criterion_10_bookkeeping(blobs_setup, blobs_forest):
    parts, bounds, train_cfg = blobs_setup
    iterations, n_a = 8, 2
    cfg = NsConfig(iterations=iterations, population_size=6, ensemble_size=3,
                   metric="cos_dist", k_neighbours=3, archive_sample_size=n_a,
                   tournament_size=3, mode="surrogate", seed=77)
    result = run(cfg, bounds, parts, train_cfg, rf=blobs_forest)
    state = result.state
    sizes_ok = len(state.elite_archive) == iterations and len(state.archive) == iterations * n_a

    # brute-force re-selection over the elite archive (size <= 12)
    oracle = SurrogateDistanceOracle(blobs_forest, "cos_dist")
    n = len(state.elite_archive)
    brute = np.zeros(n)
    for i in range(n):
        for j in range(n):
            if i != j:
                brute[i] += oracle.pair_distances([(state.elite_archive[i], state.elite_archive[j])])[0]
    order = sorted(range(n), key=lambda i: (-brute[i], i))
    expected = [state.elite_archive[i].genome.to_record() for i in order[: cfg.ensemble_size]]
    chosen, ns_star = select_final_ensemble(state.elite_archive, oracle, cfg.ensemble_size)
    selection_ok = (
        [ind.genome.to_record() for ind in chosen] == expected
        and np.allclose(ns_star, brute)
        and [g.to_record() for g in result.genomes] == expected
    )
    passed = sizes_ok and selection_ok
    verdict(10, "bookkeeping invariants", passed,
            f"|elite|={len(state.elite_archive)} (need {iterations}), "
            f"|archive|={len(state.archive)} (need {iterations * n_a}), "
            f"brute-force selection match: {selection_ok}")
    assert passed