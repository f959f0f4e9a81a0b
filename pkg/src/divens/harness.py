"""Experiment orchestration: config files, pipeline commands, artifacts.

The config document keeps the search-space and novelty-search parameter
names used in the experiment tables verbatim (e.g. "Number of blocks",
"Size $n_A$ of archive sample" appears as "Size n_A of archive sample") so
runs are traceable back to their settings at a glance. Every artifact
embeds the hash of the effective config; wall-clock and timestamp fields
live under dedicated keys so reruns are comparable.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .dataset import DataSplit, LabeledDataset, load_csv, split, standardize, synth_blobs
from .ensemble import StackingModel, fit_stacking, predict_ensemble
from .genome import Genome, SearchSpaceBounds, random_genome
from .learner import (
    DivergenceError,
    TrainConfig,
    evaluate,
    load_model,
    save_model,
    train_population,
)
from .persist import write_text_atomic
from .search import NsConfig, run
from .stats import mann_whitney_u
from .surrogate import (
    ForestParams,
    RandomForestSurrogate,
    build_distance_dataset,
    fit,
    rank_fidelity,
    records_from_csv,
    records_to_csv,
)

_TAG_DATA = 10
_TAG_SPLIT = 11
_TAG_SAMPLE = 12
_TAG_FOREST = 13
_TAG_HOLDOUT = 14

_METRIC_FLAGS = {
    "prop1": "prop1",
    "prop2": "prop2",
    "prop-harm": "prop_harm",
    "dis": "dis",
    "cos-dist": "cos_dist",
    "arch-dist": "arch_dist",
}


class ConfigError(ValueError):
    """Config document missing or malformed fields."""


def metric_from_flag(flag: str) -> str:
    if flag in _METRIC_FLAGS:
        return _METRIC_FLAGS[flag]
    if flag in _METRIC_FLAGS.values():
        return flag
    raise ConfigError(f"unknown metric {flag!r}; choose from {sorted(_METRIC_FLAGS)}")


def _parse_range(text: str, caster):
    try:
        lo, hi = str(text).split(":")
        return caster(lo), caster(hi)
    except ValueError as exc:
        raise ConfigError(f"range {text!r} must look like 'low:high'") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    dataset: dict
    fractions: tuple[float, float, float]
    bounds: SearchSpaceBounds
    train: TrainConfig
    ns_iterations: int
    ns_ensemble_size: int
    ns_population_size: int
    ns_metric: str
    ns_k: int
    ns_archive_sample: int
    ns_tournament: int
    sample_size: int
    forest: ForestParams
    mirror_pairs: bool
    stack_iterations: int
    stack_learning_rate: float
    repetitions: int
    raw: dict

    def config_hash(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def ns_config(self, mode: str, seed: int | None = None, metric: str | None = None) -> NsConfig:
        return NsConfig(
            iterations=self.ns_iterations,
            population_size=self.ns_population_size,
            ensemble_size=self.ns_ensemble_size,
            metric=metric or self.ns_metric,
            k_neighbours=self.ns_k,
            archive_sample_size=self.ns_archive_sample,
            tournament_size=self.ns_tournament,
            mode=mode,
            seed=self.seed if seed is None else seed,
        )


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as handle:
        raw = json.load(handle)
    return config_from_dict(raw, seed_override)


def config_from_dict(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    raw = copy.deepcopy(raw)
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    try:
        seed = int(raw["seed"])
        space = raw["search_space"]
        r_min, r_max = _parse_range(space["Number of blocks"], int)
        c_min, c_max = _parse_range(space["Number of channels in the first convolution"], int)
        o_min, o_max = _parse_range(space["Number of channels in residual blocks"], int)
        d_min, d_max = _parse_range(space["Dropout probability in residual blocks"], float)
        bounds = SearchSpaceBounds(
            r_min=r_min, r_max=r_max, c_min=c_min, c_max=c_max,
            o_min=o_min, o_max=o_max, d_min=d_min, d_max=d_max,
        )
        ns = raw["novelty_search"]
        training = raw["training"]
        train_cfg = TrainConfig(
            epochs=int(training["epochs"]),
            batch_size=int(training["batch_size"]),
            learning_rate=float(training["learning_rate"]),
            seed=seed,
        )
        surrogate_section = raw.get("surrogate", {})
        forest = ForestParams(
            tree_count=int(surrogate_section.get("trees", 100)),
            m_try=surrogate_section.get("m_try"),
            min_leaf=int(surrogate_section.get("min_leaf", 2)),
        )
        stacking = raw.get("stacking", {})
        split_section = raw.get("split", {"train": 0.7, "val": 0.15, "test": 0.15})
        cfg = ExperimentConfig(
            seed=seed,
            dataset=raw["dataset"],
            fractions=(
                float(split_section["train"]),
                float(split_section["val"]),
                float(split_section["test"]),
            ),
            bounds=bounds,
            train=train_cfg,
            ns_iterations=int(ns["Iterations"]),
            ns_ensemble_size=int(ns["Final ensemble size"]),
            ns_population_size=int(ns["Population size"]),
            ns_metric=metric_from_flag(str(ns["Diversity metric"])),
            ns_k=int(ns["Number of neighbours K"]),
            ns_archive_sample=int(ns["Size n_A of archive sample"]),
            ns_tournament=int(ns["Size of tournament for selection"]),
            sample_size=int(surrogate_section.get("sample_size", 40)),
            forest=forest,
            mirror_pairs=bool(surrogate_section.get("mirror_pairs", True)),
            stack_iterations=int(stacking.get("iterations", 300)),
            stack_learning_rate=float(stacking.get("learning_rate", 0.5)),
            repetitions=int(raw.get("repetitions", 10)),
            raw=raw,
        )
    except KeyError as exc:
        raise ConfigError(f"config missing key: {exc}") from exc
    cfg.ns_config(mode="surrogate")  # validate novelty-search parameters eagerly
    return cfg


def load_experiment_data(cfg: ExperimentConfig) -> DataSplit:
    """Materialize the configured dataset, split it, standardize on train."""
    spec = cfg.dataset
    kind = spec.get("kind")
    if kind == "blobs":
        data = synth_blobs(
            classes=int(spec["classes"]),
            per_class=int(spec["per_class"]),
            dim=int(spec["dim"]),
            spread=float(spec["spread"]),
            rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, _TAG_DATA])),
        )
    elif kind == "csv":
        data = load_csv(spec["path"], label_column=int(spec.get("label_column", -1)))
        limit = spec.get("limit")
        if limit is not None and int(limit) < data.n_rows:
            data = LabeledDataset(
                features=data.features[: int(limit)],
                labels=data.labels[: int(limit)],
                class_count=data.class_count,
            )
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    parts = split(data, cfg.fractions, np.random.default_rng(np.random.SeedSequence([cfg.seed, _TAG_SPLIT])))
    return standardize(parts)


def _write_json(path, payload: dict) -> None:
    write_text_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- commands ---------------------------------------------------------------------
def cmd_sample(cfg: ExperimentConfig, out_dir) -> dict:
    """Draw and train the architecture sample, write the distance dataset."""
    os.makedirs(out_dir, exist_ok=True)
    data = load_experiment_data(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _TAG_SAMPLE]))
    genomes = [random_genome(cfg.bounds, rng) for _ in range(cfg.sample_size)]

    t0 = time.perf_counter()
    resampled = []
    try:
        profiles = train_population(genomes, data, cfg.train)
    except DivergenceError as exc:
        # one resample per offending genome, then give up
        index = exc.member_index if exc.member_index is not None else 0
        resampled.append(index)
        genomes[index] = random_genome(cfg.bounds, rng)
        profiles = train_population(genomes, data, cfg.train)
    train_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    records = build_distance_dataset(list(zip(genomes, profiles)), cfg.bounds, mirror=cfg.mirror_pairs)
    build_s = time.perf_counter() - t0

    dataset_path = os.path.join(out_dir, "distances.csv")
    records_to_csv(records, dataset_path)
    manifest = {
        "config_hash": cfg.config_hash(),
        "sample_size": cfg.sample_size,
        "unique_pairs": cfg.sample_size * (cfg.sample_size - 1) // 2,
        "rows_written": len(records),
        "mirrored": cfg.mirror_pairs,
        "genomes": [g.to_record() for g in genomes],
        "val_accuracies": [p.accuracy for p in profiles],
        "resampled_indices": resampled,
        "wall_clock": {"train_s": train_s, "build_s": build_s},
    }
    _write_json(os.path.join(out_dir, "sample_manifest.json"), manifest)
    return {"dataset": dataset_path, "manifest": manifest}


def _holdout_blocks(n_rows: int, mirrored: bool, seed: int):
    block = 2 if mirrored else 1
    n_blocks = n_rows // block
    rng = np.random.default_rng(np.random.SeedSequence([seed, _TAG_HOLDOUT]))
    held = max(1, round(0.2 * n_blocks))
    held_blocks = set(rng.choice(n_blocks, size=held, replace=False).tolist())
    return block, n_blocks, held_blocks


def cmd_train_surrogate(cfg: ExperimentConfig, dataset_path, out_dir) -> dict:
    """Fit the forest; report held-out rank fidelity; persist the model.

    Fidelity is measured by refitting on 80% of the unordered pairs and
    scoring the remaining 20%; the persisted model uses every record.
    """
    os.makedirs(out_dir, exist_ok=True)
    records = records_from_csv(dataset_path)
    if len(records) < 2:
        raise ConfigError("distance dataset needs at least 2 rows")

    block, n_blocks, held_blocks = _holdout_blocks(len(records), cfg.mirror_pairs, cfg.seed)
    train_records, held_records = [], []
    for b in range(n_blocks):
        rows = records[b * block : (b + 1) * block]
        if b in held_blocks:
            held_records.append(rows[0])  # one orientation per held-out pair
        else:
            train_records.extend(rows)

    fidelity: dict = {"held_out_pairs": len(held_records)}
    if len(held_records) >= 10 and len(train_records) >= 2:
        eval_forest = fit(train_records, cfg.forest, np.random.default_rng(np.random.SeedSequence([cfg.seed, _TAG_FOREST])))
        fidelity["per_metric"] = rank_fidelity(eval_forest, held_records).as_dict()
    else:
        fidelity["insufficient_held_out"] = True

    t0 = time.perf_counter()
    forest = fit(records, cfg.forest, np.random.default_rng(np.random.SeedSequence([cfg.seed, _TAG_FOREST])))
    fit_s = time.perf_counter() - t0
    model_path = os.path.join(out_dir, "surrogate.rf")
    forest.save(model_path)

    report = {
        "config_hash": cfg.config_hash(),
        "records": len(records),
        "fidelity": fidelity,
        "forest": {
            "trees": cfg.forest.tree_count,
            "min_leaf": cfg.forest.min_leaf,
            "max_depth": forest.max_depth,
        },
        "wall_clock": {"fit_s": fit_s},
    }
    _write_json(os.path.join(out_dir, "fidelity_report.json"), report)
    return {"model": model_path, "report": report}


def _run_and_score(cfg: ExperimentConfig, ns_cfg: NsConfig, data: DataSplit, rf):
    result = run(ns_cfg, cfg.bounds, data, replace(cfg.train, seed=ns_cfg.seed), rf=rf)
    stack = fit_stacking(result.models, data.val, cfg.stack_iterations, cfg.stack_learning_rate)
    val_profile = predict_ensemble(result.models, stack, data.val)
    test_profile = predict_ensemble(result.models, stack, data.test)
    return result, stack, val_profile, test_profile


def cmd_search(cfg: ExperimentConfig, out_dir, mode: str, model_path=None, metric: str | None = None) -> dict:
    """Run one full search and persist the trained ensemble with its report."""
    os.makedirs(out_dir, exist_ok=True)
    data = load_experiment_data(cfg)
    rf = None
    if mode == "surrogate":
        if model_path is None:
            raise ConfigError("surrogate mode needs --model pointing at a trained forest")
        rf = RandomForestSurrogate.load(model_path)
    ns_cfg = cfg.ns_config(mode=mode, metric=metric)
    result, stack, val_profile, test_profile = _run_and_score(cfg, ns_cfg, data, rf)

    ensemble_dir = os.path.join(out_dir, "ensemble")
    os.makedirs(ensemble_dir, exist_ok=True)
    member_files = []
    for k, model in enumerate(result.models):
        filename = f"member_{k}.model"
        save_model(model, os.path.join(ensemble_dir, filename))
        member_files.append(filename)
    stack.save(os.path.join(ensemble_dir, "stack.bin"))
    manifest = {
        "config_hash": cfg.config_hash(),
        "members": [
            {"genome": g.to_record(), "model_file": f}
            for g, f in zip(result.genomes, member_files)
        ],
        "stack_file": "stack.bin",
    }
    _write_json(os.path.join(ensemble_dir, "manifest.json"), manifest)

    report = dict(result.report)
    report["config_hash"] = cfg.config_hash()
    report["member_val_accuracies"] = [evaluate(m, data.val).accuracy for m in result.models]
    report["val_accuracy"] = val_profile.accuracy
    report["test_accuracy"] = test_profile.accuracy
    _write_json(os.path.join(out_dir, "report.json"), report)
    return {"report": report, "ensemble_dir": ensemble_dir}


def cmd_compare(cfg: ExperimentConfig, out_dir, model_path=None, repetitions: int | None = None) -> dict:
    """Matched-seed exact vs surrogate comparison: runtimes and accuracies."""
    os.makedirs(out_dir, exist_ok=True)
    data = load_experiment_data(cfg)
    reps = cfg.repetitions if repetitions is None else repetitions
    if reps < 1:
        raise ConfigError("need at least one repetition")

    one_off = {}
    if model_path is not None:
        rf = RandomForestSurrogate.load(model_path)
    else:
        sample_out = cmd_sample(cfg, os.path.join(out_dir, "pretrain"))
        surrogate_out = cmd_train_surrogate(cfg, sample_out["dataset"], os.path.join(out_dir, "pretrain"))
        rf = RandomForestSurrogate.load(surrogate_out["model"])
        one_off = {
            "sample_training_s": sample_out["manifest"]["wall_clock"]["train_s"],
            "dataset_and_forest_s": sample_out["manifest"]["wall_clock"]["build_s"]
            + surrogate_out["report"]["wall_clock"]["fit_s"],
        }

    runs = []
    for rep in range(reps):
        seed_r = cfg.seed + rep
        for mode in ("exact", "surrogate"):
            ns_cfg = cfg.ns_config(mode=mode, seed=seed_r)
            t0 = time.perf_counter()
            _, _, _, test_profile = _run_and_score(cfg, ns_cfg, data, rf if mode == "surrogate" else None)
            wall = time.perf_counter() - t0
            runs.append({"mode": mode, "repetition": rep, "seed": seed_r,
                         "wall_clock_s": wall, "test_accuracy": test_profile.accuracy})

    exact_walls = [r["wall_clock_s"] for r in runs if r["mode"] == "exact"]
    surr_walls = [r["wall_clock_s"] for r in runs if r["mode"] == "surrogate"]
    exact_accs = [r["test_accuracy"] for r in runs if r["mode"] == "exact"]
    surr_accs = [r["test_accuracy"] for r in runs if r["mode"] == "surrogate"]
    summary = {
        "config_hash": cfg.config_hash(),
        "repetitions": reps,
        "median_exact_accuracy": float(np.median(exact_accs)),
        "median_surrogate_accuracy": float(np.median(surr_accs)),
        "wall_clock": {
            "median_exact_s": float(np.median(exact_walls)),
            "median_surrogate_s": float(np.median(surr_walls)),
            "speedup_ratio": float(np.median(exact_walls) / np.median(surr_walls)),
            "one_off": one_off,
            "runs": runs,
        },
    }
    if reps >= 10:
        summary["mann_whitney"] = {
            "runtime_p": mann_whitney_u(exact_walls, surr_walls).p_value,
            "accuracy_p": mann_whitney_u(exact_accs, surr_accs).p_value,
        }

    lines = ["mode,repetition,seed,wall_clock_s,test_accuracy"]
    for r in runs:
        lines.append(
            f"{r['mode']},{r['repetition']},{r['seed']},{r['wall_clock_s']!r},{r['test_accuracy']!r}"
        )
    write_text_atomic(os.path.join(out_dir, "comparison.csv"), "\n".join(lines) + "\n")
    _write_json(os.path.join(out_dir, "comparison.json"), summary)
    return summary


def cmd_evaluate(cfg: ExperimentConfig, run_dir) -> dict:
    """Re-evaluate a persisted ensemble on the configured dataset."""
    ensemble_dir = os.path.join(run_dir, "ensemble")
    with open(os.path.join(ensemble_dir, "manifest.json"), encoding="utf-8") as handle:
        manifest = json.load(handle)
    members = [
        load_model(os.path.join(ensemble_dir, entry["model_file"]))
        for entry in manifest["members"]
    ]
    stack = StackingModel.load(os.path.join(ensemble_dir, manifest["stack_file"]))
    data = load_experiment_data(cfg)
    val_profile = predict_ensemble(members, stack, data.val)
    test_profile = predict_ensemble(members, stack, data.test)
    payload = {
        "config_hash": cfg.config_hash(),
        "members": len(members),
        "member_test_accuracies": [evaluate(m, data.test).accuracy for m in members],
        "val_accuracy": val_profile.accuracy,
        "test_accuracy": test_profile.accuracy,
    }
    _write_json(os.path.join(run_dir, "evaluation.json"), payload)
    return payload
