"""Random-forest surrogate estimating all six distances from two genomes.

The training set pairs concatenated normalized representations with exact
metric vectors. Trees are CART regressors with 6-vector leaf means, grown
with summed-variance greedy splits at midpoints; candidate-feature draws,
bootstrap resamples and tie-breaking (lowest feature index, then lowest
threshold) are all deterministic for a given seed. Prediction averages the
two input orders so estimated distances are exactly symmetric.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .diversity import METRIC_NAMES, DistanceVector, exact_distance
from .genome import SearchSpaceBounds, arch_rep, normalize
from .persist import load_blob, save_blob
from .stats import spearman

_FOREST_MAGIC = b"DVRF"
_FOREST_VERSION = 1


class DegenerateDataError(ValueError):
    """All records share the same inputs but disagree on targets."""


class DimensionMismatchError(ValueError):
    """Query representation length differs from the training layout."""


@dataclass(frozen=True)
class DistanceRecord:
    """One supervised example: concatenated reps -> six exact distances."""

    x: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 1 or self.d.shape != (6,):
            raise ValueError("record must hold a 1-D input and 6 targets")
        if self.x.min() < -1e-12 or self.x.max() > 1 + 1e-12:
            raise ValueError("record inputs must lie in [0, 1]")
        if self.d.min() < -1e-12 or self.d.max() > 1 + 1e-12:
            raise ValueError("record targets must lie in [0, 1]")


@dataclass(frozen=True)
class ForestParams:
    tree_count: int = 100
    m_try: int | None = None  # None -> ceil(feature_dim / 3)
    min_leaf: int = 2

    def resolve_m_try(self, feature_dim: int) -> int:
        m = self.m_try if self.m_try is not None else math.ceil(feature_dim / 3)
        if not 1 <= m <= feature_dim:
            raise ValueError(f"m_try {m} outside [1, {feature_dim}]")
        return m

    def validate(self, feature_dim: int) -> None:
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        self.resolve_m_try(feature_dim)


def build_distance_dataset(
    sample: list, bounds: SearchSpaceBounds, mirror: bool = True
) -> list[DistanceRecord]:
    """Exact distance records for every unordered pair of a trained sample.

    ``sample`` holds (genome, prediction profile) tuples. With ``mirror``
    each pair also contributes the swapped-input row immediately after the
    original, so the fitted function sees both argument orders.
    """
    if len(sample) < 2:
        raise ValueError("need at least 2 sampled architectures")
    reps = [normalize(g, bounds) for g, _ in sample]
    archs = [arch_rep(r) for r in reps]
    records = []
    for i in range(len(sample)):
        for j in range(i + 1, len(sample)):
            d = exact_distance(sample[i][1], sample[j][1], archs[i], archs[j]).as_array()
            records.append(DistanceRecord(x=np.concatenate([reps[i], reps[j]]), d=d))
            if mirror:
                records.append(DistanceRecord(x=np.concatenate([reps[j], reps[i]]), d=d))
    return records


class RandomForestSurrogate:
    """Flattened node arrays for the whole forest; leaves self-loop."""

    def __init__(self, feature_dim, params, tree_offsets, node_feature, node_threshold,
                 node_left, node_right, leaf_values, max_depth):
        self.feature_dim = feature_dim
        self.params = params
        self.tree_offsets = tree_offsets
        self.node_feature = node_feature
        self.node_threshold = node_threshold
        self.node_left = node_left
        self.node_right = node_right
        self.leaf_values = leaf_values
        self.max_depth = max_depth
        self._inbag: np.ndarray | None = None  # fit-time only, not persisted

    # -- prediction ---------------------------------------------------------
    def predict_matrix(self, x: np.ndarray) -> np.ndarray:
        """Raw forest output for rows of concatenated reps, clipped to [0,1]."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.feature_dim:
            raise DimensionMismatchError(
                f"query has {x.shape[1]} features, forest expects {self.feature_dim}"
            )
        out = np.empty((x.shape[0], 6), dtype=np.float64)
        for start in range(0, x.shape[0], 4096):
            chunk = x[start : start + 4096]
            n = chunk.shape[0]
            cur = np.broadcast_to(self.tree_offsets, (n, len(self.tree_offsets))).copy()
            rows = np.arange(n)[:, None]
            for _ in range(self.max_depth):
                feat = self.node_feature[cur]
                go_left = chunk[rows, feat] <= self.node_threshold[cur]
                cur = np.where(go_left, self.node_left[cur], self.node_right[cur])
            out[start : start + 4096] = self.leaf_values[cur].mean(axis=1)
        return np.clip(out, 0.0, 1.0)

    def predict_pairs(self, reps_a: np.ndarray, reps_b: np.ndarray) -> np.ndarray:
        """Symmetrized estimates for aligned batches of rep pairs."""
        reps_a = np.atleast_2d(reps_a)
        reps_b = np.atleast_2d(reps_b)
        fwd = np.concatenate([reps_a, reps_b], axis=1)
        rev = np.concatenate([reps_b, reps_a], axis=1)
        both = self.predict_matrix(np.concatenate([fwd, rev], axis=0))
        n = reps_a.shape[0]
        return 0.5 * (both[:n] + both[n:])

    def predict(self, n_i: np.ndarray, n_j: np.ndarray) -> DistanceVector:
        """Estimated distance vector for one pair of normalized reps."""
        return DistanceVector.from_array(self.predict_pairs(n_i, n_j)[0])

    # -- out-of-bag diagnostics ----------------------------------------------
    def oob_scores(self, records: list[DistanceRecord]) -> dict:
        """Pooled out-of-bag MSE and R^2 on the records used for fitting."""
        if self._inbag is None:
            raise RuntimeError("out-of-bag info is only available right after fit()")
        x = np.stack([r.x for r in records])
        y = np.stack([r.d for r in records])
        n, trees = x.shape[0], len(self.tree_offsets)
        per_tree = np.empty((trees, n, 6))
        for t in range(trees):
            per_tree[t] = self._predict_single_tree(t, x)
        oob_mask = ~self._inbag  # (trees, n)
        counts = oob_mask.sum(axis=0)
        usable = counts > 0
        weights = oob_mask[:, :, None].astype(np.float64)
        sums = (per_tree * weights).sum(axis=0)
        preds = sums[usable] / counts[usable, None]
        targets = y[usable]
        mse = float(np.mean((preds - targets) ** 2))
        sst = float(np.mean((targets - targets.mean(axis=0)) ** 2))
        r2 = 1.0 - mse / sst if sst > 0 else 0.0
        return {"mse": mse, "r2": r2, "usable_rows": int(usable.sum())}

    def _predict_single_tree(self, tree: int, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        cur = np.full(n, self.tree_offsets[tree], dtype=np.int64)
        rows = np.arange(n)
        for _ in range(self.max_depth):
            feat = self.node_feature[cur]
            go_left = x[rows, feat] <= self.node_threshold[cur]
            cur = np.where(go_left, self.node_left[cur], self.node_right[cur])
        return self.leaf_values[cur]

    # -- persistence ----------------------------------------------------------
    def save(self, path) -> None:
        header = {
            "feature_dim": self.feature_dim,
            "tree_count": self.params.tree_count,
            "m_try": self.params.m_try,
            "min_leaf": self.params.min_leaf,
            "max_depth": self.max_depth,
        }
        arrays = {
            "tree_offsets": self.tree_offsets,
            "node_feature": self.node_feature,
            "node_threshold": self.node_threshold,
            "node_left": self.node_left,
            "node_right": self.node_right,
            "leaf_values": self.leaf_values,
        }
        save_blob(path, _FOREST_MAGIC, _FOREST_VERSION, header, arrays)

    @staticmethod
    def load(path) -> "RandomForestSurrogate":
        header, arrays = load_blob(path, _FOREST_MAGIC, _FOREST_VERSION)
        params = ForestParams(
            tree_count=header["tree_count"],
            m_try=header["m_try"],
            min_leaf=header["min_leaf"],
        )
        return RandomForestSurrogate(
            feature_dim=header["feature_dim"],
            params=params,
            tree_offsets=arrays["tree_offsets"],
            node_feature=arrays["node_feature"],
            node_threshold=arrays["node_threshold"],
            node_left=arrays["node_left"],
            node_right=arrays["node_right"],
            leaf_values=arrays["leaf_values"],
            max_depth=header["max_depth"],
        )


def _grow_tree(x, y, rng, m_try, min_leaf):
    """One CART tree on a bootstrap sample; returns flat node lists.

    Nodes are created in left-first depth-first order so the per-node
    candidate-feature draws are reproducible. Stops on pure nodes, nodes too
    small to split, or when none of the sampled features admits a split that
    keeps min_leaf rows on both sides.
    """
    n = x.shape[0]
    dim = x.shape[1]
    feature, threshold, left, right, values = [], [], [], [], []

    def new_node():
        feature.append(0)
        threshold.append(np.inf)
        left.append(-1)
        right.append(-1)
        values.append(np.zeros(6))
        return len(feature) - 1

    def make_leaf(node, rows):
        feature[node] = -1
        threshold[node] = np.inf
        left[node] = node
        right[node] = node
        values[node] = y[rows].mean(axis=0)

    root = new_node()
    stack = [(np.arange(n), root, 1)]
    max_depth = 1
    while stack:
        rows, node, depth = stack.pop()
        max_depth = max(max_depth, depth)
        yn = y[rows]
        k = rows.shape[0]
        total_sum = yn.sum(axis=0)
        total_sq = float((yn * yn).sum())
        parent_sse = total_sq - float(total_sum @ total_sum) / k
        if k < 2 * min_leaf or parent_sse <= 1e-12:
            make_leaf(node, rows)
            continue

        feats = np.sort(rng.choice(dim, size=m_try, replace=False))
        best_red = 1e-12
        best = None
        for f in feats:
            v = x[rows, f]
            order = np.argsort(v, kind="stable")
            vs = v[order]
            if vs[0] == vs[-1]:
                continue
            ys = yn[order]
            cum_y = np.cumsum(ys, axis=0)
            cum_sq = np.cumsum((ys * ys).sum(axis=1))
            sizes = np.arange(1, k)
            boundary = vs[:-1] < vs[1:]
            valid = boundary & (sizes >= min_leaf) & (k - sizes >= min_leaf)
            if not valid.any():
                continue
            s = sizes[valid]
            left_sum = cum_y[s - 1]
            left_sse = cum_sq[s - 1] - (left_sum * left_sum).sum(axis=1) / s
            right_sum = total_sum - left_sum
            right_sse = (total_sq - cum_sq[s - 1]) - (right_sum * right_sum).sum(axis=1) / (k - s)
            reductions = parent_sse - left_sse - right_sse
            pick = int(np.argmax(reductions))
            if reductions[pick] > best_red:
                best_red = float(reductions[pick])
                split_at = int(s[pick])
                best = (int(f), 0.5 * (vs[split_at - 1] + vs[split_at]))
        if best is None:
            make_leaf(node, rows)
            continue

        f, thr = best
        go_left = x[rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left_id = new_node()
        right_id = new_node()
        left[node] = left_id
        right[node] = right_id
        # push right first so the left child is processed (and numbered) next
        stack.append((rows[~go_left], right_id, depth + 1))
        stack.append((rows[go_left], left_id, depth + 1))
    return feature, threshold, left, right, values, max_depth


def fit(records: list[DistanceRecord], params: ForestParams, rng: np.random.Generator) -> RandomForestSurrogate:
    """Fit the forest: one bootstrap resample and one tree per seed stream."""
    if len(records) < 2:
        raise ValueError("need at least 2 records")
    x = np.stack([r.x for r in records])
    y = np.stack([r.d for r in records])
    params.validate(x.shape[1])
    if np.all(x == x[0]):
        if not np.all(y == y[0]):
            raise DegenerateDataError("all records share one input but targets differ")
    m_try = params.resolve_m_try(x.shape[1])

    tree_seeds = rng.integers(0, 2**63, size=params.tree_count)
    offsets, features, thresholds, lefts, rights, values = [], [], [], [], [], []
    inbag = np.zeros((params.tree_count, x.shape[0]), dtype=bool)
    max_depth = 1
    base = 0
    for t in range(params.tree_count):
        tree_rng = np.random.default_rng(int(tree_seeds[t]))
        boot = tree_rng.integers(0, x.shape[0], size=x.shape[0])
        inbag[t, np.unique(boot)] = True
        f, thr, le, ri, va, depth = _grow_tree(x[boot], y[boot], tree_rng, m_try, params.min_leaf)
        offsets.append(base)
        features.extend(f)
        thresholds.extend(thr)
        lefts.extend(v + base for v in le)
        rights.extend(v + base for v in ri)
        values.extend(va)
        max_depth = max(max_depth, depth)
        base += len(f)

    forest = RandomForestSurrogate(
        feature_dim=x.shape[1],
        params=params,
        tree_offsets=np.asarray(offsets, dtype=np.int64),
        node_feature=np.asarray(features, dtype=np.int32),
        node_threshold=np.asarray(thresholds, dtype=np.float64),
        node_left=np.asarray(lefts, dtype=np.int64),
        node_right=np.asarray(rights, dtype=np.int64),
        leaf_values=np.stack(values),
        max_depth=max_depth,
    )
    forest._inbag = inbag
    return forest


@dataclass(frozen=True)
class FidelityReport:
    """Per-metric held-out agreement between estimated and exact distances."""

    spearman: dict[str, float]
    degenerate: dict[str, bool]
    mae: dict[str, float]

    def as_dict(self) -> dict:
        return {
            name: {
                "spearman": self.spearman[name],
                "degenerate": self.degenerate[name],
                "mae": self.mae[name],
            }
            for name in METRIC_NAMES
        }


def rank_fidelity(rf: RandomForestSurrogate, held_out: list[DistanceRecord]) -> FidelityReport:
    """Spearman rank correlation and MAE per metric on held-out records."""
    if len(held_out) < 10:
        raise ValueError("need at least 10 held-out records")
    x = np.stack([r.x for r in held_out])
    y = np.stack([r.d for r in held_out])
    half = x.shape[1] // 2
    pred = rf.predict_pairs(x[:, :half], x[:, half:])
    rho, degen, mae = {}, {}, {}
    for k, name in enumerate(METRIC_NAMES):
        result = spearman(pred[:, k], y[:, k])
        rho[name] = result.rho
        degen[name] = result.degenerate
        mae[name] = float(np.mean(np.abs(pred[:, k] - y[:, k])))
    return FidelityReport(spearman=rho, degenerate=degen, mae=mae)


# -- distance dataset interchange ---------------------------------------------
def records_to_csv(records: list[DistanceRecord], path) -> None:
    """Write records as CSV: rep columns x0.., then the six metric columns."""
    if not records:
        raise ValueError("no records to write")
    width = records[0].x.shape[0]
    header = [f"x{i}" for i in range(width)] + list(METRIC_NAMES)
    lines = [",".join(header)]
    for rec in records:
        cells = [repr(float(v)) for v in rec.x] + [repr(float(v)) for v in rec.d]
        lines.append(",".join(cells))
    from .persist import write_text_atomic

    write_text_atomic(path, "\n".join(lines) + "\n")


def records_from_csv(path) -> list[DistanceRecord]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or len(header) < 7 or tuple(header[-6:]) != METRIC_NAMES:
            raise ValueError(f"{path}: not a distance dataset (bad header)")
        width = len(header) - 6
        records = []
        for row in reader:
            if not row:
                continue
            vals = np.asarray([float(c) for c in row], dtype=np.float64)
            records.append(DistanceRecord(x=vals[:width], d=vals[width:]))
    return records
