"""Residual MLP classifiers built from genomes and trained with SGD.

Everything here is plain numpy in float64. Models are deterministic
functions of (genome, feature_dim, class_count, seed): initialization,
batch order and dropout masks are drawn from generator streams keyed by
the training seed and the genome fingerprint, never from shared ambient
state. That makes prediction profiles reproducible regardless of how many
other models were trained before, and lets identical genomes produce
identical profiles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .genome import Genome, genome_to_config
from .persist import load_blob, save_blob

_TAG_INIT = 1
_TAG_SHUFFLE = 2
_TAG_DROPOUT = 3

_MODEL_MAGIC = b"DVNM"
_MODEL_VERSION = 1


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, message: str, member_index: int | None = None):
        super().__init__(message)
        self.member_index = member_index


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class PredictionProfile:
    """Per-row predictions with correctness (p) and wrong (w) indicator vectors."""

    y: np.ndarray
    p: np.ndarray
    w: np.ndarray

    @property
    def accuracy(self) -> float:
        return float(self.p.mean())

    @staticmethod
    def from_predictions(y_pred: np.ndarray, labels: np.ndarray) -> "PredictionProfile":
        y_pred = np.asarray(y_pred, dtype=np.int64)
        correct = y_pred == np.asarray(labels, dtype=np.int64)
        return PredictionProfile(y=y_pred, p=correct, w=~correct)


def _stream(seed: int, tag: int, *digests: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag, *digests]))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _ce_loss_and_dlogits(logits: np.ndarray, labels: np.ndarray):
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    dlogits = _softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


class _Block:
    """One residual block. The skip path is parameter-free: when widths
    differ it truncates or zero-pads channels (identity-style shortcut),
    which keeps deep stacks variance-stable without normalization."""

    __slots__ = ("w", "b", "in_width", "out_width", "dropout")

    def __init__(self, w, b, in_width, out_width, dropout):
        self.w = w
        self.b = b
        self.in_width = in_width
        self.out_width = out_width
        self.dropout = dropout

    def skip(self, h: np.ndarray) -> np.ndarray:
        if self.out_width == self.in_width:
            return h
        if self.out_width < self.in_width:
            return h[:, : self.out_width]
        out = np.zeros((h.shape[0], self.out_width))
        out[:, : self.in_width] = h
        return out

    def skip_adjoint(self, d_out: np.ndarray) -> np.ndarray:
        if self.out_width == self.in_width:
            return d_out
        if self.out_width < self.in_width:
            padded = np.zeros((d_out.shape[0], self.in_width))
            padded[:, : self.out_width] = d_out
            return padded
        return d_out[:, : self.in_width]


class ResidualMlp:
    """Input projection, residual relu/dropout blocks, linear head."""

    def __init__(self, genome: Genome | None, feature_dim: int, class_count: int,
                 rng: np.random.Generator, blocks: tuple[tuple[int, float], ...] = None,
                 input_width: int = None):
        if feature_dim < 1 or class_count < 2:
            raise ValueError("need feature_dim >= 1 and class_count >= 2")
        if genome is not None:
            plan = genome_to_config(genome)
            blocks = plan.blocks
            input_width = plan.input_width
        self.genome = genome
        self.feature_dim = feature_dim
        self.class_count = class_count
        self.epoch_losses: list[float] = []

        def uniform(fan_in, shape):
            a = np.sqrt(6.0 / fan_in)
            return rng.uniform(-a, a, size=shape)

        self.w_in = uniform(feature_dim, (input_width, feature_dim))
        self.b_in = np.zeros(input_width)
        self.blocks: list[_Block] = []
        prev = input_width
        for width, dropout in blocks:
            w = uniform(prev, (width, prev))
            self.blocks.append(_Block(w, np.zeros(width), prev, width, float(dropout)))
            prev = width
        self.w_out = uniform(prev, (class_count, prev))
        self.b_out = np.zeros(class_count)

    @property
    def seed_digest(self) -> int:
        return self.genome.digest() if self.genome is not None else 0

    # -- parameter vector access (fixed flattening order) ------------------
    def _param_arrays(self):
        arrays = [self.w_in, self.b_in]
        for blk in self.blocks:
            arrays.extend([blk.w, blk.b])
        arrays.extend([self.w_out, self.b_out])
        return arrays

    def params_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._param_arrays()])

    def set_params_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        offset = 0
        for arr in self._param_arrays():
            arr[...] = flat[offset : offset + arr.size].reshape(arr.shape)
            offset += arr.size
        if offset != flat.size:
            raise ValueError(f"parameter vector length {flat.size}, expected {offset}")

    # -- forward / backward -------------------------------------------------
    def draw_masks(self, rng: np.random.Generator, batch_size: int) -> list[np.ndarray]:
        """Inverted-scale dropout masks, one per block, for one batch."""
        masks = []
        for blk in self.blocks:
            u = rng.random((batch_size, blk.w.shape[0]))
            masks.append((u >= blk.dropout) / (1.0 - blk.dropout))
        return masks

    def _forward(self, x: np.ndarray, masks=None):
        h = x @ self.w_in.T + self.b_in
        cache = []
        for k, blk in enumerate(self.blocks):
            z = h @ blk.w.T + blk.b
            a = np.maximum(z, 0.0)
            am = a * masks[k] if masks is not None else a
            cache.append((h, z))
            h = am + blk.skip(h)
        logits = h @ self.w_out.T + self.b_out
        return logits, h, cache

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(x, dtype=np.float64))[0]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return _softmax(self.logits(x))

    def loss(self, x: np.ndarray, labels: np.ndarray, masks=None) -> float:
        logits, _, _ = self._forward(x, masks)
        loss, _ = _ce_loss_and_dlogits(logits, labels)
        return loss

    def loss_and_grad(self, x: np.ndarray, labels: np.ndarray, masks=None):
        """Cross-entropy loss and its gradient per parameter array.

        Gradients come back in the flattening order of ``params_flat``. When
        ``masks`` is given the same masks must be used for a finite-difference
        check to be meaningful.
        """
        logits, h_last, cache = self._forward(x, masks)
        loss, dlogits = _ce_loss_and_dlogits(logits, labels)
        grads = _backward_from_dlogits(self, x, dlogits, h_last, cache, masks)
        return loss, grads

    def _apply_grads(self, grads, learning_rate: float) -> None:
        for arr, grad in zip(self._param_arrays(), grads):
            arr -= learning_rate * grad


def build(g: Genome, feature_dim: int, class_count: int, rng: np.random.Generator) -> ResidualMlp:
    """Instantiate a model for a genome with fan-in scaled uniform init."""
    return ResidualMlp(g, feature_dim, class_count, rng)


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def train_separate(m: ResidualMlp, data, cfg: TrainConfig) -> ResidualMlp:
    """Mini-batch SGD on cross-entropy; streams keyed by (seed, genome)."""
    x, labels = data.features, data.labels
    shuffle_rng = _stream(cfg.seed, _TAG_SHUFFLE, m.seed_digest)
    dropout_rng = _stream(cfg.seed, _TAG_DROPOUT, m.seed_digest)
    m.epoch_losses = [m.loss(x, labels)]
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(len(labels))
        for batch in _batches(order, cfg.batch_size):
            masks = m.draw_masks(dropout_rng, len(batch))
            loss, grads = m.loss_and_grad(x[batch], labels[batch], masks)
            if not np.isfinite(loss):
                raise DivergenceError(f"training loss became {loss}")
            m._apply_grads(grads, cfg.learning_rate)
        m.epoch_losses.append(m.loss(x, labels))
    return m


def _train_joint_group(models: list[ResidualMlp], data, cfg: TrainConfig) -> None:
    """Train a group through the cross-entropy of their mean logits.

    The batch-order stream is keyed by the sorted member fingerprints, so a
    singleton group trains exactly like ``train_separate`` and member order
    never matters. Dropout streams stay per-member.
    """
    x, labels = data.features, data.labels
    digests = sorted(m.seed_digest for m in models)
    shuffle_rng = _stream(cfg.seed, _TAG_SHUFFLE, *digests)
    dropout_rngs = [_stream(cfg.seed, _TAG_DROPOUT, m.seed_digest) for m in models]
    count = len(models)

    def group_loss():
        mean_logits = sum(m.logits(x) for m in models) / count
        loss, _ = _ce_loss_and_dlogits(mean_logits, labels)
        return loss

    for m in models:
        m.epoch_losses = [group_loss()]
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(len(labels))
        for batch in _batches(order, cfg.batch_size):
            xb, yb = x[batch], labels[batch]
            forwards = []
            for m, drop_rng in zip(models, dropout_rngs):
                masks = m.draw_masks(drop_rng, len(batch))
                logits, h_last, cache = m._forward(xb, masks)
                forwards.append((m, masks, logits, h_last, cache))
            mean_logits = sum(f[2] for f in forwards) / count
            loss, dmean = _ce_loss_and_dlogits(mean_logits, yb)
            if not np.isfinite(loss):
                raise DivergenceError(f"joint training loss became {loss}")
            dlogits = dmean / count
            for m, masks, logits, h_last, cache in forwards:
                grads = _backward_from_dlogits(m, xb, dlogits, h_last, cache, masks)
                m._apply_grads(grads, cfg.learning_rate)
        shared = group_loss()
        for m in models:
            m.epoch_losses.append(shared)


def _backward_from_dlogits(m: ResidualMlp, x, dlogits, h_last, cache, masks):
    grads_out = [dlogits.T @ h_last, dlogits.sum(axis=0)]
    d_h = dlogits @ m.w_out
    grads_blocks = []
    for k in range(len(m.blocks) - 1, -1, -1):
        blk = m.blocks[k]
        h_prev, z = cache[k]
        d_a = d_h * masks[k] if masks is not None else d_h
        d_z = d_a * (z > 0.0)
        g_w = d_z.T @ h_prev
        g_b = d_z.sum(axis=0)
        d_h = d_z @ blk.w + blk.skip_adjoint(d_h)
        grads_blocks.append((g_w, g_b))
    grads = [d_h.T @ x, d_h.sum(axis=0)]
    for g_w, g_b in reversed(grads_blocks):
        grads.extend([g_w, g_b])
    grads.extend(grads_out)
    return grads


def train_joint(models: list[ResidualMlp], data, cfg: TrainConfig) -> list[ResidualMlp]:
    """Dispatch models by joint flag: one shared-loss group plus separate runs."""
    if not models:
        raise ValueError("need at least one model")
    joint = []
    for m in models:
        if m.genome is not None and m.genome.j:
            joint.append(m)
        else:
            train_separate(m, data, cfg)
    if joint:
        _train_joint_group(joint, data, cfg)
    return models


def evaluate(m: ResidualMlp, data) -> PredictionProfile:
    """Predictions on a dataset; argmax ties resolve to the lowest class index."""
    logits = m.logits(data.features)
    return PredictionProfile.from_predictions(np.argmax(logits, axis=1), data.labels)


def train_population(genomes: list[Genome], data, cfg: TrainConfig) -> list[PredictionProfile]:
    """Build, train (honoring joint flags) and profile a list of genomes.

    ``data`` is a DataSplit: models train on ``data.train`` and are profiled
    on ``data.val``. Results are index-aligned with the input and invariant
    to input order. Divergence errors are re-raised with the genome index.
    """
    if not genomes:
        raise ValueError("need at least one genome")
    feature_dim = data.train.feature_dim
    class_count = data.train.class_count
    models = [
        build(g, feature_dim, class_count, _stream(cfg.seed, _TAG_INIT, g.digest()))
        for g in genomes
    ]
    joint_indices = [i for i, g in enumerate(genomes) if g.j]
    separate_indices = [i for i, g in enumerate(genomes) if not g.j]
    for i in separate_indices:
        try:
            train_separate(models[i], data.train, cfg)
        except DivergenceError as exc:
            raise DivergenceError(f"genome {i}: {exc}", member_index=i) from exc
    if joint_indices:
        try:
            _train_joint_group([models[i] for i in joint_indices], data.train, cfg)
        except DivergenceError as exc:
            raise DivergenceError(
                f"joint group (genome {joint_indices[0]}): {exc}",
                member_index=joint_indices[0],
            ) from exc
    return [evaluate(m, data.val) for m in models]


def train_models(genomes: list[Genome], data, cfg: TrainConfig) -> list[ResidualMlp]:
    """Like train_population but returning the trained models themselves."""
    if not genomes:
        raise ValueError("need at least one genome")
    feature_dim = data.train.feature_dim
    class_count = data.train.class_count
    models = [
        build(g, feature_dim, class_count, _stream(cfg.seed, _TAG_INIT, g.digest()))
        for g in genomes
    ]
    train_joint(models, data.train, cfg)
    return models


def save_model(m: ResidualMlp, path) -> None:
    if m.genome is None:
        raise ValueError("only genome-built models can be persisted")
    header = {
        "genome": m.genome.to_record(),
        "feature_dim": m.feature_dim,
        "class_count": m.class_count,
    }
    save_blob(path, _MODEL_MAGIC, _MODEL_VERSION, header, {"params": m.params_flat()})


def load_model(path) -> ResidualMlp:
    header, arrays = load_blob(path, _MODEL_MAGIC, _MODEL_VERSION)
    genome = Genome.from_record(header["genome"])
    m = build(genome, header["feature_dim"], header["class_count"], np.random.default_rng(0))
    m.set_params_flat(arrays["params"])
    return m
