"""Stacked generalization over trained ensemble members.

A linear softmax head maps concatenated member class probabilities to
class scores. It is trained on the validation set only, initialized to
plain probability averaging so zero iterations reproduce soft voting.
"""

from __future__ import annotations

import numpy as np

from .learner import DivergenceError, PredictionProfile, _ce_loss_and_dlogits
from .persist import load_blob, save_blob

_STACK_MAGIC = b"DVST"
_STACK_VERSION = 1


class StackingModel:
    """Linear map from E*C member probabilities to C class scores."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, iterations: int):
        if weights.ndim != 2 or weights.shape[0] != bias.shape[0]:
            raise ValueError("weights must be (classes, members*classes) with matching bias")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise ValueError("stack parameters must be finite")
        self.weights = weights
        self.bias = bias
        self.iterations = iterations

    def scores(self, member_probs: np.ndarray) -> np.ndarray:
        return member_probs @ self.weights.T + self.bias

    def save(self, path) -> None:
        header = {"iterations": self.iterations}
        save_blob(path, _STACK_MAGIC, _STACK_VERSION, header,
                  {"weights": self.weights, "bias": self.bias})

    @staticmethod
    def load(path) -> "StackingModel":
        header, arrays = load_blob(path, _STACK_MAGIC, _STACK_VERSION)
        return StackingModel(arrays["weights"], arrays["bias"], header["iterations"])


def member_probability_matrix(members: list, features: np.ndarray) -> np.ndarray:
    """Concatenate each member's class probabilities, member order preserved."""
    return np.concatenate([m.predict_proba(features) for m in members], axis=1)


def fit_stacking(members: list, val, iterations: int, learning_rate: float = 0.5) -> StackingModel:
    """Train the stacking head by full-batch gradient descent on the val set.

    Initialization averages member probabilities (identity blocks scaled by
    1/E), so the untrained stack already behaves like soft voting.
    """
    if not members:
        raise ValueError("need at least one member")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    count = len(members)
    classes = val.class_count
    phi = member_probability_matrix(members, val.features)
    weights = np.tile(np.eye(classes) / count, (1, count))
    bias = np.zeros(classes)
    for _ in range(iterations):
        logits = phi @ weights.T + bias
        loss, dlogits = _ce_loss_and_dlogits(logits, val.labels)
        if not np.isfinite(loss):
            raise DivergenceError(f"stacking loss became {loss}")
        weights -= learning_rate * (dlogits.T @ phi)
        bias -= learning_rate * dlogits.sum(axis=0)
    return StackingModel(weights=weights, bias=bias, iterations=iterations)


def predict_ensemble(members: list, stack: StackingModel, data) -> PredictionProfile:
    """Profile of the stacked ensemble; argmax ties go to the lowest class."""
    phi = member_probability_matrix(members, data.features)
    scores = stack.scores(phi)
    return PredictionProfile.from_predictions(np.argmax(scores, axis=1), data.labels)
