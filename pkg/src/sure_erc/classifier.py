"""Emotion classifier head and training loss."""
import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import Linear, Module


class EmotionClassifier(Module):
    """Softmax classifier over the concatenated [H_t; H_a; H_v] vector."""

    def __init__(self, d, num_labels, rng, dtype=np.float32):
        self.out = Linear(3 * d, num_labels, rng, dtype)
        self.d = d

    def logits(self, h_t, h_a, h_v):
        if not (h_t.shape == h_a.shape == h_v.shape) or h_t.shape[-1] != self.d:
            raise ShapeError(f"classifier expects three [..., {self.d}] inputs, got "
                             f"{h_t.shape}, {h_a.shape}, {h_v.shape}")
        return self.out(T.concat([h_t, h_a, h_v], axis=-1))

    def __call__(self, h_t, h_a, h_v):
        return T.softmax(self.logits(h_t, h_a, h_v), axis=-1)


def predict(probs):
    """Argmax along the last axis; ties go to the lowest index."""
    return np.argmax(np.asarray(probs.data if isinstance(probs, T.Tensor) else probs), axis=-1)


def cross_entropy(logits, labels, valid=None, class_weights=None):
    """Weighted mean negative log-likelihood from logits.

    ``valid`` masks out padded positions. With class weights the mean is
    normalized by the total weight of the counted positions.
    """
    labels = np.asarray(labels)
    k = logits.shape[-1]
    flat = logits.reshape(-1, k)
    y = labels.reshape(-1)
    rows = np.arange(y.size) if valid is None else np.flatnonzero(np.asarray(valid).reshape(-1))
    if rows.size == 0:
        raise ShapeError("cross entropy over zero positions")
    y = y[rows]
    if y.min() < 0 or y.max() >= k:
        raise ShapeError(f"labels must lie in [0, {k}), got range [{y.min()}, {y.max()}]")
    w = np.ones(rows.size) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[y]
    if (w < 0).any():
        raise ShapeError("class weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ShapeError("total class weight is zero")
    logp = T.log_softmax(flat, axis=-1)[rows, y]
    coef = T.Tensor((-w / total).astype(logits.dtype))
    return (logp * coef).sum()


def inverse_frequency_weights(labels, num_labels):
    counts = np.bincount(np.asarray(labels).ravel(), minlength=num_labels).astype(np.float64)
    w = np.where(counts > 0, counts.sum() / (num_labels * np.maximum(counts, 1)), 0.0)
    return w
