"""Segmentation objectives and completion / semantic metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _flatten_logits(logits: Tensor, labels: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """(B, C, *sp) or (C, *sp) logits -> (B, C, V); labels -> (B, V)."""
    labels = np.asarray(labels)
    if _is_unbatched(logits, labels):
        logits = T.reshape(logits, (1,) + logits.shape)
        labels = labels[None]
    if logits.shape[0] != labels.shape[0] or logits.shape[2:] != labels.shape[1:]:
        raise ValueError(f"logits {logits.shape} do not match labels {labels.shape}")
    B, C = logits.shape[:2]
    return T.reshape(logits, (B, C, -1)), labels.reshape(B, -1)


def _is_unbatched(logits: Tensor, labels: np.ndarray) -> bool:
    batched = logits.ndim == labels.ndim + 1 and logits.shape[:1] + logits.shape[2:] == labels.shape
    return not batched and logits.shape[1:] == labels.shape


def _check_labels(labels: np.ndarray, C: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C - 1}], got range [{labels.min()}, {labels.max()}]")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the true class over all voxels."""
    flat, lab = _flatten_logits(logits, labels)
    C = flat.shape[1]
    _check_labels(lab, C)
    logp = T.log_softmax(flat, axis=1)
    mask = np.moveaxis(np.eye(C, dtype=flat.dtype)[lab], -1, 1)
    return -(logp * mask).sum() * (1.0 / lab.size)


def lovasz_grad(fg_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Jaccard extension along rows of foreground indicators sorted by error."""
    gts = fg_sorted.sum(axis=-1, keepdims=True)
    intersection = gts - np.cumsum(fg_sorted, axis=-1)
    union = gts + np.cumsum(1.0 - fg_sorted, axis=-1)
    jaccard = 1.0 - intersection / union
    jaccard[..., 1:] = jaccard[..., 1:] - jaccard[..., :-1]
    return jaccard


def lovasz_softmax(probs: Tensor, labels: np.ndarray, per_class: bool = False):
    """Lovasz-softmax over classes present in each scene's ground truth, averaged per scene.

    ``probs``: (B, C, *sp) or (C, *sp) class probabilities. With ``per_class``
    returns ``(loss, values)`` where ``values`` is a (B, C) array holding each
    present class's term and NaN for absent classes.
    """
    flat, lab = _flatten_logits(probs, labels)
    B, C, V = flat.shape
    _check_labels(lab, C)
    fg = np.moveaxis(np.eye(C, dtype=flat.dtype)[lab], -1, 1)            # (B, C, V)
    errors = T.abs_(T.sub(Tensor(fg, dtype=fg.dtype), flat))
    order = np.argsort(-errors.data, axis=-1, kind="stable")
    sorted_err = T.take_along_axis(errors, order, axis=-1)
    present = fg.sum(-1) > 0                                              # (B, C)
    grad = lovasz_grad(np.take_along_axis(fg, order, axis=-1)) * present[..., None]
    per = (sorted_err * grad).sum(-1)                                     # (B, C)
    counts = present.sum(-1)
    weights = np.where(present, 1.0 / np.maximum(counts, 1)[:, None], 0.0).astype(flat.dtype)
    loss = (per * weights).sum() * (1.0 / B)
    if per_class:
        values = np.where(present, per.data, np.nan)
        return loss, values
    return loss


def combined_seg_loss(logits: Tensor, labels: np.ndarray, beta: float = 1.0) -> Tensor:
    """Cross-entropy plus ``beta`` times Lovasz-softmax on the softmax of ``logits``."""
    ce = cross_entropy(logits, labels)
    if beta == 0:
        return ce
    axis = 0 if _is_unbatched(logits, np.asarray(labels)) else 1
    return ce + beta * lovasz_softmax(T.softmax(logits, axis=axis), labels)


def kl_divergence(mean: Tensor, log_var: Tensor) -> Tensor:
    """KL(N(mean, exp(log_var)) || N(0, 1)) summed per sample, averaged over the batch axis."""
    term = T.exp(log_var) + mean * mean - 1.0 - log_var
    batch = mean.shape[0] if mean.ndim > 1 else 1
    return term.sum() * (0.5 / batch)


# metrics --------------------------------------------------------------------

@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionCounts":
        z = np.zeros(num_classes, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy())

    @classmethod
    def from_labels(cls, pred: np.ndarray, truth: np.ndarray, num_classes: int) -> "ConfusionCounts":
        pred, truth = np.asarray(pred).ravel(), np.asarray(truth).ravel()
        if pred.shape != truth.shape:
            raise ValueError(f"prediction has {pred.size} voxels, ground truth {truth.size}")
        conf = np.bincount(truth * num_classes + pred, minlength=num_classes ** 2).reshape(num_classes, num_classes)
        tp = np.diag(conf).astype(np.int64)
        return cls(tp, conf.sum(0) - tp, conf.sum(1) - tp)

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def support(self) -> np.ndarray:
        return self.tp + self.fn

    def iou(self) -> np.ndarray:
        denom = self.tp + self.fp + self.fn
        return np.where(denom > 0, self.tp / np.maximum(denom, 1), np.nan)

    def miou(self, ignore_empty: bool = True) -> float:
        """Mean IoU over classes present in the ground truth (class 0 excluded by default)."""
        start = 1 if ignore_empty else 0
        present = self.support[start:] > 0
        if not present.any():
            return 1.0 if (self.fp[start:] == 0).all() else 0.0
        return float(np.mean(self.iou()[start:][present]))


def completion_counts(pred: np.ndarray, truth: np.ndarray) -> tuple[int, int, int]:
    p, t = np.asarray(pred) != 0, np.asarray(truth) != 0
    return int((p & t).sum()), int((p & ~t).sum()), int((~p & t).sum())


def iou_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = tp + fp + fn
    return 1.0 if denom == 0 else tp / denom


def completion_iou(pred: np.ndarray, truth: np.ndarray) -> float:
    """Binary occupancy IoU; any non-zero label counts as occupied."""
    if np.shape(pred) != np.shape(truth):
        raise ValueError(f"grid shapes differ: {np.shape(pred)} vs {np.shape(truth)}")
    return iou_from_counts(*completion_counts(pred, truth))


def semantic_miou(pred: np.ndarray, truth: np.ndarray, num_classes: int | None = None) -> float:
    if np.shape(pred) != np.shape(truth):
        raise ValueError(f"grid shapes differ: {np.shape(pred)} vs {np.shape(truth)}")
    if num_classes is None:
        num_classes = int(max(np.max(pred), np.max(truth))) + 1
    return ConfusionCounts.from_labels(pred, truth, num_classes).miou()
