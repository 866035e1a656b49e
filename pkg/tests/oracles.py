"""Independent reference implementations used as test oracles."""
from __future__ import annotations

import math

import numpy as np


def softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0)


def silu(x):
    return x / (1 + np.exp(-x))


def scan_oracle(params, x: np.ndarray) -> np.ndarray:
    """Token-by-token recurrence for one sequence ``x`` (S, C) of in-projected tokens, plain loops."""
    W = lambda lin: (lin.weight.data.astype(np.float64), None if lin.bias is None else lin.bias.data)
    Wd, bd = W(params.delta_proj)
    Wb, _ = W(params.B_proj)
    Wc, _ = W(params.C_proj)
    A = -np.exp(params.A_log.data.astype(np.float64))
    D = params.D_skip.data.astype(np.float64)
    S, C = x.shape
    N = A.shape[1]
    h = np.zeros((C, N))
    y = np.zeros((S, C))
    for t in range(S):
        xt = x[t].astype(np.float64)
        delta = softplus(xt @ Wd + bd)
        Bt, Ct = xt @ Wb, xt @ Wc
        for c in range(C):
            for n in range(N):
                h[c, n] = math.exp(delta[c] * A[c, n]) * h[c, n] + delta[c] * Bt[n] * xt[c]
            y[t, c] = sum(Ct[n] * h[c, n] for n in range(N)) + D[c] * xt[c]
    return y


def interleaved_oracle(params, x: np.ndarray, dilation: int) -> np.ndarray:
    """Scan each stride-(d+1) subsequence with the loop oracle and put results back in place."""
    stride = dilation + 1
    y = np.zeros(x.shape)
    for r in range(stride):
        pos = np.arange(r, len(x), stride)
        if len(pos):
            y[pos] = scan_oracle(params, x[pos])
    return y


def iou_counting(pred: np.ndarray, truth: np.ndarray, cls: int) -> float:
    """IoU of one class by explicit voxel counting; 1 when the class is in neither grid."""
    tp = fp = fn = 0
    for p, t in zip(np.ravel(pred), np.ravel(truth)):
        tp += (p == cls) and (t == cls)
        fp += (p == cls) and (t != cls)
        fn += (p != cls) and (t == cls)
    return 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)


def completion_iou_counting(pred, truth) -> float:
    tp = fp = fn = 0
    for p, t in zip(np.ravel(pred), np.ravel(truth)):
        tp += p != 0 and t != 0
        fp += p != 0 and t == 0
        fn += p == 0 and t != 0
    return 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)


def miou_counting(pred, truth, num_classes: int) -> float:
    present = [c for c in range(1, num_classes) if np.any(np.ravel(truth) == c)]
    if not present:
        return 1.0 if not np.any(np.ravel(pred) != 0) else 0.0
    return sum(iou_counting(pred, truth, c) for c in present) / len(present)


def dda_first_hit(labels: np.ndarray, origin, direction, voxel_size: float):
    """Amanatides-Woo voxel traversal. Returns (class, hit-face axis, distance) or (0, 0, 0.0) on a miss."""
    shape = np.array(labels.shape)
    o, d = np.asarray(origin, float) / voxel_size, np.asarray(direction, float)
    lo_b, hi_b = np.zeros(3), shape.astype(float)
    t_enter, axis_enter = 0.0, 0
    tmin, tmax = -np.inf, np.inf
    for a in range(3):
        if abs(d[a]) < 1e-12:
            if not lo_b[a] <= o[a] <= hi_b[a]:
                return 0, 0, 0.0
            continue
        t1, t2 = (lo_b[a] - o[a]) / d[a], (hi_b[a] - o[a]) / d[a]
        near = min(t1, t2)
        if near > tmin:
            tmin, axis_enter = near, a
        tmax = min(tmax, max(t1, t2))
    if tmin > tmax or tmax < 0:
        return 0, 0, 0.0
    t_enter = max(tmin, 0.0)
    p = o + t_enter * d
    cell = np.clip(np.floor(p + 1e-9 * d).astype(int), 0, shape - 1)
    step = np.sign(d).astype(int)
    t_next = np.array([((cell[a] + (step[a] > 0)) - o[a]) / d[a] if step[a] else np.inf for a in range(3)])
    t_delta = np.array([abs(1 / d[a]) if step[a] else np.inf for a in range(3)])
    axis, t = axis_enter, t_enter
    while np.all(cell >= 0) and np.all(cell < shape):
        v = labels[tuple(cell)]
        if v:
            return int(v), axis, t * voxel_size
        axis = int(np.argmin(t_next))
        t = t_next[axis]
        cell[axis] += step[axis]
        t_next[axis] += t_delta[axis]
    return 0, 0, 0.0
