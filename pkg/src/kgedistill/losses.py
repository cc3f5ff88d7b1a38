"""Distance and loss primitives shared by training and distillation.

Everything here is a pure, batch-vectorized function returning per-triple
values together with the partial derivatives needed by the manual backward
passes. The binary cross-entropy uses the softplus form, which is stable
for any finite score.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEmbeddingError


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def huber(a, b) -> np.ndarray:
    """Huber distance with unit transition: 0.5*(a-b)^2 inside |a-b| <= 1,
    |a-b| - 0.5 outside. Symmetric, zero iff a == b."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    ad = np.abs(d)
    return np.where(ad <= 1.0, 0.5 * d * d, ad - 0.5)


def huber_grad(a, b) -> np.ndarray:
    """d huber(a, b) / da; negate for d/db."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return np.clip(d, -1.0, 1.0)


def hard_loss(scores, labels) -> np.ndarray:
    """Per-triple binary cross-entropy of sigmoid(score) against y in {0,1}:
    y*softplus(-s) + (1-y)*softplus(s)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return y * np.logaddexp(0.0, -s) + (1.0 - y) * np.logaddexp(0.0, s)


def hard_loss_grad(scores, labels) -> np.ndarray:
    """d hard_loss / d score = sigmoid(score) - y."""
    return sigmoid(scores) - np.asarray(labels, dtype=np.float64)


def score_distance(teacher_scores, student_scores) -> np.ndarray:
    return huber(teacher_scores, student_scores)


def _norms(rows: np.ndarray, side: str) -> np.ndarray:
    n = np.sqrt(np.sum(rows * rows, axis=1))
    if np.any(n == 0.0):
        raise DegenerateEmbeddingError(
            f"zero-norm {side} embedding reached the structure distance")
    return n


def angle(h: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Cosine of the angle between row pairs, clamped to [-1, 1]."""
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    nh, nt = _norms(h, "head"), _norms(t, "tail")
    return np.clip(np.sum(h * t, axis=1) / (nh * nt), -1.0, 1.0)


def length_ratio(h: np.ndarray, t: np.ndarray) -> np.ndarray:
    """||h|| / ||t|| per row pair."""
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    return _norms(h, "head") / _norms(t, "tail")


def _angle_with_grads(h, t):
    nh, nt = _norms(h, "head"), _norms(t, "tail")
    raw = np.sum(h * t, axis=1) / (nh * nt)
    # Gradients use the unclamped cosine; the clamp only absorbs rounding.
    d_h = t / (nh * nt)[:, None] - (raw / (nh * nh))[:, None] * h
    d_t = h / (nh * nt)[:, None] - (raw / (nt * nt))[:, None] * t
    return np.clip(raw, -1.0, 1.0), d_h, d_t


def _ratio_with_grads(h, t):
    nh, nt = _norms(h, "head"), _norms(t, "tail")
    ratio = nh / nt
    d_h = h / (nh * nt)[:, None]
    d_t = -(nh / (nt ** 3))[:, None] * t
    return ratio, d_h, d_t


@dataclass
class StructureDistance:
    """Per-triple structure distance and its vector partials."""

    values: np.ndarray
    d_teacher_head: np.ndarray
    d_teacher_tail: np.ndarray
    d_student_head: np.ndarray
    d_student_tail: np.ndarray


def structure_distance(teacher_head, teacher_tail, student_head,
                       student_tail) -> StructureDistance:
    """Huber gap between teacher and student on (h, t) angle and length ratio.

    Both comparands are scalars per triple, so teacher and student views may
    have different widths. Relation embeddings never enter.
    """
    ht = np.atleast_2d(np.asarray(teacher_head, dtype=np.float64))
    tt = np.atleast_2d(np.asarray(teacher_tail, dtype=np.float64))
    hs = np.atleast_2d(np.asarray(student_head, dtype=np.float64))
    ts = np.atleast_2d(np.asarray(student_tail, dtype=np.float64))

    ang_t, dang_ht, dang_tt = _angle_with_grads(ht, tt)
    ang_s, dang_hs, dang_ts = _angle_with_grads(hs, ts)
    rat_t, drat_ht, drat_tt = _ratio_with_grads(ht, tt)
    rat_s, drat_hs, drat_ts = _ratio_with_grads(hs, ts)

    values = huber(ang_t, ang_s) + huber(rat_t, rat_s)
    g_ang = huber_grad(ang_t, ang_s)  # d/d ang_t; d/d ang_s is its negation
    g_rat = huber_grad(rat_t, rat_s)
    return StructureDistance(
        values=values,
        d_teacher_head=g_ang[:, None] * dang_ht + g_rat[:, None] * drat_ht,
        d_teacher_tail=g_ang[:, None] * dang_tt + g_rat[:, None] * drat_tt,
        d_student_head=-g_ang[:, None] * dang_hs - g_rat[:, None] * drat_hs,
        d_student_tail=-g_ang[:, None] * dang_ts - g_rat[:, None] * drat_ts,
    )


@dataclass
class SoftDistance:
    """Score distance + structure distance with all partials."""

    values: np.ndarray
    d_teacher_score: np.ndarray
    d_student_score: np.ndarray
    structure: StructureDistance

    @property
    def score_part(self) -> np.ndarray:
        return self.values - self.structure.values


def soft_distance(teacher_scores, student_scores, teacher_head, teacher_tail,
                  student_head, student_tail) -> SoftDistance:
    """Per-triple soft distance: huber score gap plus structure gap."""
    ts = np.asarray(teacher_scores, dtype=np.float64)
    ss = np.asarray(student_scores, dtype=np.float64)
    structure = structure_distance(teacher_head, teacher_tail,
                                   student_head, student_tail)
    g = huber_grad(ts, ss)
    return SoftDistance(
        values=huber(ts, ss) + structure.values,
        d_teacher_score=g,
        d_student_score=-g,
        structure=structure,
    )
