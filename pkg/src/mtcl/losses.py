"""Loss terms for the three-signal training objective.

All losses operate on raw logits.  Distillation compares temperature-
softened distributions of teacher and student; the teacher distribution
is the target of the cross entropy and receives no gradient.  No
temperature-squared rescaling is applied to the distillation gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NumericError
from .weights import WeightTriple

# Floor applied to probabilities inside log() so empty-support targets
# cannot produce inf.
PROB_EPS = 1e-12


def softened_softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Softmax of logits / temperature along the last axis.

    Numerically stabilized by max subtraction; temperature 1 is the
    plain softmax.
    """
    if temperature <= 0.0:
        raise NumericError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input contains non-finite values")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(target: np.ndarray, prediction: np.ndarray) -> float:
    """-sum(target * log(prediction)) with the probability floor applied."""
    target = np.asarray(target, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if target.shape != prediction.shape:
        raise DimensionMismatchError(
            f"target shape {target.shape} != prediction shape {prediction.shape}"
        )
    return float(-(target * np.log(np.maximum(prediction, PROB_EPS))).sum())


def hard_label_loss(logits: np.ndarray, label_index: int) -> tuple[float, np.ndarray]:
    """Cross entropy against a one-hot label, with its logit gradient.

    Returns ``(loss, dloss/dlogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise DimensionMismatchError(f"expected a logit vector, got shape {logits.shape}")
    if not 0 <= label_index < logits.shape[0]:
        raise DimensionMismatchError(
            f"label index {label_index} out of range for {logits.shape[0]} classes"
        )
    probs = softened_softmax(logits, 1.0)
    loss = float(-np.log(max(probs[label_index], PROB_EPS)))
    grad = probs.copy()
    grad[label_index] -= 1.0
    return loss, grad


def kd_loss(
    teacher_logits: np.ndarray,
    student_logits: np.ndarray,
    temperature: float,
    mask: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Distillation cross entropy restricted to the masked classes.

    ``mask`` selects the class indices both parties score (the teacher's
    known label space).  The returned gradient has the student's full
    length with zeros outside the mask.  The gradient omits any
    temperature-squared rescaling, so it is the exact derivative of the
    returned loss divided by nothing: d/ds CE = (softmax(s/T) -
    softmax(t/T)) / T on the masked entries.
    """
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    student_logits = np.asarray(student_logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.int64)
    if mask.ndim != 1 or mask.size == 0:
        raise DimensionMismatchError("class mask must be a non-empty index vector")
    if student_logits.ndim != 1:
        raise DimensionMismatchError(
            f"expected a student logit vector, got shape {student_logits.shape}"
        )
    if mask.min() < 0 or mask.max() >= student_logits.shape[0]:
        raise DimensionMismatchError(
            f"mask indices out of range for {student_logits.shape[0]} student classes"
        )
    if teacher_logits.shape != (mask.size,):
        raise DimensionMismatchError(
            f"teacher produced {teacher_logits.shape} logits for a mask of {mask.size}"
        )
    t_probs = softened_softmax(teacher_logits, temperature)
    s_probs = softened_softmax(student_logits[mask], temperature)
    loss = cross_entropy(t_probs, s_probs)
    grad = np.zeros_like(student_logits)
    grad[mask] = (s_probs - t_probs) / temperature
    return loss, grad


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values of one combined loss evaluation."""

    hard: float
    kd_prev: float
    kd_llm: float
    total: float


def combine_losses(
    weights: WeightTriple, hard: float, kd_prev: float, kd_llm: float
) -> LossBreakdown:
    """Weighted sum of the three terms.

    A term with zero weight contributes nothing even if its value is
    nan, so disabled teachers never have to be evaluated.
    """
    def term(w: float, v: float) -> float:
        if w == 0.0:
            return 0.0
        if not np.isfinite(v):
            raise NumericError(f"non-finite loss term {v} under nonzero weight {w}")
        return w * v

    total = term(weights.alpha, hard) + term(weights.beta, kd_prev) + term(
        weights.chi, kd_llm
    )
    return LossBreakdown(hard=hard, kd_prev=kd_prev, kd_llm=kd_llm, total=total)


def grad_check(loss_and_grad, params: np.ndarray, step: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad(params)`` must return ``(loss, grad)``.  The
    relative error of coordinate i is |analytic - numeric| /
    max(1, |analytic|).
    """
    if step <= 0.0:
        raise NumericError(f"finite-difference step must be > 0, got {step}")
    params = np.asarray(params, dtype=np.float64)
    _, analytic = loss_and_grad(params)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != params.shape:
        raise DimensionMismatchError(
            f"gradient shape {analytic.shape} != parameter shape {params.shape}"
        )
    worst = 0.0
    flat = params.copy().ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        plus, _ = loss_and_grad(flat.reshape(params.shape))
        flat[i] = keep - step
        minus, _ = loss_and_grad(flat.reshape(params.shape))
        flat[i] = keep
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericError("non-finite loss during finite-difference probe")
        numeric = (plus - minus) / (2.0 * step)
        a = analytic.ravel()[i]
        err = abs(a - numeric) / max(1.0, abs(a))
        worst = max(worst, err)
    return worst
