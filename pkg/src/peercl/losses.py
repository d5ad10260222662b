"""Training objectives: cross-entropy, temperature-softened distillation,
peer mutual distillation, the difficulty-chain distillation ladder, and
their composition into the full per-learner objective.

Every term reduces by mean over the batch; the teacher side of any
distillation term is detached, so no gradient ever reaches teacher
parameters through this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import ShapeError, Tensor, log_softmax, softmax
from .errors import ConfigError

SCHEME_VARIANTS = ("hard_to_easy", "easy_to_hard", "same_difficulty")
KL_DIRECTIONS = ("teacher_to_student", "student_to_teacher")


@dataclass
class LossWeights:
    """Balancing weights: lam_cls on classification terms, lam_distill on
    distillation terms, plus the softening temperature."""

    lam_cls: float = 0.5
    lam_distill: float = 2.0
    temperature: float = 1.0
    kl_direction: str = "teacher_to_student"

    def validate(self):
        if self.lam_cls < 0 or self.lam_distill < 0:
            raise ConfigError("loss weights must be >= 0")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.kl_direction not in KL_DIRECTIONS:
            raise ConfigError(f"kl_direction must be one of {KL_DIRECTIONS}, got {self.kl_direction!r}")


def _check_scheme(scheme: str):
    if scheme not in SCHEME_VARIANTS:
        raise ConfigError(f"scheme must be one of {SCHEME_VARIANTS}, got {scheme!r}")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects (batch, classes) logits, got {logits.data.shape}")
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    logp = log_softmax(logits)
    pick = np.zeros((n, k))
    pick[np.arange(n), labels] = -1.0 / n
    return (logp * Tensor(pick)).sum()


def _softmax_np(logits: np.ndarray, temperature: float) -> tuple[np.ndarray, np.ndarray]:
    scaled = logits / temperature
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return np.exp(logp), logp


def soft_kl(
    student_logits: Tensor,
    teacher_logits: Tensor,
    temperature: float = 1.0,
    direction: str = "teacher_to_student",
) -> Tensor:
    """Mean-over-batch KL between temperature-softened distributions.

    "teacher_to_student" (default) is KL(teacher || student): the student
    is pulled toward the detached teacher target. "student_to_teacher"
    computes KL(student || teacher). Either way only the student side
    carries gradient.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if direction not in KL_DIRECTIONS:
        raise ValueError(f"direction must be one of {KL_DIRECTIONS}, got {direction!r}")
    if student_logits.data.shape != teacher_logits.data.shape:
        raise ShapeError(
            f"student/teacher logits differ: {student_logits.data.shape} vs {teacher_logits.data.shape}"
        )
    n = student_logits.data.shape[0]
    pt, log_pt = _softmax_np(teacher_logits.data, temperature)
    if direction == "teacher_to_student":
        const = float((pt * log_pt).sum() / n)
        cross = (log_softmax(student_logits, temperature) * Tensor(-pt / n)).sum()
        return cross + const
    ps = softmax(student_logits, temperature)
    logp_s = log_softmax(student_logits, temperature)
    inner = ps * logp_s - ps * Tensor(log_pt)
    return inner.sum() * (1.0 / n)


def mutual_distill_loss(student_logits: Tensor, teacher_logits: Tensor, labels, w: LossWeights) -> Tensor:
    """Classification plus distillation toward the detached peer on the
    raw (stage-0) view."""
    w.validate()
    return w.lam_cls * cross_entropy(student_logits, labels) + w.lam_distill * soft_kl(
        student_logits, teacher_logits, w.temperature, w.kl_direction
    )


def chain_distill_loss(
    student_chain: Sequence[Tensor],
    teacher_chain: Sequence[Tensor],
    labels,
    w: LossWeights,
    scheme: str = "hard_to_easy",
) -> Tensor:
    """Distillation ladder over an augmentation chain of n+1 stages.

    Classification covers the augmented stages 1..n. The distillation
    pairing depends on the scheme: "hard_to_easy" (the default) teaches
    stage i-1 of the student from stage i of the teacher; "easy_to_hard"
    reverses the pairing; "same_difficulty" matches stages.
    """
    w.validate()
    _check_scheme(scheme)
    if len(student_chain) != len(teacher_chain):
        raise ValueError(
            f"chain lengths differ: student {len(student_chain)} vs teacher {len(teacher_chain)}"
        )
    n = len(student_chain) - 1
    if n < 1:
        return Tensor(0.0)
    cls_sum = cross_entropy(student_chain[1], labels)
    for i in range(2, n + 1):
        cls_sum = cls_sum + cross_entropy(student_chain[i], labels)
    pairs = {
        "hard_to_easy": [(i - 1, i) for i in range(1, n + 1)],
        "easy_to_hard": [(i, i - 1) for i in range(1, n + 1)],
        "same_difficulty": [(i, i) for i in range(1, n + 1)],
    }[scheme]
    dist_sum = None
    for s_idx, t_idx in pairs:
        term = soft_kl(student_chain[s_idx], teacher_chain[t_idx], w.temperature, w.kl_direction)
        dist_sum = term if dist_sum is None else dist_sum + term
    return w.lam_cls * cls_sum + w.lam_distill * dist_sum


def full_peer_loss(
    baseline_loss: Tensor,
    student_chain: Sequence[Tensor],
    teacher_chain: Sequence[Tensor],
    labels,
    w: LossWeights,
    scheme: str = "hard_to_easy",
) -> Tensor:
    """The complete per-learner objective: baseline loss, classification on
    every chain stage (0..n), peer distillation on the raw view, and the
    chain distillation ladder."""
    w.validate()
    _check_scheme(scheme)
    if len(student_chain) != len(teacher_chain):
        raise ValueError(
            f"chain lengths differ: student {len(student_chain)} vs teacher {len(teacher_chain)}"
        )
    n = len(student_chain) - 1
    cls_sum = cross_entropy(student_chain[0], labels)
    for i in range(1, n + 1):
        cls_sum = cls_sum + cross_entropy(student_chain[i], labels)
    kl_sum = soft_kl(student_chain[0], teacher_chain[0], w.temperature, w.kl_direction)
    pairs = {
        "hard_to_easy": [(i - 1, i) for i in range(1, n + 1)],
        "easy_to_hard": [(i, i - 1) for i in range(1, n + 1)],
        "same_difficulty": [(i, i) for i in range(1, n + 1)],
    }[scheme]
    for s_idx, t_idx in pairs:
        kl_sum = kl_sum + soft_kl(student_chain[s_idx], teacher_chain[t_idx], w.temperature, w.kl_direction)
    return baseline_loss + w.lam_cls * cls_sum + w.lam_distill * kl_sum


def self_chain_loss(chain_logits: Sequence[Tensor], labels, w: LossWeights, scheme: str = "hard_to_easy") -> Tensor:
    """Chain distillation within one model: the teacher chain is the
    detached copy of the student chain."""
    detached = [t.detach() for t in chain_logits]
    return chain_distill_loss(chain_logits, detached, labels, w, scheme)


def frozen_teacher_loss(student_logits: Tensor, frozen_logits: Tensor, labels, w: LossWeights) -> Tensor:
    """Classification plus distillation toward a frozen, never-trained net."""
    w.validate()
    return cross_entropy(student_logits, labels) + w.lam_distill * soft_kl(
        student_logits, frozen_logits, w.temperature, w.kl_direction
    )


def multiview_ce(chain_logits: Sequence[Tensor], labels, lam_cls: float) -> Tensor:
    """Weighted classification over every chain stage, no distillation."""
    if lam_cls < 0:
        raise ConfigError("lam_cls must be >= 0")
    total = cross_entropy(chain_logits[0], labels)
    for t in chain_logits[1:]:
        total = total + cross_entropy(t, labels)
    return lam_cls * total
