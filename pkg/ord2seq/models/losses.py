"""
Training objectives: the summed per-step BCE over masked probabilities and
multi-hot targets, and plain cross-entropy for the flat baselines.
"""

from dataclasses import dataclass
from typing import Dict

import torch
import torch.nn.functional as F

from utils.errors import ShapeError
from utils.numerics import add, log, mul

CLAMP_EPS = 1e-7


@dataclass
class LossReport:
    """total = sum of per_step; both are differentiable tensors."""

    total: torch.Tensor
    per_step: torch.Tensor

    def to_dict(self) -> Dict:
        return {
            "total": float(self.total.detach()),
            "per_step": [float(v) for v in self.per_step.detach()],
        }


def sequence_bce(y_prob: torch.Tensor, y_mht: torch.Tensor, eps: float = CLAMP_EPS) -> LossReport:
    """
    L = -(1/n) sum_t sum_i [o_ti log p_ti + (1 - o_ti) log(1 - p_ti)]

    Args:
        y_prob: (d, n) or (B, d, n) masked probabilities
        y_mht: multi-hot targets of the same shape
        eps: probabilities are clamped to [eps, 1 - eps] before the logs

    Returns:
        LossReport; batched inputs are averaged over the batch
    """
    y_mht = y_mht.to(y_prob.dtype)
    if y_prob.shape != y_mht.shape or y_prob.dim() not in (2, 3):
        raise ShapeError("sequence_bce", y_prob.shape, y_mht.shape)

    n = y_prob.shape[-1]
    p = torch.clamp(y_prob, eps, 1.0 - eps)
    terms = add(mul(y_mht, log(p)), mul(1.0 - y_mht, log(1.0 - p)))
    per_step = -terms.sum(dim=-1) / n
    if per_step.dim() == 2:
        per_step = per_step.mean(dim=0)
    return LossReport(total=per_step.sum(), per_step=per_step)


def cross_entropy_report(logits: torch.Tensor, labels: torch.Tensor) -> LossReport:
    """Single-step cross-entropy, reported in the same shape as sequence_bce."""
    loss = F.cross_entropy(logits, labels)
    return LossReport(total=loss, per_step=loss.reshape(1))
