"""
Masked decision strategy.

At step t the sigmoid probabilities of categories eliminated at step t-1 are
scaled by alpha; the binary label is then chosen by comparing the average
probability of the left and right subtrees (ties go left).
"""

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from utils.errors import ConfigError, Ord2SeqError
from utils.numerics import mul, sigmoid

DEFAULT_ALPHA = 0.3

# float means further apart than this (relative) are compared directly;
# closer pairs are settled with exact rational means
_TIE_RTOL = 1e-9


@dataclass
class StepOutput:
    """One decoding step of one sample, in JSON-ready form."""

    t: int
    y_out: List[float]
    mask: List[float]
    y_prob: List[float]
    p_left: float
    p_right: float
    bit: int

    def to_dict(self) -> Dict:
        return asdict(self)


def check_alpha(alpha: float) -> float:
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    return float(alpha)


def build_mask(prev_multihot: Optional[torch.Tensor], alpha: float, n: int, dtype=torch.float64) -> torch.Tensor:
    """Entry i is 1 if category i survived step t-1, else alpha. All ones at t=1."""
    alpha = check_alpha(alpha)
    if prev_multihot is None:
        return torch.ones(n, dtype=dtype)
    prev = torch.as_tensor(prev_multihot, dtype=dtype)
    return torch.where(prev > 0.5, torch.ones_like(prev), torch.full_like(prev, alpha))


def apply_mask(y_out: torch.Tensor, prev_multihot: Optional[torch.Tensor], alpha: float) -> torch.Tensor:
    """y_prob = mask * sigmoid(y_out); works on (..., n) logits with a matching mask."""
    mask = build_mask(prev_multihot, alpha, y_out.shape[-1], dtype=y_out.dtype)
    return mul(sigmoid(y_out), mask)


def _left_wins(left: np.ndarray, right: np.ndarray) -> bool:
    p_left, p_right = float(left.mean()), float(right.mean())
    scale = max(abs(p_left), abs(p_right))
    if abs(p_left - p_right) > _TIE_RTOL * scale:
        return p_left > p_right
    exact_left = sum(Fraction(float(v)) for v in left) * len(right)
    exact_right = sum(Fraction(float(v)) for v in right) * len(left)
    return exact_left >= exact_right


def subtree_means(y_prob, left_range: Tuple[int, int], right_range: Tuple[int, int]) -> Tuple[float, float, int]:
    """(p_left, p_right, bit) for one probability vector and the node's child ranges."""
    probs = np.asarray(
        y_prob.detach().cpu().numpy() if torch.is_tensor(y_prob) else y_prob,
        dtype=np.float64,
    )
    (l, m), (m1, r) = left_range, right_range
    left, right = probs[l : m + 1], probs[m1 : r + 1]
    if left.size == 0 or right.size == 0:
        raise Ord2SeqError(f"empty subtree range in decision: {left_range}, {right_range}")
    bit = 0 if _left_wins(left, right) else 1
    return float(left.mean()), float(right.mean()), bit


def decide(y_prob, left_range: Tuple[int, int], right_range: Tuple[int, int]) -> int:
    """Binary label: 0 if mean(y_prob[l..m]) >= mean(y_prob[m+1..r]) else 1."""
    return subtree_means(y_prob, left_range, right_range)[2]


def decide_batch(
    y_prob: torch.Tensor,
    left_masks: np.ndarray,
    right_masks: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Row-wise decision for a batch.

    Args:
        y_prob: (B, n) masked probabilities
        left_masks, right_masks: (B, n) indicators of each row's child ranges

    Returns:
        (bits, p_left, p_right) as numpy arrays of length B
    """
    probs = y_prob.detach().cpu().numpy()
    bits = np.zeros(len(probs), dtype=np.int64)
    p_left = np.zeros(len(probs))
    p_right = np.zeros(len(probs))
    for i, row in enumerate(probs):
        left = row[left_masks[i] > 0]
        right = row[right_masks[i] > 0]
        if left.size == 0 or right.size == 0:
            raise Ord2SeqError("empty subtree range in decision")
        p_left[i], p_right[i] = left.mean(), right.mean()
        bits[i] = 0 if _left_wins(left, right) else 1
    return bits, p_left, p_right


def steps_from_arrays(
    y_out: Sequence[Sequence[float]],
    masks: Sequence[Sequence[float]],
    y_prob: Sequence[Sequence[float]],
    p_left: Sequence[float],
    p_right: Sequence[float],
    bits: Sequence[int],
) -> List[StepOutput]:
    return [
        StepOutput(
            t=t + 1,
            y_out=[float(v) for v in y_out[t]],
            mask=[float(v) for v in masks[t]],
            y_prob=[float(v) for v in y_prob[t]],
            p_left=float(p_left[t]),
            p_right=float(p_right[t]),
            bit=int(bits[t]),
        )
        for t in range(len(bits))
    ]
