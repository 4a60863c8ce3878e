"""Value prediction from the aligned turn by Euclidean distance to candidate values."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor


class ValueProjection(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        self.linear = Linear(d, d, rng)
        self.norm = LayerNorm(d)


def select_aligned_turn(distribution, mode: str = "hard"):
    """Pick the aligned turn from a distribution over ``t + 1`` rows.

    Hard mode returns the 1-based turn number of the argmax (lowest index
    wins ties; ``t + 1`` means [BLANK]). Soft mode returns the distribution
    itself as mixing weights.
    """
    p = np.asarray(distribution.data if isinstance(distribution, Tensor) else distribution, dtype=float)
    if mode == "hard":
        return int(np.argmax(p)) + 1
    if mode == "soft":
        return p
    raise ValueError(f"unknown selection mode {mode!r}")


def hard_select(D: Tensor, rows: np.ndarray) -> Tensor:
    """``D[..., rows, :]`` per (example, slot): ``[B, J, R, d], [B, J] -> [B, J, d]``."""
    rows = np.asarray(rows)
    lead = np.indices(rows.shape)
    return D[tuple(lead) + (rows,)]


def soft_select(D: Tensor, weights: Tensor) -> Tensor:
    """Weighted sum of turn rows: ``[B, J, R, d], [B, J, R] -> [B, J, d]``."""
    w = weights.reshape(weights.shape[:-1] + (1, weights.shape[-1]))
    out = w @ D
    return out.reshape(out.shape[:-2] + (out.shape[-1],))


def project(D_star: Tensor, proj: ValueProjection) -> Tensor:
    return proj.norm(proj.linear(D_star))


def _neg_distances(O_star: Tensor, candidates: Tensor) -> Tensor:
    # O_star [..., d]; candidates [V, d] or [..., V, d]
    O = O_star.reshape(O_star.shape[:-1] + (1, O_star.shape[-1]))
    return -T.l2_norm(O - candidates, axis=-1)


def value_distribution(O_star: Tensor, candidates: Tensor, mask=None) -> Tensor:
    """Softmax over negative L2 distances to each candidate vector."""
    if candidates.shape[-2] == 0:
        raise ValueError("value distribution needs at least one candidate")
    return T.softmax(_neg_distances(O_star, candidates), axis=-1, mask=mask)


def value_log_distribution(O_star: Tensor, candidates: Tensor, mask=None) -> Tensor:
    if candidates.shape[-2] == 0:
        raise ValueError("value distribution needs at least one candidate")
    return T.log_softmax(_neg_distances(O_star, candidates), axis=-1, mask=mask)


def value_loss(log_probs: Tensor, gold: np.ndarray, slot_mask=None) -> Tensor:
    """Summed NLL of the gold candidates: ``[..., J, V]`` -> ``[...]``.

    Gold indices of -1 mark a value missing from the candidate list.
    """
    gold = np.asarray(gold)
    if np.any(gold < 0) or np.any(gold >= log_probs.shape[-1]):
        raise ValueError("gold value is not among the slot's candidates")
    lead = np.indices(gold.shape)
    picked = log_probs[tuple(lead) + (gold,)]
    if slot_mask is not None:
        picked = picked * np.asarray(slot_mask, dtype=float)
    return -picked.sum(axis=-1)
