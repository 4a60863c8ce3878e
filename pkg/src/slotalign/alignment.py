"""Bi-directional slot/turn alignment network and its two training losses.

All functions accept a leading batch dimension ``B``. Shapes used below:
``L`` tokens, ``J`` slots, ``R = t + 1`` rows (t turns plus the [BLANK]
pseudo-turn), ``d`` model width.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import AttentionConfig, LayerNorm, Module, MultiHeadAttention, Parameter, TransformerBlock
from .tensor import Tensor

NOT_ALIGNED, ALIGNED = 0, 1


def turn_to_slot(H: Tensor, slot_vectors: Tensor, attn: MultiHeadAttention, key_mask=None) -> Tensor:
    """Each slot vector queries every token of its example: ``[B, L, d] -> [B, J, d]``.

    ``key_mask`` is ``[B, L]`` (True = real token).
    """
    mask = None if key_mask is None else np.asarray(key_mask)[:, None, None, :]
    return attn(slot_vectors, H, H, mask)


def slot_self_attention(slot_states: Tensor, blocks: list[TransformerBlock], rng=None) -> Tensor:
    for block in blocks:
        slot_states = block(slot_states, None, rng)
    return slot_states


def turn_masks(slice_ids: np.ndarray, n_rows: int) -> np.ndarray:
    """``[B, R, L]`` membership of each token in each turn slice."""
    return np.asarray(slice_ids)[:, None, :] == np.arange(n_rows)[None, :, None]


def single_slot_to_turn(slot_vectors: Tensor, H: Tensor, slice_ids: np.ndarray, n_rows: int,
                        attn: MultiHeadAttention) -> Tensor:
    """Slot ``j`` attends within each turn slice separately: ``[B, J, R, d]``.

    A row whose slice has no tokens (a turn dropped by truncation) gets
    all-zero attention weights.
    """
    B, L, d = H.shape
    J = slot_vectors.shape[-2]
    h, dh = attn.cfg.num_heads, attn.cfg.head_dim
    q = attn.split_heads(attn.q(slot_vectors))            # [h, J, dh]
    q = q.reshape(q.shape[:-1] + (1, dh))                   # [h, J, 1, dh]
    k = attn.split_heads(attn.k(H)).reshape(B, h, 1, L, dh)
    v = attn.split_heads(attn.v(H)).reshape(B, h, 1, L, dh)
    mask = turn_masks(slice_ids, n_rows)[:, None, None, :, :]  # [B, 1, 1, R, L]
    out = attn.attend(q, k, v, mask)                       # [B, h, J, R, dh]
    out = out.transpose(0, 2, 3, 1, 4).reshape(B, J, n_rows, d)
    return attn.o(out)


def alignment_flags(prev_rows: np.ndarray, n_rows: int) -> np.ndarray:
    """``[B, J, R]`` ints: ALIGNED at each slot's previously aligned row, else NOT_ALIGNED."""
    prev_rows = np.asarray(prev_rows)
    if np.any(prev_rows >= n_rows):
        raise ValueError(f"previous alignment row {prev_rows.max()} outside 0..{n_rows - 1}")
    return (np.arange(n_rows)[None, None, :] == prev_rows[..., None]).astype(np.int64)


def add_alignment_embedding(U_bar: Tensor, prev_rows: np.ndarray, table: Parameter) -> Tensor:
    """``prev_rows`` ``[B, J]``: row aligned at the previous turn, -1 when there is none."""
    flags = alignment_flags(prev_rows, U_bar.shape[-2])
    return U_bar + table[flags]


def overall_slot_to_turn(U_hat: Tensor, slot_states: Tensor, attn: MultiHeadAttention,
                         norm: LayerNorm) -> Tensor:
    """Every (slot, turn) row attends over all slot states, with a residual and layer norm."""
    B, J, R, d = U_hat.shape
    q = U_hat.reshape(B, J * R, d)
    out = norm(q + attn(q, slot_states, slot_states))
    return out.reshape(B, J, R, d)


def turn_self_attention(U: Tensor, row_mask: np.ndarray, blocks: list[TransformerBlock], rng=None) -> Tensor:
    """Self-attention across the R turn rows of each (example, slot) pair."""
    B, J, R, d = U.shape
    x = U.reshape(B * J, R, d)
    mask = np.repeat(np.asarray(row_mask), J, axis=0)[:, None, None, :]
    for block in blocks:
        x = block(x, mask, rng)
    return x.reshape(B, J, R, d)


def alignment_logits(D: Tensor, w_o: Tensor, b_o: Tensor) -> Tensor:
    return D @ w_o + b_o


def alignment_distribution(D: Tensor, w_o: Tensor, b_o: Tensor, row_mask=None) -> Tensor:
    """Softmax over turn rows of ``D @ w_o + b_o``: ``[B, J, R]``."""
    mask = None if row_mask is None else np.asarray(row_mask)[:, None, :]
    return T.softmax(alignment_logits(D, w_o, b_o), axis=-1, mask=mask)


def alignment_log_distribution(D: Tensor, w_o: Tensor, b_o: Tensor, row_mask=None) -> Tensor:
    mask = None if row_mask is None else np.asarray(row_mask)[:, None, :]
    return T.log_softmax(alignment_logits(D, w_o, b_o), axis=-1, mask=mask)


def alignment_loss(log_probs: Tensor, labels: np.ndarray, slot_mask=None) -> Tensor:
    """Summed NLL of the gold rows: ``[..., J, R]`` log-probabilities -> ``[...]``."""
    labels = np.asarray(labels)
    R = log_probs.shape[-1]
    if np.any(labels < 0) or np.any(labels >= R):
        raise ValueError(f"alignment label outside 0..{R - 1}")
    lead = np.indices(labels.shape)
    picked = log_probs[tuple(lead) + (labels,)]
    if slot_mask is not None:
        picked = picked * np.asarray(slot_mask, dtype=float)
    return -picked.sum(axis=-1)


def ranking_scores(slot_states: Tensor, w_s: Tensor, b_s: Tensor) -> Tensor:
    """Sigmoid-squashed linear score per slot: ``[..., J, d] -> [..., J]``."""
    return T.sigmoid(slot_states @ w_s + b_s)


def _check_permutation(order: np.ndarray) -> None:
    J = order.shape[-1]
    if not np.array_equal(np.sort(order, axis=-1), np.broadcast_to(np.arange(J), order.shape)):
        raise ValueError(f"slot order is not a permutation of 0..{J - 1}: {order.tolist()}")


def listmle_loss(scores: Tensor, order) -> Tensor:
    """Plackett-Luce negative log-likelihood of ``order`` under ``scores``.

    ``order[k]`` is the slot index placed at rank k. Accepts ``[J]`` or
    batched ``[B, J]`` inputs; returns a scalar or ``[B]``.
    """
    order = np.asarray(order, dtype=np.int64)
    _check_permutation(order)
    J = order.shape[-1]
    lead = np.indices(order.shape)[:-1]
    ranked = scores[tuple(lead) + (order,)]
    shift = ranked.data.max(axis=-1, keepdims=True)
    e = T.exp(ranked - shift)
    # suffix[k] = sum_{l >= k} e[l]
    suffix = e @ np.triu(np.ones((J, J))).T
    return (T.log(suffix) + shift - ranked).sum(axis=-1)


class AlignmentNetwork(Module):
    """Parameters of the alignment module (attention stacks, AE table, scoring heads)."""

    def __init__(self, attn_cfg: AttentionConfig, n_slot_sa: int, n_turn_sa: int,
                 rng: np.random.Generator, dropout: float = 0.0):
        d = attn_cfg.model_dim
        std = 1.0 / np.sqrt(d)
        self.turn_to_slot = MultiHeadAttention(attn_cfg, rng)
        self.slot_sa = [TransformerBlock(attn_cfg, rng, dropout) for _ in range(n_slot_sa)]
        self.single = MultiHeadAttention(attn_cfg, rng)
        self.ae = Parameter(rng.normal(0.0, std, size=(2, d)))
        self.overall = MultiHeadAttention(attn_cfg, rng)
        self.overall_norm = LayerNorm(d)
        self.turn_sa = [TransformerBlock(attn_cfg, rng, dropout) for _ in range(n_turn_sa)]
        self.w_o = Parameter(rng.normal(0.0, std, size=d))
        self.b_o = Parameter(np.zeros(1))
        self.w_s = Parameter(rng.normal(0.0, std, size=d))
        self.b_s = Parameter(np.zeros(1))
