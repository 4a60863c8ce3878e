"""The slot-turn alignment tracker: examples, batching and the forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import alignment as A
from . import tensor as T
from . import value_matcher as VM
from .config import TrainConfig
from .corpus import (AlignmentLabel, Dialogue, InputSequence, Ontology, Vocab, build_input_sequence,
                     derive_alignment_labels, order_slots)
from .encoders import SchemaCache, SchemaEncoder, UtteranceEncoder
from .nn import AttentionConfig, Module
from .tensor import Tensor


@dataclass
class Example:
    """One prediction point: dialogue history up to ``turn``."""

    dialogue_id: str
    turn: int
    seq: InputSequence
    label_rows: np.ndarray
    """``[J]`` gold row per slot (turn i -> i-1, BLANK -> turn)."""
    prev_rows: np.ndarray
    """``[J]`` gold rows at the previous turn mapped to this turn's rows; -1 at turn 1."""
    order: np.ndarray
    gold_values: np.ndarray
    gold_state: dict[str, str]
    label: AlignmentLabel


def label_rows(label: AlignmentLabel, slots: list[str]) -> np.ndarray:
    t = label.turn
    return np.array([t if label.target(s) is None else label.target(s) - 1 for s in slots], dtype=np.int64)


def carry_rows(prev: np.ndarray, prev_turn: int) -> np.ndarray:
    """Map rows of turn ``prev_turn`` onto the rows of the next turn (BLANK stays BLANK)."""
    prev = np.asarray(prev)
    return np.where(prev == prev_turn, prev_turn + 1, prev)


def build_examples(dialogue: Dialogue, ontology: Ontology, vocab: Vocab, max_len: int,
                   policy: str = "last") -> list[Example]:
    slots = ontology.slots
    labels = derive_alignment_labels(dialogue, policy)
    out = []
    prev = None
    for turn, label in zip(dialogue.turns, labels):
        rows = label_rows(label, slots)
        prev_rows = np.full(len(slots), -1, dtype=np.int64) if prev is None else carry_rows(prev, turn.index - 1)
        order = [slots.index(s) for s in order_slots(label, slots)]
        gold = np.array([ontology.values[s].index(turn.value(s)) for s in slots], dtype=np.int64)
        seq = build_input_sequence(dialogue, turn.index, vocab, max_len)
        out.append(Example(dialogue.id, turn.index, seq, rows, prev_rows, np.array(order), gold,
                           {s: turn.value(s) for s in slots}, label))
        prev = rows
    return out


@dataclass
class Batch:
    token_ids: np.ndarray
    turn_ids: np.ndarray
    segment_ids: np.ndarray
    slice_ids: np.ndarray
    key_mask: np.ndarray
    turns: np.ndarray
    row_mask: np.ndarray
    label_rows: np.ndarray
    prev_rows: np.ndarray
    order: np.ndarray
    gold_values: np.ndarray
    examples: list[Example] = field(repr=False, default_factory=list)

    @property
    def size(self) -> int:
        return len(self.turns)

    @property
    def n_rows(self) -> int:
        return self.row_mask.shape[1]


def make_batch(examples: list[Example], prev_rows: np.ndarray | None = None) -> Batch:
    B = len(examples)
    L = max(len(e.seq) for e in examples)
    R = max(e.turn for e in examples) + 1
    tok = np.zeros((B, L), dtype=np.int64)
    trn = np.zeros((B, L), dtype=np.int64)
    seg = np.zeros((B, L), dtype=np.int64)
    sli = np.full((B, L), -1, dtype=np.int64)
    km = np.zeros((B, L), dtype=bool)
    for i, e in enumerate(examples):
        n = len(e.seq)
        tok[i, :n] = e.seq.token_ids
        trn[i, :n] = e.seq.turn_ids
        seg[i, :n] = e.seq.segment_ids
        sli[i, :n] = e.seq.slice_ids
        km[i, :n] = True
    turns = np.array([e.turn for e in examples])
    row_mask = np.arange(R)[None, :] <= turns[:, None]
    return Batch(tok, trn, seg, sli, km, turns, row_mask,
                 np.stack([e.label_rows for e in examples]),
                 np.stack([e.prev_rows for e in examples]) if prev_rows is None else np.asarray(prev_rows),
                 np.stack([e.order for e in examples]),
                 np.stack([e.gold_values for e in examples]),
                 list(examples))


@dataclass
class ForwardOutput:
    value_logp: Tensor
    """``[B, J, V]``"""
    value_mask: np.ndarray
    """``[B, J]`` slots whose value comes from the distance softmax (not forced to "none")."""
    selected_rows: np.ndarray | None = None
    align_logp: Tensor | None = None
    align_probs: Tensor | None = None
    rank_scores: Tensor | None = None
    slot_states: Tensor | None = None
    D: Tensor | None = None
    attention: dict = field(default_factory=dict)


class SlotTurnTracker(Module):
    def __init__(self, config: TrainConfig, vocab: Vocab, ontology: Ontology):
        self.config = config
        self._vocab = vocab
        self._ontology = ontology
        rng = np.random.default_rng(config.seed)
        d = config.d
        self.utterance = UtteranceEncoder(len(vocab), d, config.heads, config.encoder_layers,
                                          config.max_seq_len, config.max_turns, rng, config.dropout)
        self.schema_encoder = SchemaEncoder(self.utterance.token, d, config.heads, config.schema_layers, 32, rng)
        self.align = A.AlignmentNetwork(AttentionConfig(d, config.align_heads), config.n_slot_sa,
                                        config.n_turn_sa, rng, config.dropout)
        self.value = VM.ValueProjection(d, rng)
        self.assign_names()
        if config.freeze_schema_encoders:
            self.schema_encoder.set_frozen(True)
        self._schema = SchemaCache(ontology, self.schema_encoder, vocab, config.freeze_schema_encoders)
        self._dropout_rng = np.random.default_rng([config.seed, 7919]) if config.dropout > 0 else None

    @property
    def vocab(self) -> Vocab:
        return self._vocab

    @property
    def ontology(self) -> Ontology:
        return self._ontology

    @property
    def slots(self) -> list[str]:
        return self._ontology.slots

    def schema(self):
        return self._schema.get()

    def invalidate_schema(self) -> None:
        self._schema.invalidate()

    def encoder_parameters(self):
        return self.utterance.parameters()

    def other_parameters(self):
        enc = {id(p) for p in self.encoder_parameters()}
        return [p for p in self.parameters() if id(p) not in enc]

    def examples(self, dialogue: Dialogue) -> list[Example]:
        return build_examples(dialogue, self._ontology, self._vocab, self.config.max_seq_len,
                              self.config.alignment_policy)

    def forward(self, batch: Batch, train: bool = True, soft: bool | None = None,
                inject_alignment: np.ndarray | None = None, keep_attention: bool = False) -> ForwardOutput:
        """Run the network on ``batch``.

        ``train`` selects teacher-forced value selection (gold aligned row)
        when ``value_on_gold_alignment`` is set; otherwise the argmax row
        is used. ``inject_alignment`` (``[B, J, R]``) replaces the predicted
        alignment distribution for the value path.
        """
        cfg = self.config
        soft = cfg.soft_alignment if soft is None else soft
        rng = self._dropout_rng if train else None
        al = self.align
        H = self.utterance(batch.token_ids, batch.turn_ids, batch.segment_ids, batch.key_mask, rng)
        sch = self.schema()
        cand = sch.value_vectors[sch.value_index]                       # [J, V, d]
        cand_mask = sch.value_mask[None]
        slot_t = A.turn_to_slot(H, sch.slot_vectors, al.turn_to_slot, batch.key_mask)
        attention = {}
        if keep_attention:
            attention["token_slot"] = al.turn_to_slot.last_weights

        if cfg.no_alignment_module:
            O = VM.project(slot_t, self.value)
            logp = VM.value_log_distribution(O, cand, cand_mask)
            return ForwardOutput(logp, np.ones(batch.label_rows.shape, dtype=bool), attention=attention)

        Hs = A.slot_self_attention(slot_t, al.slot_sa, rng)
        f = A.ranking_scores(Hs, al.w_s, al.b_s)
        R = batch.n_rows
        U_bar = A.single_slot_to_turn(sch.slot_vectors, H, batch.slice_ids, R, al.single)
        U_hat = A.add_alignment_embedding(U_bar, batch.prev_rows, al.ae)
        if cfg.no_overall_slot_to_turn:
            U_til = U_hat
        else:
            U_til = A.overall_slot_to_turn(U_hat, Hs, al.overall, al.overall_norm)
            if keep_attention:
                B, J = batch.size, len(self.slots)
                w = al.overall.last_weights
                attention["slot_turn"] = w.reshape(B, w.shape[1], J, R, J)
        D = A.turn_self_attention(U_til, batch.row_mask, al.turn_sa, rng)
        align_logp = A.alignment_log_distribution(D, al.w_o, al.b_o, batch.row_mask)
        align_probs = A.alignment_distribution(D, al.w_o, al.b_o, batch.row_mask)

        p = align_probs.data if inject_alignment is None else np.asarray(inject_alignment, dtype=float)
        if train and cfg.value_on_gold_alignment and inject_alignment is None:
            rows = batch.label_rows
        else:
            rows = np.argmax(np.where(batch.row_mask[:, None, :], p, -np.inf), axis=-1)
        blank = rows == batch.turns[:, None]
        if soft:
            weights = align_probs if inject_alignment is None else Tensor(p)
            D_star = VM.soft_select(D, weights)
        else:
            D_star = VM.hard_select(D, rows)
        O = VM.project(D_star, self.value)
        logp = VM.value_log_distribution(O, cand, cand_mask)
        return ForwardOutput(logp, ~blank, rows, align_logp, align_probs, f, Hs, D, attention)

    def value_probabilities(self, out: ForwardOutput) -> np.ndarray:
        """Final per-slot value distributions, with BLANK-selected slots forced to "none"."""
        probs = np.exp(out.value_logp.data) * self.schema().value_mask[None]
        none_idx = np.array([self._ontology.values[s].index("none") for s in self.slots])
        forced = np.zeros_like(probs)
        forced[:, np.arange(len(self.slots)), none_idx] = 1.0
        return np.where(out.value_mask[..., None], probs, forced)
