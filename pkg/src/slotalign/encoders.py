"""Utterance encoder and slot/value (schema) encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import CLS, InputSequence, Ontology, Vocab, tokenize
from .nn import AttentionConfig, Embedding, Module, TransformerBlock
from .tensor import Tensor


POSITIONAL_INIT_SCALE = 0.2


class EncoderInputError(ValueError):
    pass


@dataclass
class UtteranceEncoding:
    states: Tensor
    """``[L, d]`` (or ``[B, L, d]`` when batched)."""
    turn_slices: dict[int, tuple[int, int]]
    """Row index -> half-open token span; the last row is the [BLANK] pseudo-turn."""


@dataclass
class SchemaEncoding:
    slot_vectors: Tensor
    """``[J, d]``"""
    value_vectors: Tensor
    """``[U, d]`` over the unique candidate strings."""
    value_index: np.ndarray
    """``[J, Vmax]`` rows of ``value_vectors`` for each slot's candidates."""
    value_mask: np.ndarray
    value_names: list[list[str]]

    def candidates(self, j: int) -> Tensor:
        n = int(self.value_mask[j].sum())
        return self.value_vectors[self.value_index[j, :n]]


class UtteranceEncoder(Module):
    def __init__(self, vocab_size: int, d: int, heads: int, layers: int, max_len: int, max_turns: int,
                 rng: np.random.Generator, dropout: float = 0.0):
        self.token = Embedding(vocab_size, d, rng)
        # position/segment/turn tables start small so token identity dominates the input sum
        std = POSITIONAL_INIT_SCALE / np.sqrt(d)
        self.position = Embedding(max_len, d, rng, std)
        self.segment = Embedding(3, d, rng, std)
        self.turn = Embedding(max_turns + 2, d, rng, std)
        cfg = AttentionConfig(d, heads)
        self.layers = [TransformerBlock(cfg, rng, dropout) for _ in range(layers)]
        self.max_len = max_len
        self.max_turns = max_turns

    def embed(self, token_ids, turn_ids, segment_ids) -> Tensor:
        token_ids = np.asarray(token_ids)
        L = token_ids.shape[-1]
        if L > self.max_len:
            raise EncoderInputError(f"sequence length {L} exceeds configured maximum {self.max_len}")
        if np.max(turn_ids) > self.max_turns + 1:
            raise EncoderInputError(f"turn index {np.max(turn_ids)} exceeds max_turns={self.max_turns}")
        pos = np.arange(L)
        return self.token(token_ids) + self.position(pos) + self.segment(segment_ids) + self.turn(turn_ids)

    def __call__(self, token_ids, turn_ids, segment_ids, key_mask=None, rng=None) -> Tensor:
        """``key_mask``: ``[B, L]`` boolean, True for real tokens."""
        x = self.embed(token_ids, turn_ids, segment_ids)
        attn_mask = None if key_mask is None else np.asarray(key_mask)[..., None, None, :]
        for layer in self.layers:
            x = layer(x, attn_mask, rng)
        return x


class SchemaEncoder(Module):
    """Encodes ``[CLS] tokens`` and returns the [CLS] row.

    The token table is borrowed from the utterance encoder and is not
    owned (or frozen) here.
    """

    def __init__(self, token: Embedding, d: int, heads: int, layers: int, max_len: int,
                 rng: np.random.Generator):
        self._token = token
        self.position = Embedding(max_len, d, rng)
        cfg = AttentionConfig(d, heads)
        self.layers = [TransformerBlock(cfg, rng) for _ in range(layers)]
        self.max_len = max_len

    def encode_ids(self, sequences: list[list[int]]) -> Tensor:
        if any(len(s) == 0 for s in sequences):
            raise EncoderInputError("cannot encode an empty slot or value name")
        L = max(len(s) for s in sequences)
        if L > self.max_len:
            raise EncoderInputError(f"schema sequence length {L} exceeds {self.max_len}")
        ids = np.zeros((len(sequences), L), dtype=np.int64)
        mask = np.zeros((len(sequences), L), dtype=bool)
        for i, s in enumerate(sequences):
            ids[i, :len(s)] = s
            mask[i, :len(s)] = True
        x = self._token(ids) + self.position(np.arange(L))
        attn_mask = mask[:, None, None, :]
        for layer in self.layers:
            x = layer(x, attn_mask)
        return x[:, 0, :]


def schema_token_ids(text: str, vocab: Vocab) -> list[int]:
    ids = tokenize(text, vocab)
    if not ids:
        raise EncoderInputError(f"name {text!r} has no tokens")
    return [vocab[CLS]] + ids


def encode_utterances(seq: InputSequence, encoder: UtteranceEncoder) -> UtteranceEncoding:
    H = encoder(seq.token_ids[None], seq.turn_ids[None], seq.segment_ids[None])
    spans: dict[int, tuple[int, int]] = {}
    for pos, row in enumerate(seq.slice_ids):
        if row < 0:
            continue
        start, _ = spans.get(int(row), (pos, pos))
        spans[int(row)] = (start, pos + 1)
    return UtteranceEncoding(H[0], spans)


def encode_slot(name: str, encoder: SchemaEncoder, vocab: Vocab) -> Tensor:
    return encoder.encode_ids([schema_token_ids(name, vocab)])[0]


encode_value = encode_slot


def precompute_schema(ontology: Ontology, encoder: SchemaEncoder, vocab: Vocab) -> SchemaEncoding:
    """Slot vectors plus the vectors of every distinct candidate value."""
    uniq: list[str] = []
    pos: dict[str, int] = {}
    for s in ontology.slots:
        for v in ontology.values[s]:
            if v not in pos:
                pos[v] = len(uniq)
                uniq.append(v)
    seqs = [schema_token_ids(s, vocab) for s in ontology.slots] + [schema_token_ids(v, vocab) for v in uniq]
    out = encoder.encode_ids(seqs)
    J = len(ontology.slots)
    vmax = max(len(ontology.values[s]) for s in ontology.slots)
    index = np.zeros((J, vmax), dtype=np.int64)
    mask = np.zeros((J, vmax), dtype=bool)
    for j, s in enumerate(ontology.slots):
        vals = ontology.values[s]
        index[j, :len(vals)] = [pos[v] for v in vals]
        mask[j, :len(vals)] = True
    return SchemaEncoding(out[:J], out[J:], index, mask, [list(ontology.values[s]) for s in ontology.slots])


class SchemaCache:
    """Caches the schema encoding until :meth:`invalidate` is called.

    Frozen encoders are evaluated without building a graph.
    """

    def __init__(self, ontology: Ontology, encoder: SchemaEncoder, vocab: Vocab, frozen: bool):
        self.ontology = ontology
        self.encoder = encoder
        self.vocab = vocab
        self.frozen = frozen
        self._cached: SchemaEncoding | None = None

    def get(self) -> SchemaEncoding:
        if self._cached is None:
            if self.frozen:
                with T.no_grad():
                    self._cached = precompute_schema(self.ontology, self.encoder, self.vocab)
            else:
                self._cached = precompute_schema(self.ontology, self.encoder, self.vocab)
        return self._cached

    def invalidate(self) -> None:
        self._cached = None
