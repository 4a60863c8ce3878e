import numpy as np
import pytest

from slotalign.config import TrainConfig
from slotalign.corpus import Dialogue, Turn, Vocab, build_input_sequence
from slotalign.diagnostics import TINY_CONFIG, tiny_instance
from slotalign.encoders import (EncoderInputError, SchemaEncoder, UtteranceEncoder, encode_slot, encode_utterances,
                                precompute_schema)
from slotalign.nn import Embedding
from slotalign.tensor import no_grad


def _encoder(layers=1, d=8):
    return UtteranceEncoder(20, d, 2, layers, 32, 4, np.random.default_rng(0))


def test_output_shapes():
    enc = _encoder()
    ids = np.array([[1, 5, 6, 2, 4, 0]])
    out = enc(ids, np.array([[0, 1, 1, 1, 2, 0]]), np.array([[0, 1, 2, 0, 0, 0]]),
              np.array([[True] * 5 + [False]]))
    assert out.shape == (1, 6, 8)


def test_zero_layers_is_embedding_sum():
    enc = _encoder(layers=0)
    ids, turns, segs = np.array([3, 4, 5]), np.array([0, 1, 2]), np.array([0, 1, 2])
    out = enc(ids, turns, segs).data
    expected = (enc.token.weight.data[ids] + enc.position.weight.data[:3] + enc.segment.weight.data[segs]
                + enc.turn.weight.data[turns])
    np.testing.assert_array_equal(out, expected)


def test_turn_order_changes_encoding():
    vocab = Vocab(["a", "b", "c", "d"])
    d1 = Dialogue("x", [Turn(1, "a", "b", {}), Turn(2, "c", "d", {})])
    d2 = Dialogue("x", [Turn(1, "c", "d", {}), Turn(2, "a", "b", {})])
    enc = UtteranceEncoder(len(vocab), 8, 2, 1, 32, 4, np.random.default_rng(0))
    e1 = encode_utterances(build_input_sequence(d1, 2, vocab), enc)
    e2 = encode_utterances(build_input_sequence(d2, 2, vocab), enc)
    assert e1.turn_slices == {0: (1, 3), 1: (3, 5), 2: (6, 7)}
    assert not np.allclose(e1.states.data, e2.states.data)


def test_too_long_and_too_many_turns():
    enc = _encoder()
    with pytest.raises(EncoderInputError, match="exceeds"):
        enc(np.zeros(40, dtype=int), np.zeros(40, dtype=int), np.zeros(40, dtype=int))
    with pytest.raises(EncoderInputError, match="max_turns"):
        enc(np.zeros(3, dtype=int), np.array([0, 1, 9]), np.zeros(3, dtype=int))


def test_schema_encoder_rejects_empty_names():
    vocab = Vocab(["x"])
    enc = SchemaEncoder(Embedding(len(vocab), 8, np.random.default_rng(0)), 8, 2, 1, 32, np.random.default_rng(1))
    with pytest.raises(EncoderInputError):
        encode_slot("", enc, vocab)
    with pytest.raises(EncoderInputError):
        enc.encode_ids([[]])


def test_schema_vectors_shape_and_candidates():
    model, _ = tiny_instance()
    sch = model.schema()
    J = len(model.slots)
    assert sch.slot_vectors.shape == (J, TINY_CONFIG["d"])
    for j, s in enumerate(model.slots):
        assert sch.value_names[j] == model.ontology.values[s]
        assert sch.candidates(j).shape == (len(model.ontology.values[s]), TINY_CONFIG["d"])
    # identical strings share one vector ("north" appears under two area slots)
    assert sch.value_vectors.shape[0] == len({v for s in model.slots for v in model.ontology.values[s]})


def test_schema_cache_hit_and_invalidate():
    model, _ = tiny_instance()
    first = model.schema()
    assert model.schema() is first
    model.invalidate_schema()
    again = model.schema()
    assert again is not first
    np.testing.assert_array_equal(again.slot_vectors.data, first.slot_vectors.data)


def test_frozen_schema_encoder_is_not_trained():
    model, batch = tiny_instance(overrides={"freeze_schema_encoders": True})
    frozen = {n: p.data.copy() for n, p in model.schema_encoder.named_parameters()}
    assert all(p.frozen for p in model.schema_encoder.parameters())
    from slotalign.trainer import build_optimizer, joint_loss
    opt = build_optimizer(model, 10)
    for _ in range(3):
        loss, _ = joint_loss(batch, model)
        opt.zero_grad()
        loss.backward()
        opt.step()
    for n, p in model.schema_encoder.named_parameters():
        np.testing.assert_array_equal(p.data, frozen[n])
    # the shared token table still trains through the utterance encoder
    assert not model.utterance.token.weight.frozen


def test_precompute_is_deterministic_without_grad():
    model, _ = tiny_instance()
    with no_grad():
        a = precompute_schema(model.ontology, model.schema_encoder, model.vocab)
        b = precompute_schema(model.ontology, model.schema_encoder, model.vocab)
    np.testing.assert_array_equal(a.value_vectors.data, b.value_vectors.data)
