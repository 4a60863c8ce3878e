import random

import numpy as np
import pytest

from slotalign.evaluator import (EvalReport, alignment_accuracy, dialogue_alignment_accuracy, evaluate,
                                 joint_accuracy, per_turn_curve, predict, report_from_predictions, slot_accuracy)

from .oracles import naive_alignment, naive_joint, naive_slot


def test_joint_and_slot_trivial():
    gold = [{"a": "1", "b": "2"}, {"a": "1", "b": "none"}]
    assert joint_accuracy(gold, gold) == 1.0
    pred = [{"a": "1", "b": "2"}, {"a": "x", "b": "none"}]
    assert joint_accuracy(pred, gold) == 0.5
    assert slot_accuracy(pred, gold) == 0.75
    assert joint_accuracy([], []) == 0.0


def test_missing_prediction_raises():
    with pytest.raises(ValueError, match="missing"):
        joint_accuracy([{"a": "1"}], [{"a": "1", "b": "2"}])
    with pytest.raises(ValueError):
        slot_accuracy([], [{"a": "1"}])


def test_per_turn_curve_weighted_average_equals_joint():
    rng = random.Random(1)
    gold = [{"a": rng.choice("xy")} for _ in range(40)]
    pred = [{"a": rng.choice("xy")} for _ in range(40)]
    turns = [rng.randint(1, 5) for _ in range(40)]
    curve = per_turn_curve(turns, pred, gold)
    weighted = sum(n * acc for n, acc in curve.values()) / sum(n for n, _ in curve.values())
    assert weighted == pytest.approx(joint_accuracy(pred, gold), abs=1e-12)


def test_alignment_accuracy_examples():
    labels = [{"a": 1, "b": None}, {"a": 2, "b": None}]
    assert alignment_accuracy(labels, labels) == 1.0
    assert alignment_accuracy([{"a": 1, "b": 1}, {"a": 2, "b": None}], labels) == 0.75
    ids = ["d1", "d2"]
    assert dialogue_alignment_accuracy(ids, [{"a": 1, "b": 1}, {"a": 2, "b": None}], labels) == 0.5
    assert dialogue_alignment_accuracy(["d", "d"], [{"a": 1, "b": 1}, {"a": 2, "b": None}], labels) == 0.0


def _random_fixture(rng):
    slots = [f"s{i}" for i in range(rng.randint(1, 6))]
    n = rng.randint(1, 20)
    gold = [{s: rng.choice(["none", "a", "b"]) for s in slots} for _ in range(n)]
    pred = [{s: (g[s] if rng.random() < 0.7 else rng.choice(["none", "a", "b"])) for s in slots} for g in gold]
    glab = [{s: rng.choice([None, 1, 2, 3]) for s in slots} for _ in range(n)]
    plab = [{s: (g[s] if rng.random() < 0.7 else rng.choice([None, 1, 2, 3])) for s in slots} for g in glab]
    return pred, gold, plab, glab


def test_metrics_match_naive_recount():
    rng = random.Random(0)
    for _ in range(100):
        pred, gold, plab, glab = _random_fixture(rng)
        assert joint_accuracy(pred, gold) == naive_joint(pred, gold)
        assert slot_accuracy(pred, gold) == naive_slot(pred, gold)
        assert alignment_accuracy(plab, glab) == naive_alignment(plab, glab)


def test_metrics_invariant_to_turn_order():
    rng = random.Random(5)
    pred, gold, plab, glab = _random_fixture(rng)
    idx = list(range(len(gold)))
    rng.shuffle(idx)
    assert joint_accuracy([pred[i] for i in idx], [gold[i] for i in idx]) == pytest.approx(joint_accuracy(pred, gold))
    assert alignment_accuracy([plab[i] for i in idx], [glab[i] for i in idx]) == pytest.approx(
        alignment_accuracy(plab, glab))


def test_predict_covers_every_turn_and_slot(three_turn):
    from slotalign.config import TrainConfig
    from slotalign.corpus import Vocab
    from slotalign.diagnostics import TINY_CONFIG
    from slotalign.model import SlotTurnTracker

    dialogues, onto = three_turn
    model = SlotTurnTracker(TrainConfig(**TINY_CONFIG), Vocab.build(dialogues, onto), onto)
    preds = predict(model, dialogues, batch_size=2)
    assert [(p.dialogue_id, p.turn) for p in preds] == [("three-turn", 1), ("three-turn", 2), ("three-turn", 3)]
    for p in preds:
        assert set(p.values) == set(onto.slots)
        for s, v in p.values.items():
            assert v in onto.values[s]
            # BLANK-aligned slots are forced to "none"
            if p.aligned[s] is None:
                assert v == "none"
            assert 0.0 <= p.p_value[s] <= 1.0
            assert sum(p.p_align[s]) == pytest.approx(1.0)
    rep = report_from_predictions(preds)
    assert isinstance(rep, EvalReport) and rep.n_turns == 3 and rep.n_dialogues == 1
    again = evaluate(model, dialogues, batch_size=1)
    assert again.joint_accuracy == rep.joint_accuracy
    assert [p.values for p in again.predictions] == [p.values for p in preds]


def test_corruption_probe_runs(three_turn):
    from slotalign.config import TrainConfig
    from slotalign.corpus import Vocab
    from slotalign.diagnostics import TINY_CONFIG
    from slotalign.evaluator import corruption_probe
    from slotalign.model import SlotTurnTracker

    dialogues, onto = three_turn
    model = SlotTurnTracker(TrainConfig(**TINY_CONFIG), Vocab.build(dialogues, onto), onto)
    before, after = corruption_probe(model, dialogues[0], 3, "hotel-area", np.random.default_rng(0))
    assert before in onto.values["hotel-area"] and after in onto.values["hotel-area"]


def test_predict_without_alignment_module(three_turn):
    from slotalign.config import TrainConfig
    from slotalign.corpus import Vocab
    from slotalign.diagnostics import TINY_CONFIG
    from slotalign.model import SlotTurnTracker

    dialogues, onto = three_turn
    model = SlotTurnTracker(TrainConfig(**TINY_CONFIG, no_alignment_module=True), Vocab.build(dialogues, onto), onto)
    preds = predict(model, dialogues)
    assert len(preds) == 3 and all(p.aligned is None and p.p_align is None for p in preds)
    rep = report_from_predictions(preds)
    assert rep.alignment_accuracy is None and 0.0 <= rep.joint_accuracy <= 1.0
