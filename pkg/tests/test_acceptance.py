"""Acceptance suite: one recorded PASS/FAIL line per criterion (see the terminal summary).

The learnability, hard/soft and ablation criteria train real models on the
synthetic corpus and take several minutes each on one core.
"""

import json
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest

from slotalign.checkpoint import load_checkpoint, save_checkpoint
from slotalign.cli import main
from slotalign.config import TrainConfig
from slotalign.corpus import Vocab, derive_alignment_labels, order_slots, AlignmentLabel
from slotalign.diagnostics import all_passed, check_loss_gradients, tiny_instance
from slotalign.evaluator import (alignment_accuracy, evaluate, joint_accuracy, run_ablations, slot_accuracy)
from slotalign.alignment import listmle_loss
from slotalign.synthetic import generate_synthetic_corpus, has_confusion_pair
from slotalign.tensor import Tensor
from slotalign.trainer import train

from .oracles import (reference_slot_order, naive_alignment, naive_joint, naive_slot, plackett_luce_nll,
                      plackett_luce_nll_bruteforce)
from .test_evaluator import _random_fixture

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.json"
pytestmark = pytest.mark.acceptance


def test_gradient_correctness(criterion, capsys):
    start = time.perf_counter()
    code = main(["grad-check"])
    elapsed = time.perf_counter() - start
    checks = check_loss_gradients()
    worst = max(c.report.max_rel_err for c in checks)
    ok = code == 0 and all_passed(checks) and worst < 1e-3 and elapsed < 60
    criterion("gradient correctness", ok,
              f"max relative error {worst:.2e} over {[c.loss for c in checks]}, cmd runtime {elapsed:.1f}s")


def test_ordering_oracle(three_turn, criterion):
    dialogues, onto = three_turn
    order = order_slots(derive_alignment_labels(dialogues[0])[2], onto.slots)
    expected = ["restaurant-area", "restaurant-pricerange", "hotel-parking", "hotel-stars", "hotel-area",
                "hotel-type"]
    rng = random.Random(2024)
    mismatches = 0
    for _ in range(1000):
        slots = rng.sample([f"{d}-{s}" for d in "abcdefg" for s in "pqrstuv"], rng.randint(1, 15))
        t = rng.randint(1, 10)
        targets = {s: rng.randint(1, t) for s in slots if rng.random() < 0.6}
        mismatches += order_slots(AlignmentLabel(t, targets), slots) != reference_slot_order(t, targets, slots)
    ok = order[:6] == expected and mismatches == 0
    criterion("ordering oracle", ok, f"three-turn fixture order {order[:6]}, {mismatches}/1000 random mismatches")


def test_listmle_oracle(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    n = 0
    for J in range(1, 7):
        for _ in range(40):
            scores = rng.normal(0, 3, size=J)
            order = rng.permutation(J)
            got = float(listmle_loss(Tensor(scores), order).data)
            worst = max(worst, abs(got - plackett_luce_nll_bruteforce(list(scores), list(order))),
                        abs(got - plackett_luce_nll(list(scores), list(order))))
            n += 1
    criterion("ListMLE oracle", worst <= 1e-10, f"{n} instances J<=6, max abs deviation {worst:.2e}")


def test_metric_oracles(criterion):
    rng = random.Random(99)
    bad = 0
    for _ in range(100):
        pred, gold, plab, glab = _random_fixture(rng)
        bad += joint_accuracy(pred, gold) != naive_joint(pred, gold)
        bad += slot_accuracy(pred, gold) != naive_slot(pred, gold)
        bad += alignment_accuracy(plab, glab) != naive_alignment(plab, glab)
    criterion("metric oracles", bad == 0, f"{bad} mismatches over 100 fixtures x 3 metrics")


# ------------------------------------------------------------------ trained model

@pytest.fixture(scope="module")
def synthetic_split():
    dialogues, onto = generate_synthetic_corpus(0, 250)
    return dialogues[:200], dialogues[200:], onto


@pytest.fixture(scope="module")
def trained(synthetic_split):
    tr, ev, onto = synthetic_split
    config = TrainConfig.from_json(DESK_CONFIG)
    start = time.perf_counter()
    res = train(tr, None, onto, config, vocab=Vocab.build(tr + ev, onto))
    return res, time.perf_counter() - start


def test_synthetic_learnability(synthetic_split, trained, criterion):
    tr, ev, onto = synthetic_split
    res, elapsed = trained
    confusion = sum(map(has_confusion_pair, tr + ev)) / len(tr + ev)
    rep = evaluate(res.model, ev)
    ok = (rep.joint_accuracy >= 0.95 and rep.alignment_accuracy >= 0.95 and res.epochs_run <= 30
          and elapsed < 15 * 60 and len(onto.slots) == 9 and confusion >= 0.2)
    criterion("synthetic learnability", ok,
              f"eval joint {rep.joint_accuracy:.4f}, alignment {rep.alignment_accuracy:.4f} after "
              f"{res.epochs_run} epochs in {elapsed / 60:.1f} min ({len(onto.slots)} slots, "
              f"{confusion:.0%} confusion dialogues)")


def test_hard_soft_consistency(synthetic_split, trained, criterion):
    _, ev, _ = synthetic_split
    model, batch = tiny_instance(seed=5)
    B, J = batch.label_rows.shape
    R = batch.n_rows
    rng = np.random.default_rng(0)
    rows = np.stack([rng.integers(0, t + 1, size=J) for t in batch.turns])
    onehot = np.eye(R)[rows] * batch.row_mask[:, None, :]
    hard = model.forward(batch, train=False, soft=False, inject_alignment=onehot).value_logp.data
    soft = model.forward(batch, train=False, soft=True, inject_alignment=onehot).value_logp.data
    diff = float(np.max(np.abs(hard - soft)))
    res, _ = trained
    gap = abs(evaluate(res.model, ev, soft=False).joint_accuracy - evaluate(res.model, ev, soft=True).joint_accuracy)
    criterion("hard/soft consistency", diff <= 1e-12 and gap <= 0.03,
              f"one-hot max |hard - soft| {diff:.1e}; trained joint gap {100 * gap:.2f} points")


def test_determinism(tmp_path, criterion):
    dialogues, onto = generate_synthetic_corpus(4, 16)
    cfg = TrainConfig.from_json(DESK_CONFIG).replace(epochs=2)
    for run in ("a", "b"):
        train(dialogues[:12], dialogues[12:], onto, cfg, vocab=Vocab.build(dialogues, onto), out_dir=tmp_path / run)
    same = {f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("loss_log.csv", "best.ckpt", "last.ckpt")}
    criterion("determinism", all(same.values()), f"bitwise identical: {same}")


def test_checkpoint_round_trip(tmp_path, criterion):
    model, batch = tiny_instance(seed=8)
    save_checkpoint(model, tmp_path / "m.ckpt")
    again, _, _ = load_checkpoint(tmp_path / "m.ckpt")
    a = model.forward(batch, train=False)
    b = again.forward(batch, train=False)
    same = all(x.data.tobytes() == y.data.tobytes()
               for x, y in [(a.value_logp, b.value_logp), (a.align_logp, b.align_logp),
                            (a.rank_scores, b.rank_scores), (a.D, b.D)])
    criterion("checkpoint round-trip", same, "forward outputs bitwise identical after save/load")


# ------------------------------------------------------------------ ablations

def test_ablation_direction(synthetic_split, tmp_path_factory, criterion):
    tr, ev, onto = synthetic_split
    config = TrainConfig.from_json(DESK_CONFIG)
    variants = {"full": {}, "no_ranking_task": {"no_ranking_task": True},
                "no_overall_slot_to_turn": {"no_overall_slot_to_turn": True},
                "no_alignment_module": {"no_alignment_module": True}}
    out = Path(tmp_path_factory.mktemp("ablation"))
    rows = {r.variant: r.summary()["joint_mean"]
            for r in run_ablations(tr, ev, onto, config, seeds=(0, 1, 2), out_dir=out, variants=variants,
                                   dev_dialogues=[])}
    tol = 0.01
    full, nr, no, na = (rows[k] for k in variants)
    ok = full >= nr - tol and full >= no - tol and no >= na - tol
    criterion("ablation direction", ok,
              "mean joint over 3 seeds: " + ", ".join(f"{k} {v:.4f}" for k, v in rows.items()))
