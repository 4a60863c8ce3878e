import csv

import numpy as np
import pytest

from slotalign import alignment as A
from slotalign import value_matcher as VM
from slotalign.config import TrainConfig
from slotalign.diagnostics import TINY_CONFIG, tiny_instance
from slotalign.synthetic import generate_synthetic_corpus
from slotalign.tensor import Tensor
from slotalign.trainer import TrainingDivergedError, epoch_batches, joint_loss, train


def test_joint_loss_is_sum_of_components():
    model, batch = tiny_instance()
    total, comps = joint_loss(batch, model)
    assert comps.joint == pytest.approx(comps.order + comps.align + comps.value, abs=1e-12)
    assert float(total.data) == comps.joint


def test_joint_loss_zero_when_components_zero():
    model, batch = tiny_instance()
    out = model.forward(batch, train=True)
    # replace every distribution by a point mass on the gold answer
    B, J, R = out.align_logp.shape
    align = np.full((B, J, R), -np.inf)
    np.put_along_axis(align, batch.label_rows[..., None], 0.0, axis=-1)
    value = np.full(out.value_logp.shape, -np.inf)
    np.put_along_axis(value, batch.gold_values[..., None], 0.0, axis=-1)
    out.align_logp, out.value_logp = Tensor(align), Tensor(value)
    # scores 40 apart in the gold order leave only exp(-40)-sized ranking terms
    ranks = np.argsort(batch.order, axis=-1)
    out.rank_scores = Tensor(40.0 * (J - ranks).astype(float))
    _, comps = joint_loss(batch, model, out=out)
    assert comps.align == 0.0 and comps.value == 0.0
    assert comps.order == pytest.approx(0.0, abs=1e-15) and comps.joint == pytest.approx(0.0, abs=1e-15)


def test_no_ranking_task_drops_the_order_term():
    model, batch = tiny_instance(overrides={"no_ranking_task": True})
    out = model.forward(batch, train=True)
    _, comps = joint_loss(batch, model, out=out)
    align = A.alignment_loss(out.align_logp, batch.label_rows).data.mean()
    value = VM.value_loss(out.value_logp, batch.gold_values, out.value_mask).data.mean()
    assert comps.order == 0.0
    assert comps.joint == pytest.approx(align + value, abs=1e-12)


def test_no_alignment_module_keeps_only_value_loss():
    model, batch = tiny_instance(overrides={"no_alignment_module": True})
    _, comps = joint_loss(batch, model)
    assert comps.order == 0.0 and comps.align == 0.0 and comps.joint == comps.value > 0


def test_gradient_is_linear_in_loss_weights():
    grads = {}
    for w in (1.0, 2.0):
        model, batch = tiny_instance(overrides={"weight_order": w, "weight_align": w, "weight_value": w})
        loss, _ = joint_loss(batch, model)
        loss.backward()
        grads[w] = {n: p.grad.copy() for n, p in model.named_parameters() if p.grad is not None}
    for n in grads[1.0]:
        np.testing.assert_allclose(grads[2.0][n], 2 * grads[1.0][n], rtol=1e-10, atol=1e-14)


def test_shuffling_depends_only_on_seed_and_epoch():
    a = epoch_batches(50, 8, seed=3, epoch=2)
    b = epoch_batches(50, 8, seed=3, epoch=2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, epoch_batches(50, 8, seed=3, epoch=3)))
    flat = np.sort(np.concatenate(a))
    np.testing.assert_array_equal(flat, np.arange(50))
    lengths = np.arange(50)[::-1]
    bucketed = epoch_batches(50, 8, 3, 2, lengths)
    np.testing.assert_array_equal(np.sort(np.concatenate(bucketed)), np.arange(50))


@pytest.fixture(scope="module")
def small_corpus():
    dialogues, onto = generate_synthetic_corpus(11, 20)
    return dialogues, onto


def _cfg(**kw):
    return TrainConfig(**dict(TINY_CONFIG, batch_size=8, max_turns=8, peak_lr_encoder=3e-3,
                            peak_lr_rest=3e-3, **kw))


def test_two_epoch_smoke_reduces_loss(small_corpus, tmp_path):
    dialogues, onto = small_corpus
    res = train(dialogues, None, onto, _cfg(epochs=2), out_dir=tmp_path)
    first = np.mean([r["L_joint"] for r in res.history[:3]])
    last = np.mean([r["L_joint"] for r in res.history[-3:]])
    assert last < first
    rows = list(csv.DictReader(open(tmp_path / "loss_log.csv")))
    assert len(rows) == res.global_step == len(res.history)
    assert list(rows[0]) == ["step", "L_order", "L_align", "L_value", "L_joint", "lr"]
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()


def test_resume_continues_step_counter_and_matches_uninterrupted(small_corpus, tmp_path):
    dialogues, onto = small_corpus
    cfg = _cfg(epochs=3)
    full = train(dialogues, None, onto, cfg, out_dir=tmp_path / "full")
    part = train(dialogues, None, onto, cfg, out_dir=tmp_path / "part", max_epochs=1)
    resumed = train(dialogues, None, onto, cfg, out_dir=tmp_path / "part", resume=True)
    assert resumed.global_step == full.global_step
    assert resumed.history[0]["step"] == part.global_step
    assert (tmp_path / "full" / "loss_log.csv").read_bytes() == (tmp_path / "part" / "loss_log.csv").read_bytes()


def test_resume_without_checkpoint(small_corpus, tmp_path):
    dialogues, onto = small_corpus
    with pytest.raises(FileNotFoundError):
        train(dialogues, None, onto, _cfg(epochs=1), out_dir=tmp_path, resume=True)


def test_frozen_schema_flag_keeps_schema_weights(small_corpus):
    dialogues, onto = small_corpus
    res = train(dialogues[:4], None, onto, _cfg(epochs=1, freeze_schema_encoders=True))
    from slotalign.model import SlotTurnTracker
    from slotalign.corpus import Vocab
    fresh = SlotTurnTracker(_cfg(epochs=1, freeze_schema_encoders=True), Vocab.build(dialogues[:4], onto), onto)
    for (n, p), (_, q) in zip(res.model.schema_encoder.named_parameters(), fresh.schema_encoder.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(small_corpus):
    dialogues, onto = small_corpus
    from slotalign import tensor as T
    with T.broken_backward("matmul", float("inf")):
        with pytest.raises(TrainingDivergedError, match="step 0"):
            train(dialogues[:2], None, onto, _cfg(epochs=1))
