"""Joint multi-task training loop with two learning-rate groups and early stopping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import alignment as A
from . import tensor as T
from . import value_matcher as VM
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import TrainConfig
from .corpus import Dialogue, Ontology, Vocab
from .model import Batch, Example, SlotTurnTracker, make_batch
from .optim import Adam, ParamGroup
from .tensor import Tensor

log = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "L_order", "L_align", "L_value", "L_joint", "lr"]


class TrainingDivergedError(FloatingPointError):
    """Raised when the training loss or its gradient stops being finite."""


@dataclass
class LossComponents:
    order: float
    align: float
    value: float
    joint: float


def joint_loss(batch: Batch, model: SlotTurnTracker, config: TrainConfig | None = None,
               out=None) -> tuple[Tensor, LossComponents]:
    """Sum of ordering, alignment and value losses averaged over the batch.

    Components switched off by ablation flags contribute exactly zero;
    without the alignment module only the value loss remains.
    """
    cfg = model.config if config is None else config
    if out is None:
        out = model.forward(batch, train=True)
    B = batch.size
    zero = Tensor(np.zeros(B))
    value = VM.value_loss(out.value_logp, batch.gold_values, out.value_mask)
    if cfg.no_alignment_module:
        order = align = zero
    else:
        align = A.alignment_loss(out.align_logp, batch.label_rows)
        order = zero if cfg.no_ranking_task else A.listmle_loss(out.rank_scores, batch.order)
    total = (order * cfg.weight_order + align * cfg.weight_align + value * cfg.weight_value).mean()
    comps = LossComponents(float(order.data.mean()), float(align.data.mean()),
                           float(value.data.mean()), float(total.data))
    return total, comps


def build_optimizer(model: SlotTurnTracker, total_steps: int) -> Adam:
    cfg = model.config
    enc = [p for p in model.encoder_parameters() if not p.frozen]
    rest = [p for p in model.other_parameters() if not p.frozen]
    opt = Adam([ParamGroup("encoder", enc, cfg.peak_lr_encoder), ParamGroup("rest", rest, cfg.peak_lr_rest)],
               total_steps, cfg.warmup_proportion)
    opt.init_state()
    return opt


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int,
                  lengths: np.ndarray | None = None, pool: int = 8) -> list[np.ndarray]:
    """Shuffled index batches; the permutation depends only on ``(seed, epoch)``.

    With ``lengths``, each window of ``pool`` batches is sorted by length
    before slicing (less padding), and the resulting batches are shuffled.
    """
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(n)
    if lengths is not None:
        window = batch_size * pool
        lengths = np.asarray(lengths)
        perm = np.concatenate([w[np.argsort(lengths[w], kind="stable")]
                               for w in (perm[i:i + window] for i in range(0, n, window))])
    batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if lengths is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


@dataclass
class TrainResult:
    model: SlotTurnTracker
    best_dev_joint: float
    best_epoch: int
    epochs_run: int
    global_step: int
    history: list[dict] = field(default_factory=list)
    dev_curve: list[float] = field(default_factory=list)


def _restore_optimizer(opt: Adam, arrays: dict, manifest: dict) -> None:
    for name in opt.state.m:
        opt.state.m[name] = arrays[f"adam_m/{name}"].copy()
        opt.state.v[name] = arrays[f"adam_v/{name}"].copy()
    opt.state.step = manifest["optimizer"]["step"]


def train(train_dialogues: list[Dialogue], dev_dialogues: list[Dialogue] | None, ontology: Ontology,
          config: TrainConfig, vocab: Vocab | None = None, out_dir=None, resume: bool = False,
          max_epochs: int | None = None) -> TrainResult:
    """Train a tracker; with ``out_dir`` writes ``loss_log.csv``, ``last.ckpt`` and ``best.ckpt``.

    ``resume`` continues from ``out_dir/last.ckpt`` (step counter, optimizer
    moments and best-so-far included). ``max_epochs`` stops early after that
    many epochs of this call (the schedule still assumes ``config.epochs``).
    """
    from .evaluator import evaluate

    config.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    start_epoch, global_step = 0, 0
    best, best_epoch, bad_epochs, dev_curve = -1.0, -1, 0, []
    if resume:
        if out is None or not (out / "last.ckpt").exists():
            raise FileNotFoundError("nothing to resume: last.ckpt not found in the output directory")
        model, manifest, arrays = load_checkpoint(out / "last.ckpt")
        vocab = model.vocab
        start_epoch, global_step = manifest["epoch"], manifest["global_step"]
        ex = manifest["extra"]
        best, best_epoch, bad_epochs, dev_curve = ex["best"], ex["best_epoch"], ex["bad_epochs"], ex["dev_curve"]
    else:
        if vocab is None:
            vocab = Vocab.build(train_dialogues, ontology)
        model = SlotTurnTracker(config, vocab, ontology)
        manifest = arrays = None

    examples: list[Example] = [e for d in train_dialogues for e in model.examples(d)]
    if not examples:
        raise ValueError("training corpus has no turns")
    lengths = np.array([len(e.seq) for e in examples])
    steps_per_epoch = math.ceil(len(examples) / config.batch_size)
    opt = build_optimizer(model, steps_per_epoch * config.epochs)
    if resume:
        _restore_optimizer(opt, arrays, manifest)

    log_path = out / "loss_log.csv" if out is not None else None
    if log_path is not None and not resume:
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOSS_COLUMNS)

    history: list[dict] = []
    epochs_run = 0
    best_params = {n: p.data.copy() for n, p in model.named_parameters()}
    if resume and (out / "best.ckpt").exists():
        _, best_arrays = read_checkpoint(out / "best.ckpt")
        best_params = {n: best_arrays[f"param/{n}"].copy() for n in best_params}
    for epoch in range(start_epoch, config.epochs):
        if max_epochs is not None and epochs_run >= max_epochs:
            break
        if bad_epochs >= config.patience:
            break
        model.invalidate_schema()
        rows = []
        for idx in epoch_batches(len(examples), config.batch_size, config.seed, epoch, lengths):
            batch = make_batch([examples[i] for i in idx])
            lr = opt.lr(opt.groups[-1])
            try:
                loss, comps = joint_loss(batch, model, config)
                opt.zero_grad()
                loss.backward()
            except T.NonFiniteError as e:
                raise TrainingDivergedError(f"non-finite value at step {global_step} (epoch {epoch}): {e}") from e
            bad = [p.name for p in model.parameters() if p.grad is not None and not np.isfinite(p.grad).all()]
            if bad:
                raise TrainingDivergedError(f"non-finite gradient at step {global_step} (epoch {epoch}) "
                                            f"for {bad[0]}")
            opt.step()
            if not config.freeze_schema_encoders:
                model.invalidate_schema()
            row = {"step": global_step, "L_order": comps.order, "L_align": comps.align,
                   "L_value": comps.value, "L_joint": comps.joint, "lr": lr}
            rows.append(row)
            global_step += 1
        history.extend(rows)
        if log_path is not None:
            with open(log_path, "a", newline="") as fh:
                w = csv.writer(fh)
                for r in rows:
                    w.writerow([r["step"]] + [repr(float(r[c])) for c in LOSS_COLUMNS[1:]])
        epochs_run += 1

        model.invalidate_schema()
        if dev_dialogues:
            score = evaluate(model, dev_dialogues).joint_accuracy
        else:
            score = -float(np.mean([r["L_joint"] for r in rows]))
        dev_curve.append(score)
        log.info("epoch %d: mean loss %.4f, dev score %.4f", epoch,
                 np.mean([r["L_joint"] for r in rows]), score)
        if best_epoch < 0 or score > best:
            best, best_epoch, bad_epochs = score, epoch, 0
            best_params = {n: p.data.copy() for n, p in model.named_parameters()}
            if out is not None:
                save_checkpoint(model, out / "best.ckpt", global_step=global_step, epoch=epoch + 1)
        else:
            bad_epochs += 1
        if out is not None:
            save_checkpoint(model, out / "last.ckpt", opt, global_step, epoch + 1,
                            extra={"best": best, "best_epoch": best_epoch, "bad_epochs": bad_epochs,
                                   "dev_curve": dev_curve})

    if best_epoch >= 0:
        for n, p in model.named_parameters():
            p.data = best_params[n]
        model.invalidate_schema()
    return TrainResult(model, best, best_epoch, epochs_run, global_step, history, dev_curve)
