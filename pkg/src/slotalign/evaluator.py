"""Turn-level prediction, accuracy metrics, per-turn curves and ablation runs."""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .corpus import Dialogue, Ontology
from .model import SlotTurnTracker, carry_rows, make_batch

log = logging.getLogger(__name__)


@dataclass
class TurnPrediction:
    dialogue_id: str
    turn: int
    values: dict[str, str]
    gold: dict[str, str]
    aligned: dict[str, int | None] | None
    """1-based aligned turn per slot, ``None`` for [BLANK]; ``None`` overall without an alignment module."""
    gold_aligned: dict[str, int | None]
    p_align: dict[str, list[float]] | None
    p_value: dict[str, float]

    def to_dict(self) -> dict:
        slots = {}
        for s, v in self.values.items():
            slots[s] = {"value": v,
                        "aligned_turn": None if self.aligned is None else self.aligned[s],
                        "p_align": None if self.p_align is None else self.p_align[s],
                        "p_value": self.p_value[s]}
        return {"dialogue_id": self.dialogue_id, "turn": self.turn, "slots": slots}


def _check_cover(pred: dict, gold: dict, where: str) -> None:
    missing = [s for s in gold if s not in pred]
    if missing:
        raise ValueError(f"missing prediction for {where}: slots {missing}")


def joint_accuracy(predictions: list[dict[str, str]], gold: list[dict[str, str]]) -> float:
    """Fraction of turns whose every slot value matches the gold state."""
    if len(predictions) != len(gold):
        raise ValueError(f"{len(predictions)} predictions for {len(gold)} gold turns")
    if not gold:
        return 0.0
    correct = 0
    for i, (p, g) in enumerate(zip(predictions, gold)):
        _check_cover(p, g, f"turn {i}")
        correct += all(p[s] == v for s, v in g.items())
    return correct / len(gold)


def slot_accuracy(predictions: list[dict[str, str]], gold: list[dict[str, str]]) -> float:
    """Fraction of (turn, slot) pairs predicted correctly."""
    if len(predictions) != len(gold):
        raise ValueError(f"{len(predictions)} predictions for {len(gold)} gold turns")
    hits = total = 0
    for i, (p, g) in enumerate(zip(predictions, gold)):
        _check_cover(p, g, f"turn {i}")
        hits += sum(p[s] == v for s, v in g.items())
        total += len(g)
    return hits / total if total else 0.0


def alignment_accuracy(predicted: list[dict[str, int | None]], labels: list[dict[str, int | None]]) -> float:
    """Fraction of (turn, slot) pairs aligned to the labelled turn ([BLANK] = ``None``)."""
    hits = total = 0
    for p, g in zip(predicted, labels, strict=True):
        for s, v in g.items():
            hits += p.get(s, -1) == v
            total += 1
    return hits / total if total else 0.0


def dialogue_alignment_accuracy(dialogue_ids: list[str], predicted: list[dict], labels: list[dict]) -> float:
    """Fraction of dialogues in which every slot of every turn is aligned correctly."""
    ok: dict[str, bool] = {}
    for did, p, g in zip(dialogue_ids, predicted, labels, strict=True):
        ok[did] = ok.get(did, True) and all(p.get(s, -1) == v for s, v in g.items())
    return sum(ok.values()) / len(ok) if ok else 0.0


def per_turn_curve(turns: list[int], predictions: list[dict], gold: list[dict]) -> dict[int, tuple[int, float]]:
    """Joint accuracy bucketed by turn depth: ``{depth: (count, accuracy)}``."""
    buckets: dict[int, list[int]] = defaultdict(list)
    for t, p, g in zip(turns, predictions, gold, strict=True):
        _check_cover(p, g, f"depth {t}")
        buckets[t].append(all(p[s] == v for s, v in g.items()))
    return {t: (len(v), sum(v) / len(v)) for t, v in sorted(buckets.items())}


@dataclass
class EvalReport:
    joint_accuracy: float
    slot_accuracy: float
    alignment_accuracy: float | None
    dialogue_alignment_accuracy: float | None
    per_turn_joint: dict[int, float]
    per_turn_counts: dict[int, int]
    n_turns: int
    n_dialogues: int
    predictions: list[TurnPrediction] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("predictions")
        d["per_turn_joint"] = {str(k): v for k, v in self.per_turn_joint.items()}
        d["per_turn_counts"] = {str(k): v for k, v in self.per_turn_counts.items()}
        return d

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_per_turn_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["depth", "n", "joint_acc"])
            for t in sorted(self.per_turn_joint):
                w.writerow([t, self.per_turn_counts[t], repr(self.per_turn_joint[t])])


def predict(model: SlotTurnTracker, dialogues: list[Dialogue], batch_size: int | None = None,
            soft: bool | None = None, keep_attention: bool = False,
            attention_sink: list | None = None, gold_previous: bool = False) -> list[TurnPrediction]:
    """Predict every turn, feeding each turn the alignments predicted at the previous turn.

    ``gold_previous`` feeds the labelled previous alignments instead (a diagnostic).

    Dialogues are batched per turn position; output order is dialogue order, then turn.
    """
    batch_size = batch_size or model.config.eval_batch_size
    slots = model.slots
    onto = model.ontology
    per_dialogue = [model.examples(d) for d in dialogues]
    results: dict[tuple[int, int], TurnPrediction] = {}
    prev_pred: dict[int, np.ndarray] = {}
    max_t = max((len(e) for e in per_dialogue), default=0)
    with T.no_grad():
        for k in range(max_t):
            active = [i for i, exs in enumerate(per_dialogue) if len(exs) > k]
            for lo in range(0, len(active), batch_size):
                chunk = active[lo:lo + batch_size]
                exs = [per_dialogue[i][k] for i in chunk]
                if gold_previous:
                    prev = np.stack([e.prev_rows for e in exs])
                elif k == 0 or model.config.no_alignment_module:
                    prev = np.full((len(chunk), len(slots)), -1, dtype=np.int64)
                else:
                    prev = np.stack([carry_rows(prev_pred[i], exs[n].turn - 1) for n, i in enumerate(chunk)])
                batch = make_batch(exs, prev_rows=prev)
                out = model.forward(batch, train=False, soft=soft, keep_attention=keep_attention)
                probs = model.value_probabilities(out)
                choice = probs.argmax(axis=-1)
                for n, i in enumerate(chunk):
                    ex = exs[n]
                    t = ex.turn
                    values = {s: onto.values[s][choice[n, j]] for j, s in enumerate(slots)}
                    p_value = {s: float(probs[n, j, choice[n, j]]) for j, s in enumerate(slots)}
                    aligned = p_align = None
                    if out.selected_rows is not None:
                        rows = out.selected_rows[n]
                        prev_pred[i] = rows
                        aligned = {s: (None if rows[j] == t else int(rows[j]) + 1) for j, s in enumerate(slots)}
                        pa = out.align_probs.data[n, :, :t + 1]
                        p_align = {s: [float(x) for x in pa[j]] for j, s in enumerate(slots)}
                    gold_aligned = {s: ex.label.target(s) for s in slots}
                    results[(i, k)] = TurnPrediction(ex.dialogue_id, t, values, dict(ex.gold_state), aligned,
                                                     gold_aligned, p_align, p_value)
                    if attention_sink is not None and keep_attention:
                        attention_sink.append(_attention_record(ex, n, out, slots))
    return [results[key] for key in sorted(results)]


def _attention_record(ex, n: int, out, slots: list[str]) -> dict:
    rec = {"dialogue_id": ex.dialogue_id, "turn": ex.turn, "slots": slots}
    t = ex.turn
    if out.align_probs is not None:
        rec["slot_turn_alignment"] = out.align_probs.data[n, :, :t + 1].tolist()
    if "token_slot" in out.attention:
        L = len(ex.seq)
        rec["slot_token_attention"] = out.attention["token_slot"][n, :, :, :L].mean(axis=0).tolist()
    if "slot_turn" in out.attention:
        # [heads, J(query slot), R, J(key slot)] averaged over heads
        rec["turn_slot_attention"] = out.attention["slot_turn"][n, :, :, :t + 1, :].mean(axis=0).tolist()
    return rec


def report_from_predictions(preds: list[TurnPrediction]) -> EvalReport:
    values = [p.values for p in preds]
    gold = [p.gold for p in preds]
    turns = [p.turn for p in preds]
    curve = per_turn_curve(turns, values, gold)
    has_align = bool(preds) and preds[0].aligned is not None
    return EvalReport(
        joint_accuracy=joint_accuracy(values, gold),
        slot_accuracy=slot_accuracy(values, gold),
        alignment_accuracy=alignment_accuracy([p.aligned for p in preds], [p.gold_aligned for p in preds])
        if has_align else None,
        dialogue_alignment_accuracy=dialogue_alignment_accuracy(
            [p.dialogue_id for p in preds], [p.aligned for p in preds], [p.gold_aligned for p in preds])
        if has_align else None,
        per_turn_joint={t: acc for t, (_, acc) in curve.items()},
        per_turn_counts={t: n for t, (n, _) in curve.items()},
        n_turns=len(preds),
        n_dialogues=len({p.dialogue_id for p in preds}),
        predictions=preds,
    )


def evaluate(model: SlotTurnTracker, dialogues: list[Dialogue], soft: bool | None = None,
             batch_size: int | None = None) -> EvalReport:
    return report_from_predictions(predict(model, dialogues, batch_size, soft))


def write_predictions(preds: list[TurnPrediction], path) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in preds], indent=1) + "\n")


# ---------------------------------------------------------------- ablations

ABLATIONS: dict[str, dict] = {
    "full": {},
    "no_ranking_task": {"no_ranking_task": True},
    "no_overall_slot_to_turn": {"no_overall_slot_to_turn": True},
    "no_alignment_module": {"no_alignment_module": True},
    "soft_alignment": {"soft_alignment": True},
}

ABLATION_COLUMNS = ["variant", "n_seeds", "joint_mean", "joint_spread", "slot_mean", "slot_spread",
                    "align_mean", "align_spread"]


@dataclass
class AblationRow:
    variant: str
    seeds: list[int]
    joint: list[float]
    slot: list[float]
    align: list[float | None]

    @staticmethod
    def _stats(xs):
        xs = [x for x in xs if x is not None]
        if not xs:
            return None, None
        return float(np.mean(xs)), float((max(xs) - min(xs)) / 2)

    def summary(self) -> dict:
        jm, js = self._stats(self.joint)
        sm, ss = self._stats(self.slot)
        am, as_ = self._stats(self.align)
        return {"variant": self.variant, "n_seeds": len(self.seeds), "joint_mean": jm, "joint_spread": js,
                "slot_mean": sm, "slot_spread": ss, "align_mean": am, "align_spread": as_}


def run_ablations(train_dialogues: list[Dialogue], eval_dialogues: list[Dialogue], ontology: Ontology,
                  base_config: TrainConfig, seeds=(0, 1, 2), out_dir=None,
                  variants: dict[str, dict] | None = None, dev_dialogues: list[Dialogue] | None = None
                  ) -> list[AblationRow]:
    """Train and evaluate each variant for each seed.

    With ``out_dir`` every finished (variant, seed) run is recorded in
    ``runs.jsonl`` and skipped on re-invocation, so an interrupted sweep
    resumes where it stopped; ``ablation.csv`` holds the summary table.
    """
    from .trainer import train

    variants = ABLATIONS if variants is None else variants
    out = Path(out_dir) if out_dir is not None else None
    done: dict[tuple[str, int], dict] = {}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        runs = out / "runs.jsonl"
        if runs.exists():
            for line in runs.read_text().splitlines():
                if line.strip():
                    r = json.loads(line)
                    done[(r["variant"], r["seed"])] = r
    rows = []
    for name, flags in variants.items():
        row = AblationRow(name, [], [], [], [])
        for seed in seeds:
            rec = done.get((name, seed))
            if rec is None:
                cfg = base_config.replace(seed=seed, **flags)
                res = train(train_dialogues, dev_dialogues if dev_dialogues is not None else eval_dialogues,
                            ontology, cfg)
                rep = evaluate(res.model, eval_dialogues)
                rec = {"variant": name, "seed": seed, "joint": rep.joint_accuracy, "slot": rep.slot_accuracy,
                       "align": rep.alignment_accuracy, "epochs": res.epochs_run}
                log.info("ablation %s seed %d: joint %.4f", name, seed, rep.joint_accuracy)
                if out is not None:
                    with open(out / "runs.jsonl", "a") as fh:
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
            row.seeds.append(seed)
            row.joint.append(rec["joint"])
            row.slot.append(rec["slot"])
            row.align.append(rec["align"])
        rows.append(row)
    if out is not None:
        write_ablation_csv(rows, out / "ablation.csv")
    return rows


def write_ablation_csv(rows: list[AblationRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(r.summary())


def corruption_probe(model: SlotTurnTracker, dialogue: Dialogue, turn: int, slot: str,
                     rng: np.random.Generator) -> tuple[str, str]:
    """Predicted value for ``slot`` at ``turn`` before and after scrambling every
    turn except the gold-aligned one (hard mode). Returns ``(before, after)``."""
    from .corpus import Turn

    ex = model.examples(dialogue)[turn - 1]
    target = ex.label.target(slot)
    vocab_words = [w for w in model.vocab.itos if w.isalpha()]
    turns = []
    for tr in dialogue.turns[:turn]:
        if tr.index == target:
            turns.append(tr)
        else:
            scramble = lambda text: " ".join(rng.choice(vocab_words) for _ in text.split())  # noqa: E731
            turns.append(Turn(tr.index, scramble(tr.system), scramble(tr.user), tr.state))
    corrupted = Dialogue(dialogue.id, turns)
    before = predict(model, [Dialogue(dialogue.id, dialogue.turns[:turn])], soft=False)[-1].values[slot]
    after = predict(model, [corrupted], soft=False)[-1].values[slot]
    return before, after
