"""Gradient checks of the training losses on a tiny tracker instance."""

from __future__ import annotations

from dataclasses import dataclass

from . import alignment as A
from . import value_matcher as VM
from .config import TrainConfig
from .corpus import NONE, Dialogue, Ontology, Turn, Vocab
from .gradcheck import GradCheckReport, finite_diff_check
from .model import SlotTurnTracker, make_batch

TINY_ONTOLOGY = {
    "hotel-area": ["north", "south", "east"],
    "hotel-stars": ["2", "3", "4"],
    "restaurant-area": ["north", "south", "east"],
}

TINY_TURNS = [
    ("how can i help ?", "i need a hotel in the north with 3 stars .",
     {"hotel-area": "north", "hotel-stars": "3"}),
    ("the hotel is booked .", "i also want a restaurant in the south .",
     {"hotel-area": "north", "hotel-stars": "3", "restaurant-area": "south"}),
]

TINY_CONFIG = dict(d=16, heads=2, align_heads=2, encoder_layers=1, schema_layers=1, n_slot_sa=1,
                   n_turn_sa=1, max_seq_len=128, max_turns=4, dropout=0.0)

LOSSES = ("L_align", "L_order", "L_value", "L_joint")


@dataclass
class LossCheck:
    loss: str
    report: GradCheckReport


def tiny_instance(seed: int = 0, overrides: dict | None = None):
    """A d=16 tracker over 3 slots and a batch holding both turns of one 2-turn dialogue."""
    ontology = Ontology.from_dict(TINY_ONTOLOGY)
    turns = [Turn(i + 1, sys_, usr, {s: st.get(s, NONE) for s in ontology.slots})
             for i, (sys_, usr, st) in enumerate(TINY_TURNS)]
    dialogue = Dialogue("tiny", turns)
    vocab = Vocab.build([dialogue], ontology)
    config = TrainConfig(**dict(TINY_CONFIG, seed=seed, **(overrides or {})))
    model = SlotTurnTracker(config, vocab, ontology)
    batch = make_batch(model.examples(dialogue))
    return model, batch


def loss_fn(model: SlotTurnTracker, batch, name: str):
    from .trainer import joint_loss

    def f():
        model.invalidate_schema()
        if name == "L_joint":
            return joint_loss(batch, model)[0]
        out = model.forward(batch, train=True)
        if name == "L_align":
            return A.alignment_loss(out.align_logp, batch.label_rows).mean()
        if name == "L_order":
            return A.listmle_loss(out.rank_scores, batch.order).mean()
        if name == "L_value":
            return VM.value_loss(out.value_logp, batch.gold_values, out.value_mask).mean()
        raise ValueError(f"unknown loss {name!r}")
    return f


def check_loss_gradients(seed: int = 0, samples: int = 3, tol: float = 1e-3,
                         losses=LOSSES, overrides: dict | None = None) -> list[LossCheck]:
    """Finite-difference check of each loss w.r.t. every trainable parameter tensor.

    ``samples`` coordinates are drawn per parameter tensor.
    """
    model, batch = tiny_instance(seed, overrides)
    params = [p for p in model.parameters() if not p.frozen]
    out = []
    for i, name in enumerate(losses):
        report = finite_diff_check(loss_fn(model, batch, name), params, tol=tol, max_coords=samples,
                                   seed=seed + i)
        out.append(LossCheck(name, report))
    for p in params:
        p.grad = None
    return out


def format_report(checks: list[LossCheck]) -> str:
    lines = []
    for c in checks:
        r = c.report
        w = r.worst
        where = "-" if w is None else f"{w.param}{list(w.index)} analytic={w.analytic:.6e} numeric={w.numeric:.6e}"
        lines.append(f"{c.loss:8s} {'PASS' if r.passed else 'FAIL'} max_rel_err={r.max_rel_err:.3e} "
                     f"coords={r.checked} worst: {where}")
    return "\n".join(lines)


def all_passed(checks: list[LossCheck]) -> bool:
    return all(c.report.passed for c in checks)


