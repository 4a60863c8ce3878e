"""Dialogue data model, corpus JSON I/O, tokenization and label derivation.

Corpus file schema::

    {"dialogues": [{"id": "...",
                    "turns": [{"system": "...", "user": "...",
                               "state": {"domain-slot": "value"}}]}]}

``state`` is the cumulative dialogue state after the turn; slots absent
from it are "none". The ontology is a separate file ``{slot: [values]}``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NONE = "none"
DONTCARE = "dontcare"

PAD, UNK, CLS, SEP, BLANK_TOKEN = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BLANK]"
RESERVED = (PAD, UNK, CLS, SEP, BLANK_TOKEN)

SEG_SPECIAL, SEG_USER, SEG_SYSTEM = 0, 1, 2

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class CorpusError(ValueError):
    """Malformed corpus or ontology data."""


class SchemaError(CorpusError):
    """Data inconsistent with the ontology."""


class InputTooLongError(ValueError):
    pass


@dataclass
class Turn:
    index: int
    system: str
    user: str
    state: dict[str, str] = field(default_factory=dict)

    def value(self, slot: str) -> str:
        return self.state.get(slot, NONE)


@dataclass
class Dialogue:
    id: str
    turns: list[Turn]

    @property
    def domains(self) -> set[str]:
        return {slot.split("-", 1)[0] for t in self.turns for slot, v in t.state.items() if v != NONE}

    def __len__(self) -> int:
        return len(self.turns)


@dataclass
class Ontology:
    slots: list[str]
    values: dict[str, list[str]]

    def __post_init__(self):
        if len(set(self.slots)) != len(self.slots):
            raise SchemaError("duplicate slot names in ontology")
        self.slots = sorted(self.slots)
        for s in self.slots:
            vals = self.values.setdefault(s, [])
            if NONE not in vals:
                vals.append(NONE)

    @classmethod
    def from_dict(cls, raw: dict[str, list[str]]) -> "Ontology":
        return cls(list(raw), {k: list(v) for k, v in raw.items()})

    def to_dict(self) -> dict[str, list[str]]:
        return {s: list(self.values[s]) for s in self.slots}

    def candidates(self, slot: str) -> list[str]:
        return self.values[slot]

    def slot_index(self, slot: str) -> int:
        return self.slots.index(slot)

    def __len__(self) -> int:
        return len(self.slots)


@dataclass
class AlignmentLabel:
    """Gold alignment for prediction at ``turn``: slot -> turn index, absent means BLANK."""

    turn: int
    targets: dict[str, int]

    def target(self, slot: str) -> int | None:
        return self.targets.get(slot)


# JSON I/O


def _load_json(path: Path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        lines = text.splitlines()
        context = lines[e.lineno - 1] if 0 < e.lineno <= len(lines) else ""
        raise CorpusError(f"{path}:{e.lineno}:{e.colno}: {e.msg}\n    {context}") from e


def load_ontology(path) -> Ontology:
    raw = _load_json(Path(path))
    if not isinstance(raw, dict) or not all(isinstance(v, list) for v in raw.values()):
        raise CorpusError(f"{path}: ontology must map slot names to value lists")
    return Ontology.from_dict(raw)


def parse_dialogues(raw, ontology: Ontology) -> list[Dialogue]:
    if not isinstance(raw, dict) or not isinstance(raw.get("dialogues"), list):
        raise CorpusError('corpus must be an object with a "dialogues" list')
    known = set(ontology.slots)
    dialogues = []
    for d_i, d in enumerate(raw["dialogues"]):
        try:
            did = str(d["id"])
            raw_turns = d["turns"]
        except (KeyError, TypeError) as e:
            raise CorpusError(f"dialogue #{d_i}: missing field {e}") from e
        turns = []
        for t_i, t in enumerate(raw_turns, start=1):
            try:
                state = dict(t.get("state", {}))
                turn = Turn(t_i, str(t["system"]), str(t["user"]),
                            {k: str(v) for k, v in state.items() if str(v) != NONE})
            except (KeyError, TypeError, AttributeError) as e:
                raise CorpusError(f"dialogue {did} turn {t_i}: malformed turn ({e})") from e
            for slot, value in turn.state.items():
                if slot not in known:
                    raise SchemaError(f"dialogue {did} turn {t_i}: unknown slot {slot!r}")
                cands = ontology.values[slot]
                if value not in cands:
                    if value == DONTCARE:
                        cands.append(DONTCARE)
                    else:
                        raise SchemaError(
                            f"dialogue {did} turn {t_i}: value {value!r} not in ontology for {slot}")
            turns.append(turn)
        dialogues.append(Dialogue(did, turns))
    return dialogues


def load_multiwoz(path, ontology_path=None) -> tuple[list[Dialogue], Ontology]:
    """Read a corpus file and its ontology (default: ``ontology.json`` beside it)."""
    path = Path(path)
    ontology_path = Path(ontology_path) if ontology_path else path.with_name("ontology.json")
    ontology = load_ontology(ontology_path)
    return parse_dialogues(_load_json(path), ontology), ontology


def dialogues_to_dict(dialogues: Iterable[Dialogue]) -> dict:
    return {"dialogues": [
        {"id": d.id,
         "turns": [{"system": t.system, "user": t.user, "state": dict(sorted(t.state.items()))}
                   for t in d.turns]}
        for d in dialogues]}


def save_corpus(dialogues: Sequence[Dialogue], ontology: Ontology, path) -> None:
    path = Path(path)
    path.write_text(json.dumps(dialogues_to_dict(dialogues), indent=1) + "\n")
    path.with_name("ontology.json").write_text(json.dumps(ontology.to_dict(), indent=1) + "\n")


# tokenization


def tokenize_text(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, self.stoi[UNK])

    @classmethod
    def build(cls, dialogues: Iterable[Dialogue], ontology: Ontology) -> "Vocab":
        words: set[str] = set()
        for d in dialogues:
            for t in d.turns:
                words.update(tokenize_text(t.user))
                words.update(tokenize_text(t.system))
        for s in ontology.slots:
            words.update(tokenize_text(s))
            for v in ontology.values[s]:
                words.update(tokenize_text(v))
        return cls(sorted(words))


def tokenize(text: str, vocab: Vocab) -> list[int]:
    return [vocab[t] for t in tokenize_text(text)]


# alignment labels and slot ordering


def derive_alignment_labels(dialogue: Dialogue, policy: str = "last") -> list[AlignmentLabel]:
    """Gold turn per slot for every prediction point.

    ``last``: the most recent turn i <= t where the slot's value changed.
    ``first``: the earliest change within the slot's current non-"none" run.
    Slots whose value at t is "none" are BLANK (absent from ``targets``).
    """
    if policy not in ("last", "first"):
        raise ValueError(f"unknown alignment policy {policy!r}")
    labels = []
    last_change: dict[str, int] = {}
    run_start: dict[str, int] = {}
    prev: dict[str, str] = {}
    for turn in dialogue.turns:
        slots = set(prev) | set(turn.state)
        for s in slots:
            cur = turn.value(s)
            before = prev.get(s, NONE)
            if cur != before:
                last_change[s] = turn.index
                if before == NONE:
                    run_start[s] = turn.index
        prev = {s: v for s, v in turn.state.items() if v != NONE}
        chosen = last_change if policy == "last" else run_start
        labels.append(AlignmentLabel(turn.index, {s: chosen[s] for s in prev}))
    return labels


def order_slots(label: AlignmentLabel, slots: Sequence[str]) -> list[str]:
    """Slots grouped by aligned turn (ascending), lexicographic within a turn, BLANK slots last."""
    by_turn: dict[int, list[str]] = {}
    blank = []
    for s in slots:
        tgt = label.target(s)
        if tgt is None:
            blank.append(s)
        else:
            by_turn.setdefault(tgt, []).append(s)
    order: list[str] = []
    for t in range(1, label.turn + 1):
        order.extend(sorted(by_turn.get(t, [])))
    order.extend(sorted(blank))
    return order


# model inputs


@dataclass
class InputSequence:
    token_ids: np.ndarray
    turn_ids: np.ndarray
    segment_ids: np.ndarray
    slice_ids: np.ndarray
    """Row index for the slot-to-turn slices: turn i -> i-1, [BLANK] -> t, [CLS]/[SEP] -> -1."""
    turn: int
    first_turn: int

    def __len__(self) -> int:
        return len(self.token_ids)


def build_input_sequence(dialogue: Dialogue, t: int, vocab: Vocab, max_len: int = 512) -> InputSequence:
    """``[CLS] Q_1 R_1 ... Q_t R_t [SEP] [BLANK]``, dropping whole oldest turns past ``max_len``."""
    if not 1 <= t <= len(dialogue.turns):
        raise ValueError(f"turn {t} outside 1..{len(dialogue.turns)}")
    per_turn = []
    for turn in dialogue.turns[:t]:
        q = tokenize(turn.user, vocab)
        r = tokenize(turn.system, vocab)
        per_turn.append((turn.index, q, r))
    budget = max_len - 3
    if len(per_turn[-1][1]) + len(per_turn[-1][2]) > budget:
        raise InputTooLongError(f"turn {t} of dialogue {dialogue.id} alone exceeds max length {max_len}")
    start = 0
    total = sum(len(q) + len(r) for _, q, r in per_turn)
    while total > budget:
        total -= len(per_turn[start][1]) + len(per_turn[start][2])
        start += 1
    toks, turns, segs, slices = [vocab[CLS]], [0], [SEG_SPECIAL], [-1]
    for idx, q, r in per_turn[start:]:
        toks += q + r
        turns += [idx] * (len(q) + len(r))
        segs += [SEG_USER] * len(q) + [SEG_SYSTEM] * len(r)
        slices += [idx - 1] * (len(q) + len(r))
    toks += [vocab[SEP], vocab[BLANK_TOKEN]]
    turns += [t, t + 1]
    segs += [SEG_SPECIAL, SEG_SPECIAL]
    slices += [-1, t]
    return InputSequence(np.array(toks), np.array(turns), np.array(segs), np.array(slices), t, start + 1)
