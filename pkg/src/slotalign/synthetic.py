"""Templated multi-domain dialogue generator.

Every turn sets or updates zero to three slots, and each newly set value
is mentioned literally in that turn's user utterance. A share of the
dialogues set the same kind of slot (e.g. ``area``) for two domains in
different turns, so a tracker that reads the whole history can pick up
the wrong domain's value.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dialogue, Ontology, Turn, tokenize_text


class GeneratorConfigError(ValueError):
    pass


DEFAULT_SPEC = {
    "domains": {
        "restaurant": {
            "area": ["centre", "north", "south", "east", "west"],
            "food": ["indian", "italian", "chinese", "korean", "french", "thai"],
            "pricerange": ["cheap", "moderate", "expensive", "luxury"],
        },
        "hotel": {
            "area": ["centre", "north", "south", "east", "west"],
            "pricerange": ["cheap", "moderate", "expensive", "luxury"],
            "stars": ["2", "3", "4", "5"],
        },
        "attraction": {
            "area": ["centre", "north", "south", "east", "west"],
            "type": ["museum", "park", "theatre", "gallery", "cinema"],
            "day": ["monday", "tuesday", "wednesday", "thursday", "friday"],
        },
    },
    "confusion_rate": 0.4,
    "min_turns": 3,
    "max_turns": 8,
}

# {d} domain keyword, {v} value; noun phrases take an opener, sentences stand alone
SET_PHRASES = {
    "area": ["a {d} in the {v}", "a {d} around the {v} area"],
    "food": ["a {d} serving {v} food", "some {v} food at a {d}"],
    "pricerange": ["a {v} {d}", "a {d} in the {v} price range"],
    "stars": ["a {d} with {v} stars"],
    "type": ["a {v} {d}"],
    "day": ["a {d} open on {v}"],
}
SET_SENTENCES = {
    "area": ["the {d} should be in the {v} part of town"],
    "food": ["the {d} should serve {v} food"],
    "pricerange": ["the {d} should be {v} priced"],
    "stars": ["the {d} should have {v} stars"],
    "type": ["the {d} should be a {v}"],
    "day": ["i want to visit the {d} on {v}"],
}
GENERIC_PHRASES = ["a {d} with {s} {v}"]
GENERIC_SENTENCES = ["the {d} {s} should be {v}"]
UPDATE_TEMPLATES = [
    "actually , change the {d} {s} to {v}",
    "sorry , i would rather have the {d} {s} be {v}",
    "make the {d} {s} {v} instead",
]
OPENERS = ["i am looking for", "i need", "can you find me", "please find", "i would like"]
CONNECTORS = ["and", "and also", "plus"]
EMPTY_USER = ["thank you .", "that sounds good .", "let me think about it .", "great , thanks ."]
SYSTEM_GENERIC = [
    "how can i help you ?",
    "sure , is there anything else ?",
    "i can help with that .",
    "there are several options .",
    "do you have any other preferences ?",
    "okay , noted .",
]
SYSTEM_DOMAIN = [
    "what kind of {d} are you looking for ?",
    "i found a nice {d} for you .",
    "the {d} is available .",
]
SLOT_WORDS = {"pricerange": "price range"}


@dataclass
class SlotSpec:
    domain: str
    name: str
    values: list[str]

    @property
    def slot(self) -> str:
        return f"{self.domain}-{self.name}"


def _parse_spec(spec: dict) -> tuple[dict[str, list[SlotSpec]], dict]:
    domains = spec.get("domains")
    if not isinstance(domains, dict) or len(domains) < 2:
        raise GeneratorConfigError("ontology spec needs at least 2 domains")
    parsed = {}
    for dom, slots in domains.items():
        if not isinstance(slots, dict) or len(slots) < 3:
            raise GeneratorConfigError(f"domain {dom!r} needs at least 3 slots")
        parsed[dom] = []
        for name, vals in slots.items():
            if len(set(vals)) < 4:
                raise GeneratorConfigError(f"slot {dom}-{name} needs at least 4 values")
            parsed[dom].append(SlotSpec(dom, name, list(vals)))
    opts = {k: spec.get(k, DEFAULT_SPEC[k]) for k in ("confusion_rate", "min_turns", "max_turns")}
    if not 1 <= opts["min_turns"] <= opts["max_turns"]:
        raise GeneratorConfigError("need 1 <= min_turns <= max_turns")
    return parsed, opts


def spec_ontology(spec: dict) -> Ontology:
    parsed, _ = _parse_spec(spec)
    return Ontology.from_dict({s.slot: list(s.values) for slots in parsed.values() for s in slots})


def _shared_kinds(parsed: dict[str, list[SlotSpec]]) -> list[str]:
    kinds: dict[str, int] = {}
    for slots in parsed.values():
        for s in slots:
            kinds[s.name] = kinds.get(s.name, 0) + 1
    return sorted(k for k, n in kinds.items() if n >= 2)


def _article(text: str) -> str:
    return re.sub(r"\ba (?=[aeiou])", "an ", text)


def _set_clause(rng, s: SlotSpec, value: str, first: bool) -> str:
    phrases = SET_PHRASES.get(s.name, GENERIC_PHRASES)
    sentences = SET_SENTENCES.get(s.name, GENERIC_SENTENCES)
    use_phrase = rng.random() < 0.6
    pool = phrases if use_phrase else sentences
    text = pool[rng.integers(len(pool))].format(d=s.domain, v=value, s=SLOT_WORDS.get(s.name, s.name))
    if use_phrase and first:
        text = f"{OPENERS[rng.integers(len(OPENERS))]} {text}"
    elif use_phrase:
        text = f"i also need {text}"
    return _article(text)


def _update_clause(rng, s: SlotSpec, value: str) -> str:
    tpl = UPDATE_TEMPLATES[rng.integers(len(UPDATE_TEMPLATES))]
    return tpl.format(d=s.domain, v=value, s=SLOT_WORDS.get(s.name, s.name))


def _plan_dialogue(rng, parsed, opts, shared):
    """Return a list (one per turn) of [(SlotSpec, value, is_update)] operations."""
    n_turns = int(rng.integers(opts["min_turns"], opts["max_turns"] + 1))
    dom_names = sorted(parsed)
    confusion = bool(shared) and rng.random() < opts["confusion_rate"]
    n_dom = int(rng.integers(2 if confusion else 1, min(3, len(dom_names)) + 1))
    doms = [dom_names[i] for i in rng.permutation(len(dom_names))[:n_dom]]
    # contiguous block of turns per domain
    cuts = sorted(rng.choice(np.arange(1, n_turns), size=min(n_dom - 1, n_turns - 1), replace=False)) \
        if n_dom > 1 else []
    owner = []
    bounds = [0] + list(cuts) + [n_turns]
    for k in range(len(bounds) - 1):
        owner += [doms[min(k, len(doms) - 1)]] * (bounds[k + 1] - bounds[k])

    plan: list[list[tuple[SlotSpec, str, bool]]] = [[] for _ in range(n_turns)]
    state: dict[str, str] = {}
    forced: dict[int, tuple[SlotSpec, str]] = {}
    if confusion:
        first_dom_turns: dict[str, int] = {}
        for i, d in enumerate(owner):
            first_dom_turns.setdefault(d, i)
        present = [d for d in doms if d in first_dom_turns]
        kinds = [k for k in shared if sum(any(s.name == k for s in parsed[d]) for d in present) >= 2]
        if kinds and len(present) >= 2:
            kind = kinds[rng.integers(len(kinds))]
            with_kind = [d for d in present if any(s.name == kind for s in parsed[d])][:2]
            v1, v2 = rng.choice(next(s for s in parsed[with_kind[0]] if s.name == kind).values,
                                size=2, replace=False)
            for d, v in zip(with_kind, (v1, v2)):
                spec = next(s for s in parsed[d] if s.name == kind)
                forced[first_dom_turns[d]] = (spec, str(v))

    for i in range(n_turns):
        dom = owner[i]
        ops = []
        if i in forced:
            spec, v = forced[i]
            ops.append((spec, v, False))
        n_ops = int(rng.choice([0, 1, 1, 2, 2, 3])) if i > 0 else int(rng.integers(1, 4))
        used = {o[0].slot for o in ops}
        for _ in range(max(0, n_ops - len(ops))):
            fresh = [s for s in parsed[dom] if s.slot not in state and s.slot not in used
                     and not any(f[0].slot == s.slot for f in forced.values())]
            stale = [s for d in doms for s in parsed[d] if s.slot in state and s.slot not in used]
            if stale and (not fresh or rng.random() < 0.15):
                s = stale[rng.integers(len(stale))]
                choices = [v for v in s.values if v != state[s.slot]]
                ops.append((s, str(choices[rng.integers(len(choices))]), True))
            elif fresh:
                s = fresh[rng.integers(len(fresh))]
                ops.append((s, str(s.values[rng.integers(len(s.values))]), False))
            else:
                break
            used.add(ops[-1][0].slot)
        for s, v, _ in ops:
            state[s.slot] = v
        plan[i] = ops
    return plan, confusion and bool(forced)


def _render_turn(rng, ops, dom: str) -> tuple[str, str]:
    if rng.random() < 0.5:
        sys = SYSTEM_GENERIC[rng.integers(len(SYSTEM_GENERIC))]
    else:
        sys = SYSTEM_DOMAIN[rng.integers(len(SYSTEM_DOMAIN))].format(d=dom)
    if not ops:
        return EMPTY_USER[rng.integers(len(EMPTY_USER))], sys
    parts = []
    for k, (s, v, upd) in enumerate(ops):
        if upd:
            clause = _update_clause(rng, s, v)
        else:
            clause = _set_clause(rng, s, v, first=k == 0)
        if k > 0:
            clause = f"{CONNECTORS[rng.integers(len(CONNECTORS))]} {clause}"
        parts.append(clause)
    return " ".join(parts) + " .", sys


def generate_synthetic_corpus(seed: int, n_dialogues: int, ontology_spec: dict | None = None
                              ) -> tuple[list[Dialogue], Ontology]:
    spec = DEFAULT_SPEC if ontology_spec is None else ontology_spec
    parsed, opts = _parse_spec(spec)
    shared = _shared_kinds(parsed)
    ontology = spec_ontology(spec)
    rng = np.random.default_rng(seed)
    dialogues = []
    for n in range(n_dialogues):
        plan, _ = _plan_dialogue(rng, parsed, opts, shared)
        state: dict[str, str] = {}
        turns = []
        last_dom = sorted(parsed)[0]
        for i, ops in enumerate(plan, start=1):
            if ops:
                last_dom = ops[0][0].domain
            user, system = _render_turn(rng, ops, last_dom)
            for s, v, _ in ops:
                state[s.slot] = v
                assert set(tokenize_text(v)) <= set(tokenize_text(user)), (v, user)
            turns.append(Turn(i, system, user, dict(state)))
        dialogues.append(Dialogue(f"syn-{seed}-{n:05d}", turns))
    return dialogues, ontology


def has_confusion_pair(dialogue: Dialogue) -> bool:
    """True if two domains get the same kind of slot set in different turns."""
    first_set: dict[str, int] = {}
    prev: dict[str, str] = {}
    for t in dialogue.turns:
        for slot, v in t.state.items():
            if prev.get(slot) != v and slot not in first_set:
                first_set[slot] = t.index
        prev = t.state
    by_kind: dict[str, list[tuple[str, int]]] = {}
    for slot, turn in first_set.items():
        dom, kind = slot.split("-", 1)
        by_kind.setdefault(kind, []).append((dom, turn))
    return any(len({d for d, _ in v}) >= 2 and len({t for _, t in v}) >= 2 for v in by_kind.values())


def load_ontology_spec(path) -> dict:
    return json.loads(Path(path).read_text())
