"""Negative phrases by attribute flipping.

Visual attributes of one body part are mostly exclusive: a red eye is not
also a black eye.  Swapping a phrase's modifiers for another modifier list
attested with the same head noun therefore gives a phrase that is very
likely absent from the image.
"""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .chunker import NounPhrase, chunk
from .corpus import Corpus
from .errors import HeadUnknown, NoAlternative, Unmodified


class TrainingPair(NamedTuple):
    image_id: str
    phrase: NounPhrase
    positive: bool

    @property
    def label(self) -> float:
        return 1.0 if self.positive else 0.0


class AttributeInventory:
    """Head noun -> sorted, distinct, non-empty modifier lists seen with it."""

    def __init__(self, table: dict[str, Iterable[tuple[str, ...]]] | None = None):
        self._table: dict[str, tuple[tuple[str, ...], ...]] = {}
        for head in sorted(table or {}):
            mods = sorted({tuple(m) for m in table[head] if m})
            if mods:
                self._table[head] = tuple(mods)

    def __getitem__(self, head: str) -> tuple[tuple[str, ...], ...]:
        return self._table[head]

    def __contains__(self, head) -> bool:
        return head in self._table

    def __iter__(self):
        return iter(self._table)

    def __len__(self):
        return len(self._table)

    def __eq__(self, other):
        if not isinstance(other, AttributeInventory):
            return NotImplemented
        return self._table == other._table

    def items(self):
        return self._table.items()

    def as_dict(self) -> dict[str, list[list[str]]]:
        return {h: [list(m) for m in mods] for h, mods in self._table.items()}

    def __repr__(self):
        return f"AttributeInventory({self.as_dict()!r})"


def build_inventory(corpus: Corpus) -> AttributeInventory:
    table = defaultdict(set)
    for rec in corpus.records:
        for desc in rec.descriptions:
            for np_ in chunk(desc.tokens):
                if np_.modifiers:
                    table[np_.head].add(np_.modifiers)
    return AttributeInventory(table)


def alternatives(phrase: NounPhrase, inv: AttributeInventory) -> tuple[tuple[str, ...], ...]:
    if not phrase.modifiers:
        raise Unmodified(f"{phrase.canonical!r} has no modifiers to flip")
    if phrase.head not in inv:
        raise HeadUnknown(f"head noun {phrase.head!r} not in inventory")
    alts = tuple(m for m in inv[phrase.head] if m != phrase.modifiers)
    if not alts:
        raise NoAlternative(f"no attested alternative for {phrase.canonical!r}")
    return alts


def flip(phrase: NounPhrase, inv: AttributeInventory, rng: np.random.Generator) -> NounPhrase:
    """Replace the whole modifier list with a different attested one, uniformly."""
    alts = alternatives(phrase, inv)
    return NounPhrase(alts[int(rng.integers(len(alts)))], phrase.head)


def make_training_pairs(
    corpus: Corpus, inv: AttributeInventory, rng: np.random.Generator
) -> list[TrainingPair]:
    pairs = []
    for rec in corpus.records:
        chunks = [np_ for d in rec.descriptions for np_ in chunk(d.tokens)]
        attested = {np_.canonical for np_ in chunks}
        for np_ in chunks:
            if not np_.modifiers:
                continue
            pairs.append(TrainingPair(rec.id, np_, True))
            try:
                neg = flip(np_, inv, rng)
            except (NoAlternative, HeadUnknown):
                continue
            # the image itself is described with the flipped attribute
            if neg.canonical in attested:
                continue
            pairs.append(TrainingPair(rec.id, neg, False))
    return pairs


def save_pairs(pairs: Iterable[TrainingPair], path) -> None:
    lines = [
        json.dumps(
            {
                "image_id": p.image_id,
                "phrase": p.phrase.canonical,
                "label": "positive" if p.positive else "negative",
            }
        )
        for p in pairs
    ]
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def load_pairs(path) -> list[TrainingPair]:
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            pairs.append(
                TrainingPair(obj["image_id"], NounPhrase.parse(obj["phrase"]), obj["label"] == "positive")
            )
    return pairs
