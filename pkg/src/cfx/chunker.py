"""Rule-based noun-phrase chunking over lexicon-tagged tokens.

A chunk is the longest match of ``DET? ADJ* NOUN`` starting at the scan
position; the determiner is consumed but not kept.  Scanning is left to
right without backtracking, so "black and white wing" yields only
"white wing".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import Lexicon, Token, tokenize

MATCH_MODES = ("exact-np", "substring")


@dataclass(frozen=True, order=False)
class NounPhrase:
    modifiers: tuple[str, ...]
    head: str

    def __post_init__(self):
        if not self.head:
            raise ValueError("noun phrase needs a head")
        object.__setattr__(self, "modifiers", tuple(self.modifiers))

    @property
    def canonical(self) -> str:
        return " ".join((*self.modifiers, self.head))

    @property
    def tokens(self) -> tuple[str, ...]:
        return (*self.modifiers, self.head)

    def __str__(self) -> str:
        return self.canonical

    def __lt__(self, other: "NounPhrase") -> bool:
        return self.canonical < other.canonical

    @classmethod
    def parse(cls, canonical: str) -> "NounPhrase":
        words = canonical.split()
        if not words:
            raise ValueError("empty noun phrase")
        return cls(tuple(words[:-1]), words[-1])


def chunk_spans(tokens: Sequence[Token]) -> list[tuple[int, int, NounPhrase]]:
    """Return ``(start, end, phrase)`` for each chunk; ``start`` includes any DET."""
    spans = []
    i, n = 0, len(tokens)
    while i < n:
        j = i
        if tokens[j].pos == "DET":
            j += 1
        k = j
        while k < n and tokens[k].pos == "ADJ":
            k += 1
        if k < n and tokens[k].pos == "NOUN":
            mods = tuple(t.surface for t in tokens[j:k])
            spans.append((i, k + 1, NounPhrase(mods, tokens[k].surface)))
            i = k + 1
        else:
            i += 1
    return spans


def chunk(tokens: Sequence[Token]) -> list[NounPhrase]:
    return [np_ for _, _, np_ in chunk_spans(tokens)]


def chunk_text(text: str, lexicon: Lexicon | None = None) -> list[NounPhrase]:
    return chunk(tokenize(text, lexicon))


def contains_phrase(tokens: Sequence[Token], phrase: NounPhrase, match: str = "exact-np") -> bool:
    """Does ``phrase`` occur in ``tokens``?

    ``exact-np`` requires a chunk with the same canonical form, so
    "yellow nape" is not found in "a bright yellow nape".  ``substring``
    accepts any contiguous run of surface forms.
    """
    if match == "exact-np":
        return any(c == phrase for c in chunk(tokens))
    if match == "substring":
        words = [t.surface for t in tokens]
        target = list(phrase.tokens)
        m = len(target)
        return any(words[i : i + m] == target for i in range(len(words) - m + 1))
    raise ValueError(f"unknown match mode {match!r}; expected one of {MATCH_MODES}")
