"""Synthetic attribute worlds with known ground truth.

Every class gets exactly one adjective per body-part noun.  An image's
feature vector is the one-hot indicator of its (noun, adjective) pairs plus
Gaussian noise, and its descriptions are templated sentences over random
subsets of its attributes.  Because the attribute assignment is stored on
each record, every pipeline stage can be checked against an exact oracle.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .chunker import NounPhrase
from .corpus import Corpus, Description, ImageRecord, Lexicon
from .errors import ContractError

DEFAULT_ADJECTIVES = {
    "beak": ["black", "orange", "yellow", "pointy", "hooked"],
    "wing": ["black", "brown", "grey", "white", "blue"],
    "eye": ["red", "black", "yellow", "white", "orange"],
    "crown": ["red", "blue", "black", "yellow", "grey"],
    "nape": ["yellow", "white", "black", "brown", "green"],
    "breast": ["white", "yellow", "red", "buff", "spotted"],
    "belly": ["white", "yellow", "grey", "buff", "striped"],
    "tail": ["long", "short", "forked", "black", "brown"],
    "throat": ["white", "black", "yellow", "red", "orange"],
    "leg": ["pink", "black", "grey", "orange", "yellow"],
    "back": ["brown", "grey", "green", "black", "olive"],
    "cheek": ["white", "black", "yellow", "grey", "red"],
}

FUNCTION_WORDS = {
    "this": "DET",
    "a": "DET",
    "an": "DET",
    "bird": "NOUN",
    "has": "VERB",
    "and": "CONJ",
}


@dataclass
class SynthSpec:
    n_classes: int = 20
    images_per_class: int = 50
    nouns: list[str] = field(default_factory=lambda: list(DEFAULT_ADJECTIVES))
    adjectives_per_noun: dict[str, list[str]] = field(
        default_factory=lambda: {n: list(a) for n, a in DEFAULT_ADJECTIVES.items()}
    )
    descriptions_per_image: int = 3
    attributes_per_description: int = 3
    feature_noise_sigma: float = 0.05
    seed: int = 17
    # per-(image, noun) probability of departing from the class adjective
    violate_exclusivity: float = 0.0

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ContractError("n_classes must be at least 2")
        for name in ("images_per_class", "descriptions_per_image", "attributes_per_description"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.feature_noise_sigma < 0:
            raise ContractError("feature_noise_sigma must be non-negative")
        if not 0.0 <= self.violate_exclusivity <= 1.0:
            raise ContractError("violate_exclusivity must lie in [0, 1]")
        if not self.nouns or len(set(self.nouns)) != len(self.nouns):
            raise ContractError("nouns must be a non-empty list without repeats")
        if set(self.nouns) != set(self.adjectives_per_noun):
            raise ContractError("adjectives_per_noun must have exactly one entry per noun")
        for noun in self.nouns:
            adjs = self.adjectives_per_noun[noun]
            if len(set(adjs)) < 2 or len(set(adjs)) != len(adjs):
                raise ContractError(f"noun {noun!r} needs at least two distinct adjectives")
        if self.attributes_per_description > len(self.nouns):
            raise ContractError("attributes_per_description exceeds the number of nouns")
        adjs = {a for v in self.adjectives_per_noun.values() for a in v}
        clash = (adjs & set(self.nouns)) | ((adjs | set(self.nouns)) & set(FUNCTION_WORDS))
        if clash:
            raise ContractError(f"words used in more than one role: {sorted(clash)}")

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if "nouns" in obj and "adjectives_per_noun" not in obj:
            raise ContractError("a spec that sets nouns must also set adjectives_per_noun")
        if "adjectives_per_noun" in obj and "nouns" not in obj:
            obj["nouns"] = list(obj["adjectives_per_noun"])
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ContractError(f"bad synth spec: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)


def _article(word: str) -> str:
    return "an" if word[0] in "aeiou" else "a"


def attribute_slots(spec: SynthSpec) -> list[tuple[str, str]]:
    """(noun, adjective) pairs in feature-vector order."""
    return [(n, a) for n in spec.nouns for a in spec.adjectives_per_noun[n]]


def generate(spec: SynthSpec | None = None) -> Corpus:
    spec = spec or SynthSpec()
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    slots = {pair: i for i, pair in enumerate(attribute_slots(spec))}
    d = len(slots)

    width = len(str(spec.n_classes - 1))
    class_ids = [f"c{c:0{width}d}" for c in range(spec.n_classes)]
    classes = {cid: f"Species {cid[1:]}" for cid in class_ids}
    assignment = {}
    for cid in class_ids:
        assignment[cid] = {
            n: spec.adjectives_per_noun[n][int(rng.integers(len(spec.adjectives_per_noun[n])))]
            for n in spec.nouns
        }

    lexicon_entries = dict(FUNCTION_WORDS)
    lexicon_entries.update({a: "ADJ" for v in spec.adjectives_per_noun.values() for a in v})
    lexicon_entries.update({n: "NOUN" for n in spec.nouns})
    lexicon = Lexicon(lexicon_entries)

    n_images = spec.n_classes * spec.images_per_class
    iw = len(str(n_images - 1))
    records = []
    for c, cid in enumerate(class_ids):
        for j in range(spec.images_per_class):
            rid = f"img{c * spec.images_per_class + j:0{iw}d}"
            attrs = dict(assignment[cid])
            if spec.violate_exclusivity > 0:
                for n in spec.nouns:
                    if rng.random() < spec.violate_exclusivity:
                        others = [a for a in spec.adjectives_per_noun[n] if a != attrs[n]]
                        attrs[n] = others[int(rng.integers(len(others)))]
            feats = np.zeros(d)
            for n in spec.nouns:
                feats[slots[(n, attrs[n])]] = 1.0
            if spec.feature_noise_sigma > 0:
                feats += rng.normal(0.0, spec.feature_noise_sigma, size=d)
            descs = []
            for _ in range(spec.descriptions_per_image):
                picked = rng.choice(len(spec.nouns), size=spec.attributes_per_description, replace=False)
                parts = []
                for i in picked:
                    n = spec.nouns[int(i)]
                    parts.append(f"{_article(attrs[n])} {attrs[n]} {n}")
                descs.append(Description.from_text(rid, "this bird has " + " and ".join(parts), lexicon))
            records.append(ImageRecord(rid, cid, feats, tuple(descs), attrs))
    return Corpus(tuple(records), classes, lexicon, d)


def oracle_present(corpus: Corpus, image_id: str, phrase: NounPhrase) -> bool:
    oracle = corpus.record(image_id).oracle_attributes
    if oracle is None:
        raise ContractError("corpus has no oracle attributes")
    return bool(phrase.modifiers) and oracle.get(phrase.head) == " ".join(phrase.modifiers)


def oracle_checker(corpus: Corpus) -> Callable[[np.ndarray, NounPhrase], float]:
    """Scorer returning 1.0 when the phrase is a true attribute of the image, else 0.0."""
    if not corpus.is_synthetic:
        raise ContractError("oracle checker needs a synthetic corpus with oracle attributes")

    def score(features, phrase: NounPhrase) -> float:
        rec = corpus.record_for_features(features)
        return 1.0 if oracle_present(corpus, rec.id, phrase) else 0.0

    return score
