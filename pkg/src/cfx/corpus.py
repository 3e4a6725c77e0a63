"""Images, classes and descriptions, plus the JSONL corpus format.

A corpus file is JSON-Lines.  The first line is a header::

    {"classes": {id: name, ...}, "feature_dim": d, "lexicon": {surface: pos} | null}

and every following line is one image::

    {"id": str, "class_id": str, "features": [float, ...],
     "descriptions": [str, ...], "oracle_attributes": {noun: adj} | null}

A null lexicon means the bundled bird-vocabulary lexicon.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import CorpusFormatError

POS_TAGS = ("DET", "ADJ", "NOUN", "VERB", "PREP", "CONJ", "OTHER")

_PUNCT = string.punctuation


class Token(NamedTuple):
    surface: str
    pos: str

    def __str__(self) -> str:
        return f"{self.surface}/{self.pos}"


@dataclass(frozen=True)
class Lexicon:
    entries: Mapping[str, str]

    def __post_init__(self):
        clean = {}
        for surface, pos in self.entries.items():
            if pos not in POS_TAGS:
                raise CorpusFormatError(f"unknown part-of-speech tag {pos!r} for {surface!r}")
            clean[surface.lower()] = pos
        object.__setattr__(self, "entries", clean)

    def tag(self, surface: str) -> str:
        return self.entries.get(surface.lower(), "OTHER")

    def __eq__(self, other):
        if not isinstance(other, Lexicon):
            return NotImplemented
        return self.entries == other.entries

    def __hash__(self):
        return hash(tuple(sorted(self.entries.items())))

    def __len__(self):
        return len(self.entries)

    @classmethod
    def default(cls) -> "Lexicon":
        return _default_lexicon()

    def merged(self, extra: Mapping[str, str]) -> "Lexicon":
        entries = dict(self.entries)
        entries.update({k.lower(): v for k, v in extra.items()})
        return Lexicon(entries)


@lru_cache(maxsize=1)
def _default_lexicon() -> Lexicon:
    text = resources.files("cfx").joinpath("data/lexicon.json").read_text(encoding="utf-8")
    return Lexicon(json.loads(text))


def tokenize(raw: str, lexicon: Lexicon | None = None) -> tuple[Token, ...]:
    """Lowercase, split on whitespace, strip edge punctuation, tag.

    Pieces that are nothing but punctuation are dropped.

    >>> [str(t) for t in tokenize("Black face", Lexicon.default())]
    ['black/ADJ', 'face/NOUN']
    """
    lexicon = lexicon or Lexicon.default()
    tokens = []
    for piece in raw.lower().split():
        surface = piece.strip(_PUNCT)
        if surface:
            tokens.append(Token(surface, lexicon.tag(surface)))
    return tuple(tokens)


def detokenize(tokens: Iterable[Token]) -> str:
    return " ".join(t.surface for t in tokens)


@dataclass(frozen=True)
class Description:
    image_id: str
    raw: str
    tokens: tuple[Token, ...]

    @classmethod
    def from_text(cls, image_id: str, raw: str, lexicon: Lexicon) -> "Description":
        return cls(image_id, raw, tokenize(raw, lexicon))


@dataclass(frozen=True, eq=False)
class ImageRecord:
    id: str
    class_id: str
    features: np.ndarray
    descriptions: tuple[Description, ...]
    oracle_attributes: Mapping[str, str] | None = None

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "descriptions", tuple(self.descriptions))

    def __eq__(self, other):
        if not isinstance(other, ImageRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.class_id == other.class_id
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and self.descriptions == other.descriptions
            and _opt_dict(self.oracle_attributes) == _opt_dict(other.oracle_attributes)
        )

    __hash__ = None


def _opt_dict(m):
    return None if m is None else dict(m)


@dataclass(frozen=True, eq=False)
class Corpus:
    """Immutable collection of image records sharing one feature dimension."""

    records: tuple[ImageRecord, ...]
    classes: Mapping[str, str]
    lexicon: Lexicon
    feature_dim: int
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "classes", dict(self.classes))
        index = {}
        n_oracle = 0
        for rec in self.records:
            if rec.id in index:
                raise CorpusFormatError(f"duplicate record id {rec.id!r}", record_id=rec.id)
            if rec.class_id not in self.classes:
                raise CorpusFormatError(
                    f"record {rec.id!r} has unknown class_id {rec.class_id!r}", record_id=rec.id
                )
            if rec.features.shape != (self.feature_dim,):
                raise CorpusFormatError(
                    f"record {rec.id!r} has {rec.features.size} features, expected {self.feature_dim}",
                    record_id=rec.id,
                )
            if not rec.descriptions:
                raise CorpusFormatError(f"record {rec.id!r} has no descriptions", record_id=rec.id)
            n_oracle += rec.oracle_attributes is not None
            index[rec.id] = rec
        if 0 < n_oracle < len(self.records):
            raise CorpusFormatError("oracle_attributes must be present on all records or none")
        object.__setattr__(self, "_index", index)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.feature_dim == other.feature_dim
            and self.classes == other.classes
            and self.lexicon == other.lexicon
            and self.records == other.records
        )

    __hash__ = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def record(self, image_id: str) -> ImageRecord:
        try:
            return self._index[image_id]
        except KeyError:
            raise CorpusFormatError(f"unknown image id {image_id!r}") from None

    def __contains__(self, image_id) -> bool:
        return image_id in self._index

    @property
    def is_synthetic(self) -> bool:
        return bool(self.records) and self.records[0].oracle_attributes is not None

    def feature_matrix(self) -> np.ndarray:
        cached = self.__dict__.get("_matrix")
        if cached is None:
            if self.records:
                cached = np.stack([r.features for r in self.records])
            else:
                cached = np.zeros((0, self.feature_dim))
            cached.setflags(write=False)
            object.__setattr__(self, "_matrix", cached)
        return cached

    def records_of_class(self, class_id: str) -> list[ImageRecord]:
        return [r for r in self.records if r.class_id == class_id]

    def record_for_features(self, features) -> ImageRecord:
        """Find the record whose feature vector is bit-identical to ``features``.

        Scorers that need image identity (the oracle, synthetic grounding)
        receive only a feature vector; this is how they recover the image.
        """
        table = self.__dict__.get("_by_features")
        if table is None:
            table = {}
            for rec in self.records:
                table.setdefault(rec.features.tobytes(), rec)
            object.__setattr__(self, "_by_features", table)
        key = np.asarray(features, dtype=np.float64).tobytes()
        try:
            return table[key]
        except KeyError:
            raise CorpusFormatError("feature vector does not belong to any record") from None


def _parse_line(text: str, lineno: int):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"malformed JSON ({exc.msg})", line=lineno) from None
    if not isinstance(obj, dict):
        raise CorpusFormatError("expected a JSON object", line=lineno)
    return obj


def load_corpus(path) -> Corpus:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].strip():
        raise CorpusFormatError("missing header line", line=1)

    header = _parse_line(lines[0], 1)
    try:
        classes = dict(header["classes"])
        dim = int(header["feature_dim"])
    except (KeyError, TypeError, ValueError):
        raise CorpusFormatError("header needs 'classes' and 'feature_dim'", line=1) from None
    lex_entries = header.get("lexicon")
    lexicon = Lexicon.default() if lex_entries is None else Lexicon(lex_entries)

    records = []
    seen = set()
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        obj = _parse_line(text, lineno)
        try:
            rid = str(obj["id"])
            cid = str(obj["class_id"])
            feats = [float(x) for x in obj["features"]]
            raws = [str(s) for s in obj["descriptions"]]
        except (KeyError, TypeError, ValueError):
            raise CorpusFormatError("record needs id, class_id, features, descriptions", line=lineno) from None
        if len(feats) != dim:
            raise CorpusFormatError(
                f"dimension mismatch in record {rid!r}: {len(feats)} features, expected {dim}",
                line=lineno,
                record_id=rid,
            )
        if not all(np.isfinite(feats)):
            raise CorpusFormatError(f"non-finite feature in record {rid!r}", line=lineno, record_id=rid)
        if cid not in classes:
            raise CorpusFormatError(f"record {rid!r} references unknown class {cid!r}", line=lineno, record_id=rid)
        if rid in seen:
            raise CorpusFormatError(f"duplicate record id {rid!r}", line=lineno, record_id=rid)
        if not raws:
            raise CorpusFormatError(f"record {rid!r} has no descriptions", line=lineno, record_id=rid)
        seen.add(rid)
        oracle = obj.get("oracle_attributes")
        records.append(
            ImageRecord(
                id=rid,
                class_id=cid,
                features=np.array(feats, dtype=np.float64),
                descriptions=tuple(Description.from_text(rid, r, lexicon) for r in raws),
                oracle_attributes=None if oracle is None else {str(k): str(v) for k, v in oracle.items()},
            )
        )
    return Corpus(tuple(records), classes, lexicon, dim)


def corpus_lines(corpus: Corpus) -> list[str]:
    lex = None if corpus.lexicon == Lexicon.default() else dict(corpus.lexicon.entries)
    header = {"classes": dict(corpus.classes), "feature_dim": corpus.feature_dim, "lexicon": lex}
    out = [json.dumps(header, ensure_ascii=False)]
    for rec in corpus.records:
        out.append(
            json.dumps(
                {
                    "id": rec.id,
                    "class_id": rec.class_id,
                    "features": [float(x) for x in rec.features],
                    "descriptions": [d.raw for d in rec.descriptions],
                    "oracle_attributes": _opt_dict(rec.oracle_attributes),
                },
                ensure_ascii=False,
            )
        )
    return out


def save_corpus(corpus: Corpus, path) -> None:
    text = "\n".join(corpus_lines(corpus)) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")
