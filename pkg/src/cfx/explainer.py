"""Counterfactual explanation pipeline.

Given an image and a counter-class, harvest noun phrases that describe the
counter-class, pick the one an evidence checker considers least likely to
be in the image, negate it and wrap it in a sentence::

    This is not a Bobolink because it does not have a yellow nape.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .chunker import NounPhrase, chunk
from .corpus import Corpus, tokenize
from .errors import ContractError, CorpusFormatError, EmptyPool

Scorer = Callable[[np.ndarray, NounPhrase], float]

CHECKER_KINDS = ("classifier", "phrase-critic", "random-baseline", "oracle")
METRICS = ("euclidean", "cosine")
DEFAULT_POOL_CAP = 20
BASELINE_SCORE = -1.0


@dataclass(frozen=True)
class CandidatePool:
    counter_class: str
    candidates: tuple[tuple[NounPhrase, int], ...]
    source: str

    @property
    def phrases(self) -> list[NounPhrase]:
        return [p for p, _ in self.candidates]

    def __len__(self):
        return len(self.candidates)


@dataclass(frozen=True)
class CounterfactualExplanation:
    image_id: str
    counter_class: str
    selected: NounPhrase
    selected_score: float
    negated_clause: str
    sentence: str
    checker_kind: str
    pool: CandidatePool | None = None
    scores: tuple[tuple[str, float], ...] = ()

    def trace(self) -> dict:
        return {
            "image_id": self.image_id,
            "counter_class": self.counter_class,
            "checker": self.checker_kind,
            "pool": [[p.canonical, n] for p, n in self.pool.candidates] if self.pool else [],
            "pool_source": self.pool.source if self.pool else None,
            "scores": [[c, s] for c, s in self.scores],
            "selected": self.selected.canonical,
            "selected_score": self.selected_score,
            "negated_clause": self.negated_clause,
            "sentence": self.sentence,
        }


# -- counter-class selection ----------------------------------------------------


def _distances(matrix: np.ndarray, query: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        diff = matrix - query
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if metric == "cosine":
        norms = np.linalg.norm(matrix, axis=1) * np.linalg.norm(query)
        sims = np.divide(matrix @ query, norms, out=np.zeros(len(matrix)), where=norms > 0)
        return 1.0 - sims
    raise ContractError(f"unknown distance metric {metric!r}; expected one of {METRICS}")


def nearest_counterclass(corpus: Corpus, image_id: str, metric: str = "euclidean") -> str:
    """Class of the closest record from a different class; ties go to the smallest record id."""
    if len(corpus.classes) < 2:
        raise ContractError("counter-class selection needs at least two classes")
    rec = corpus.record(image_id)
    others = [i for i, r in enumerate(corpus.records) if r.class_id != rec.class_id]
    if not others:
        raise ContractError(f"no record outside class {rec.class_id!r}")
    dist = _distances(corpus.feature_matrix()[others], rec.features, metric)
    best = dist.min()
    winner = min(corpus.records[others[i]].id for i in np.flatnonzero(dist == best))
    return corpus.record(winner).class_id


# -- candidate evidence ---------------------------------------------------------


def load_external_explanations(path) -> dict[str, list[str]]:
    """Read ``{"class_id", "sentence"}`` JSONL into class -> sentences."""
    out: dict[str, list[str]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out.setdefault(str(obj["class_id"]), []).append(str(obj["sentence"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorpusFormatError(f"{path}: bad explanation record ({exc})", line=lineno) from None
    return out


def candidate_evidence(
    corpus: Corpus,
    counter_class: str,
    external: Mapping[str, Sequence[str]] | None = None,
    cap: int = DEFAULT_POOL_CAP,
) -> CandidatePool:
    if counter_class not in corpus.classes:
        raise ContractError(f"unknown class {counter_class!r}")
    if external is not None:
        token_seqs = [tokenize(s, corpus.lexicon) for s in external.get(counter_class, ())]
        source = "external-explanations"
    else:
        token_seqs = [d.tokens for r in corpus.records_of_class(counter_class) for d in r.descriptions]
        source = "ground-truth-descriptions"
    counts = Counter(p for toks in token_seqs for p in chunk(toks) if p.modifiers)
    if not counts:
        raise EmptyPool(f"no modified noun phrases for class {counter_class!r}")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0].canonical))
    return CandidatePool(counter_class, tuple(ranked[:cap]), source)


# -- selection ------------------------------------------------------------------


def score_pool(pool: CandidatePool, scorer: Scorer, features) -> list[tuple[NounPhrase, float]]:
    return [(p, float(scorer(features, p))) for p in pool.phrases]


def select_evidence(
    pool: CandidatePool,
    scorer: Scorer | None = None,
    features=None,
    rng: np.random.Generator | None = None,
) -> tuple[NounPhrase, float]:
    """Lowest-scoring candidate, or a uniform pick when only ``rng`` is given.

    Score ties are broken by canonical form.  The random pick reports a
    score of -1.
    """
    if (scorer is None) == (rng is None):
        raise ContractError("pass exactly one of scorer or rng")
    if not len(pool):
        raise EmptyPool(f"empty candidate pool for class {pool.counter_class!r}")
    if rng is not None:
        return pool.phrases[int(rng.integers(len(pool)))], BASELINE_SCORE
    scored = score_pool(pool, scorer, features)
    return min(scored, key=lambda ps: (ps[1], ps[0].canonical))


# -- surface realization --------------------------------------------------------


def _is_plural(noun: str) -> bool:
    return noun.endswith("s") and not noun.endswith("ss")


def _indefinite(word: str) -> str:
    return "an" if word[:1].lower() in "aeiou" else "a"


def negate(phrase: NounPhrase) -> str:
    if _is_plural(phrase.head):
        return f"does not have {phrase.canonical}"
    return f"does not have {_indefinite(phrase.canonical)} {phrase.canonical}"


def compose(counter_class_name: str, negated: str) -> str:
    return f"This is not {_indefinite(counter_class_name)} {counter_class_name} because it {negated}."


# -- orchestration --------------------------------------------------------------


def explain(
    corpus: Corpus,
    image_id: str,
    counter_class: str | None = None,
    checker_kind: str = "classifier",
    scorer: Scorer | None = None,
    rng: np.random.Generator | None = None,
    external: Mapping[str, Sequence[str]] | None = None,
    pool_cap: int = DEFAULT_POOL_CAP,
    metric: str = "euclidean",
    pool: CandidatePool | None = None,
) -> CounterfactualExplanation:
    """Run counter-class selection, candidate harvesting, selection and realization.

    ``scorer`` is required for every checker kind except ``random-baseline``,
    which needs ``rng`` instead.  A precomputed ``pool`` for the counter-class
    may be passed to skip re-chunking.
    """
    if checker_kind not in CHECKER_KINDS:
        raise ContractError(f"unknown checker kind {checker_kind!r}")
    rec = corpus.record(image_id)
    if counter_class is None:
        counter_class = nearest_counterclass(corpus, image_id, metric)
    if pool is None or pool.counter_class != counter_class:
        pool = candidate_evidence(corpus, counter_class, external, pool_cap)

    if checker_kind == "random-baseline":
        if rng is None:
            raise ContractError("the random baseline needs an rng")
        selected, score = select_evidence(pool, rng=rng)
        scores: tuple = ()
    else:
        if scorer is None:
            raise ContractError(f"checker {checker_kind!r} needs a scorer")
        scored = score_pool(pool, scorer, rec.features)
        selected, score = min(scored, key=lambda ps: (ps[1], ps[0].canonical))
        scores = tuple((p.canonical, s) for p, s in scored)

    clause = negate(selected)
    return CounterfactualExplanation(
        image_id=image_id,
        counter_class=counter_class,
        selected=selected,
        selected_score=score,
        negated_clause=clause,
        sentence=compose(corpus.classes[counter_class], clause),
        checker_kind=checker_kind,
        pool=pool,
        scores=scores,
    )
