"""Phrase error and sentence-classifier accuracy with counterfactual text.

Phrase error is the fraction of explanations whose "absent" phrase is in
fact mentioned by one of the image's own descriptions.  The accuracy
metric appends the counterfactual phrase as positive text to the image's
first description and measures how often a bag-of-words classifier still
predicts the right class; good counterfactual evidence pulls it toward the
counter-class and lowers accuracy.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .chunker import contains_phrase
from .corpus import Corpus, Lexicon, tokenize
from .critic import CriticModel, GroundingBackend, backend_from_description, critic_scorer
from .encoder import CheckerModel, TrainConfig, checker_scorer
from .errors import ContractError, ModelFormatError, NonFiniteLoss
from .explainer import (
    CHECKER_KINDS,
    DEFAULT_POOL_CAP,
    CounterfactualExplanation,
    Scorer,
    candidate_evidence,
    explain,
    nearest_counterclass,
)
from .synthworld import oracle_checker

log = logging.getLogger(__name__)

SENTCLF_FORMAT = "cfx-sentclf-v1"
REPORT_FORMAT = "cfx-report-v1"


# -- sentence classifier --------------------------------------------------------


@dataclass(eq=False)
class SentenceClassifier:
    classes: list[str]
    vocab: dict[str, int]
    W: np.ndarray
    b: np.ndarray
    loss_curve: list[float] = field(default_factory=list)
    lexicon: Lexicon | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64).reshape(len(self.classes), len(self.vocab))
        self.b = np.asarray(self.b, dtype=np.float64).reshape(len(self.classes))
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ModelFormatError("sentence classifier parameters are not finite")

    def featurize(self, texts: Sequence[str]) -> np.ndarray:
        X = np.zeros((len(texts), len(self.vocab)))
        for i, text in enumerate(texts):
            for tok in tokenize(text, self.lexicon):
                j = self.vocab.get(tok.surface)
                if j is not None:
                    X[i, j] += 1.0
        return X

    def predict(self, texts: Sequence[str]) -> list[str]:
        logits = self.featurize(texts) @ self.W.T + self.b
        # argmax keeps the first maximum, i.e. the smallest class id
        return [self.classes[i] for i in np.argmax(logits, axis=1)]

    def __eq__(self, other):
        if not isinstance(other, SentenceClassifier):
            return NotImplemented
        return (
            self.classes == other.classes
            and self.vocab == other.vocab
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.b, other.b)
            and self.loss_curve == other.loss_curve
        )


def _softmax_xent(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(len(labels)), labels]))
    probs = np.exp(shifted - logz[:, None])
    return loss, probs


def train_sentence_classifier(corpus: Corpus, cfg: TrainConfig = TrainConfig()) -> SentenceClassifier:
    """Bag-of-words softmax regression over every description, labeled by image class."""
    classes = sorted({r.class_id for r in corpus.records})
    if len(classes) < 2:
        raise ContractError("the sentence classifier needs at least two classes with descriptions")
    cidx = {c: i for i, c in enumerate(classes)}
    texts, labels = [], []
    for rec in corpus.records:
        for d in rec.descriptions:
            texts.append(d.raw)
            labels.append(cidx[rec.class_id])
    words = sorted({t.surface for rec in corpus.records for d in rec.descriptions for t in d.tokens})
    vocab = {w: i for i, w in enumerate(words)}

    rng = np.random.default_rng(cfg.seed)
    C, V = len(classes), len(vocab)
    W = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(C, V))
    b = rng.uniform(-cfg.init_scale, cfg.init_scale, size=C)
    clf = SentenceClassifier(classes, vocab, W, b, [], corpus.lexicon)
    X = clf.featurize(texts)
    y = np.array(labels)
    onehot = np.eye(C)[y]

    curve = [_softmax_xent(X @ clf.W.T + clf.b, y)[0]]
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, probs = _softmax_xent(X[idx] @ clf.W.T + clf.b, y[idx])
            delta = (probs - onehot[idx]) / len(idx)
            clf.W -= cfg.learning_rate * (delta.T @ X[idx])
            clf.b -= cfg.learning_rate * delta.sum(axis=0)
        loss = _softmax_xent(X @ clf.W.T + clf.b, y)[0]
        if not np.isfinite(loss):
            raise NonFiniteLoss(epoch, cfg.learning_rate)
        curve.append(loss)
        log.info("sentence classifier epoch %d loss %.6f", epoch, loss)
    clf.loss_curve = curve
    return clf


def sentclf_to_dict(clf: SentenceClassifier) -> dict:
    return {
        "format": SENTCLF_FORMAT,
        "classes": list(clf.classes),
        "vocab": dict(clf.vocab),
        "params": {"W": [float(x) for x in clf.W.reshape(-1)], "b": [float(x) for x in clf.b]},
        "loss_curve": [float(x) for x in clf.loss_curve],
    }


def sentclf_from_dict(obj: dict, lexicon: Lexicon | None = None) -> SentenceClassifier:
    if obj.get("format") != SENTCLF_FORMAT:
        raise ModelFormatError(f"expected format {SENTCLF_FORMAT!r}, got {obj.get('format')!r}")
    try:
        return SentenceClassifier(
            list(obj["classes"]),
            {str(w): int(i) for w, i in obj["vocab"].items()},
            obj["params"]["W"],
            obj["params"]["b"],
            list(obj.get("loss_curve", [])),
            lexicon,
        )
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"bad sentence classifier: {exc}") from None


def save_sentclf(clf: SentenceClassifier, path) -> None:
    Path(path).write_text(json.dumps(sentclf_to_dict(clf)) + "\n", encoding="utf-8")


def load_sentclf(path, lexicon: Lexicon | None = None) -> SentenceClassifier:
    return sentclf_from_dict(json.loads(Path(path).read_text(encoding="utf-8")), lexicon)


# -- metrics --------------------------------------------------------------------


def is_phrase_error(corpus: Corpus, expl: CounterfactualExplanation, match: str = "exact-np") -> bool:
    rec = corpus.record(expl.image_id)
    return any(contains_phrase(d.tokens, expl.selected, match) for d in rec.descriptions)


def phrase_error(
    corpus: Corpus, explanations: Sequence[CounterfactualExplanation], match: str = "exact-np"
) -> float:
    if not explanations:
        raise ContractError("phrase error of an empty explanation list is undefined")
    errors = [is_phrase_error(corpus, e, match) for e in explanations]
    return sum(errors) / len(errors)


def with_counterfactual_text(base: str, phrase_text: str) -> str:
    return f"{base} and {phrase_text}" if phrase_text else base


def accuracy_with_cf_text(
    clf: SentenceClassifier, corpus: Corpus, explanations: Sequence[CounterfactualExplanation]
) -> tuple[float, float]:
    rows = _accuracy_rows(clf, corpus, explanations)
    n = max(len(rows), 1)
    return (
        sum(r[1] == r[0] for r in rows) / n,
        sum(r[2] == r[0] for r in rows) / n,
    )


def _accuracy_rows(clf, corpus, explanations):
    truth, base, extended = [], [], []
    for e in explanations:
        rec = corpus.record(e.image_id)
        truth.append(rec.class_id)
        first = rec.descriptions[0].raw
        base.append(first)
        extended.append(with_counterfactual_text(first, e.selected.canonical))
    return list(zip(truth, clf.predict(base), clf.predict(extended)))


# -- evaluation run -------------------------------------------------------------


@dataclass
class EvalReport:
    n_images: int
    phrase_error: float
    acc_without_cf: float
    acc_with_cf: float
    per_image: list[dict]
    checker_kind: str
    seed: int
    match: str = "exact-np"

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, **asdict(self)}

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        if obj.get("format") != REPORT_FORMAT:
            raise ModelFormatError(f"expected format {REPORT_FORMAT!r}, got {obj.get('format')!r}")
        fields = {k: v for k, v in obj.items() if k != "format"}
        return cls(**fields)


def save_report(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def make_scorer(
    checker_kind: str,
    corpus: Corpus,
    checker: CheckerModel | None = None,
    critic: CriticModel | None = None,
    backend: GroundingBackend | None = None,
) -> Scorer | None:
    """Build the scoring function for a checker kind (None for the random baseline)."""
    if checker_kind == "random-baseline":
        return None
    if checker_kind == "oracle":
        return oracle_checker(corpus)
    if checker_kind == "classifier":
        if checker is None:
            raise ContractError("the classifier checker needs a trained checker model")
        return checker_scorer(checker)
    if checker_kind == "phrase-critic":
        if critic is None:
            raise ContractError("the phrase-critic checker needs a trained critic model")
        if backend is None:
            if not critic.backend:
                raise ContractError("critic model does not record its grounding backend; supply one")
            backend = backend_from_description(critic.backend, corpus)
        return critic_scorer(critic, backend)
    raise ContractError(f"unknown checker kind {checker_kind!r}; expected one of {CHECKER_KINDS}")


def explain_all(
    corpus: Corpus,
    checker_kind: str,
    scorer: Scorer | None = None,
    seed: int = 17,
    external=None,
    pool_cap: int = DEFAULT_POOL_CAP,
    metric: str = "euclidean",
    jobs: int = 1,
    image_ids: Sequence[str] | None = None,
) -> list[CounterfactualExplanation]:
    """Explain every image against its nearest counter-class, in corpus order.

    The random baseline draws from a generator seeded by ``(seed, record
    index)``, so results do not depend on ``jobs``.
    """
    ids = list(image_ids) if image_ids is not None else [r.id for r in corpus.records]
    position = {r.id: i for i, r in enumerate(corpus.records)}
    counter = {i: nearest_counterclass(corpus, i, metric) for i in ids}
    pools = {c: candidate_evidence(corpus, c, external, pool_cap) for c in sorted(set(counter.values()))}

    def one(image_id):
        rng = None
        if checker_kind == "random-baseline":
            rng = np.random.default_rng([seed, position[image_id]])
        return explain(
            corpus,
            image_id,
            counter[image_id],
            checker_kind,
            scorer=scorer,
            rng=rng,
            pool=pools[counter[image_id]],
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, ids))
    return [one(i) for i in ids]


def run_eval(
    corpus: Corpus,
    checker_kind: str,
    sentclf: SentenceClassifier,
    seed: int = 17,
    scorer: Scorer | None = None,
    match: str = "exact-np",
    external=None,
    pool_cap: int = DEFAULT_POOL_CAP,
    metric: str = "euclidean",
    jobs: int = 1,
) -> EvalReport:
    if checker_kind != "random-baseline" and scorer is None:
        raise ContractError(f"checker {checker_kind!r} needs a scorer")
    explanations = explain_all(corpus, checker_kind, scorer, seed, external, pool_cap, metric, jobs)
    acc_rows = _accuracy_rows(sentclf, corpus, explanations)
    rows = []
    for e, (truth, pred_without, pred_with) in zip(explanations, acc_rows):
        rows.append(
            {
                "image_id": e.image_id,
                "true_class": truth,
                "counter_class": e.counter_class,
                "phrase": e.selected.canonical,
                "score": e.selected_score,
                "is_error": is_phrase_error(corpus, e, match),
                "pred_without": pred_without,
                "pred_with": pred_with,
            }
        )
    return report_from_rows(rows, checker_kind, seed, match)


def report_from_rows(rows: list[dict], checker_kind: str, seed: int, match: str = "exact-np") -> EvalReport:
    n = len(rows)
    if n == 0:
        raise ContractError("cannot build a report without rows")
    return EvalReport(
        n_images=n,
        phrase_error=sum(r["is_error"] for r in rows) / n,
        acc_without_cf=sum(r["pred_without"] == r["true_class"] for r in rows) / n,
        acc_with_cf=sum(r["pred_with"] == r["true_class"] for r in rows) / n,
        per_image=rows,
        checker_kind=checker_kind,
        seed=seed,
        match=match,
    )
