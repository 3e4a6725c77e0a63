"""Phrase critic over a pluggable grounding backend.

A grounding backend maps (image features, phrase) to an uncalibrated
localization score and a region feature.  The critic is a logistic model
over ``[raw_score, region_feature, mean token embedding]`` that learns to
turn those into "is this phrase in the image" probabilities, trained on
the same positive/flipped-negative pairs as the classifier.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .chunker import NounPhrase
from .corpus import Corpus
from .encoder import OOV, TrainConfig, _sigmoid, build_vocab, encode_batch
from .errors import CfxError, ContractError, EmptyPairs, ModelFormatError, NonFiniteLoss
from .negmine import TrainingPair

log = logging.getLogger(__name__)

FORMAT = "cfx-critic-v1"
PARAM_NAMES = ("w_raw", "w_region", "w_text", "T", "b")


@dataclass(frozen=True, eq=False)
class GroundingResult:
    raw_score: float
    region_feature: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, GroundingResult):
            return NotImplemented
        return self.raw_score == other.raw_score and np.array_equal(self.region_feature, other.region_feature)


class GroundingBackend(Protocol):
    region_dim: int

    def ground(self, features: np.ndarray, phrase: NounPhrase) -> GroundingResult: ...

    def describe(self) -> dict: ...


class BackendError(CfxError):
    pass


def _hash_seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


class SyntheticBackend:
    """Noisy oracle grounding: ``raw = 2*present - 1 + N(0, sigma)``.

    The region feature is the image's one-hot adjective indicator for the
    phrase's head noun (zero-padded to the widest noun), plus noise of the
    same scale.  Noise is seeded from a hash of (seed, image, phrase), so
    repeated queries return identical results.
    """

    SLOPE = 2.0
    OFFSET = -1.0

    def __init__(self, corpus: Corpus, noise_sigma: float = 0.0, seed: int = 17):
        if not corpus.is_synthetic:
            raise ContractError("synthetic grounding needs a corpus with oracle attributes")
        if noise_sigma < 0:
            raise ContractError("noise_sigma must be non-negative")
        self.corpus = corpus
        self.noise_sigma = float(noise_sigma)
        self.seed = int(seed)
        adjs: dict[str, set] = {}
        for rec in corpus.records:
            for noun, adj in rec.oracle_attributes.items():
                adjs.setdefault(noun, set()).add(adj)
        self._blocks = {noun: sorted(v) for noun, v in adjs.items()}
        self.region_dim = max((len(v) for v in self._blocks.values()), default=0)

    def ground(self, features, phrase: NounPhrase) -> GroundingResult:
        rec = self.corpus.record_for_features(features)
        oracle = rec.oracle_attributes
        present = bool(phrase.modifiers) and oracle.get(phrase.head) == " ".join(phrase.modifiers)
        region = np.zeros(self.region_dim)
        block = self._blocks.get(phrase.head)
        if block is not None and phrase.head in oracle:
            region[block.index(oracle[phrase.head])] = 1.0
        raw = self.SLOPE * present + self.OFFSET
        if self.noise_sigma > 0:
            noise = np.random.default_rng(_hash_seed(self.seed, rec.id, phrase.canonical)).normal(
                0.0, self.noise_sigma, size=1 + self.region_dim
            )
            raw += noise[0]
            region = region + noise[1:]
        return GroundingResult(float(raw), region)

    def describe(self) -> dict:
        return {"kind": "synthetic", "noise_sigma": self.noise_sigma, "seed": self.seed}


def synthetic_backend(corpus: Corpus, noise_sigma: float = 0.0, seed: int = 17) -> SyntheticBackend:
    return SyntheticBackend(corpus, noise_sigma, seed)


class ReplayBackend:
    """Serves precomputed grounding outputs read from a JSONL dump.

    Each line is ``{"image_id", "phrase", "raw_score", "region_feature"}``.
    """

    def __init__(self, corpus: Corpus, path):
        self.corpus = corpus
        self.path = str(path)
        self._table: dict[tuple[str, str], GroundingResult] = {}
        dims = set()
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = (str(obj["image_id"]), NounPhrase.parse(obj["phrase"]).canonical)
                res = GroundingResult(float(obj["raw_score"]), np.array(obj["region_feature"], dtype=np.float64))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise BackendError(f"{path}: line {lineno}: bad grounding record ({exc})") from None
            dims.add(res.region_feature.size)
            self._table[key] = res
        if len(dims) > 1:
            raise BackendError(f"{path}: region features have inconsistent dimensions {sorted(dims)}")
        self.region_dim = dims.pop() if dims else 0

    def ground(self, features, phrase: NounPhrase) -> GroundingResult:
        rec = self.corpus.record_for_features(features)
        try:
            return self._table[(rec.id, phrase.canonical)]
        except KeyError:
            raise BackendError(f"no grounding for ({rec.id!r}, {phrase.canonical!r}) in {self.path}") from None

    def describe(self) -> dict:
        return {"kind": "replay", "path": self.path}


def dump_grounding(
    backend: GroundingBackend, corpus: Corpus, queries: Iterable[tuple[str, NounPhrase]], path
) -> None:
    """Write backend outputs for ``(image_id, phrase)`` queries in replay format."""
    lines = []
    for image_id, phrase in queries:
        res = backend.ground(corpus.record(image_id).features, phrase)
        lines.append(
            json.dumps(
                {
                    "image_id": image_id,
                    "phrase": phrase.canonical,
                    "raw_score": res.raw_score,
                    "region_feature": [float(x) for x in res.region_feature],
                }
            )
        )
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def backend_from_description(desc: dict, corpus: Corpus) -> GroundingBackend:
    kind = desc.get("kind")
    if kind == "synthetic":
        return SyntheticBackend(corpus, desc.get("noise_sigma", 0.0), desc.get("seed", 17))
    if kind == "replay":
        return ReplayBackend(corpus, desc["path"])
    raise ContractError(f"unknown grounding backend kind {kind!r}")


# -- critic model ---------------------------------------------------------------


def critic_shapes(V: int, m: int, g: int) -> dict[str, tuple[int, ...]]:
    return {"w_raw": (), "w_region": (g,), "w_text": (m,), "T": (V, m), "b": ()}


@dataclass(eq=False)
class CriticModel:
    vocab: dict[str, int]
    params: dict[str, np.ndarray]
    loss_curve: list[float] = field(default_factory=list)
    config: dict | None = None
    backend: dict | None = None

    def __post_init__(self):
        if any(i == OOV for i in self.vocab.values()):
            raise ModelFormatError("vocabulary index 0 is reserved for out-of-vocabulary tokens")
        self.params = {n: np.asarray(self.params[n], dtype=np.float64) for n in PARAM_NAMES}
        expected = critic_shapes(self.V, self.m, self.g)
        for n in PARAM_NAMES:
            if self.params[n].shape != expected[n]:
                raise ModelFormatError(f"parameter {n} has shape {self.params[n].shape}, expected {expected[n]}")
            if not np.all(np.isfinite(self.params[n])):
                raise ModelFormatError(f"parameter {n} is not finite")

    @property
    def g(self) -> int:
        return self.params["w_region"].shape[0]

    @property
    def m(self) -> int:
        return self.params["T"].shape[1]

    @property
    def V(self) -> int:
        return self.params["T"].shape[0]

    def token_ids(self, phrase: NounPhrase) -> list[int]:
        return [self.vocab.get(w, OOV) for w in phrase.tokens]

    def __eq__(self, other):
        if not isinstance(other, CriticModel):
            return NotImplemented
        return (
            self.vocab == other.vocab
            and all(np.array_equal(self.params[n], other.params[n]) for n in PARAM_NAMES)
            and self.loss_curve == other.loss_curve
            and self.config == other.config
            and self.backend == other.backend
        )


def zero_critic(vocab: dict[str, int], g: int, m: int) -> CriticModel:
    V = max(vocab.values(), default=0) + 1
    return CriticModel(dict(vocab), {n: np.zeros(s) for n, s in critic_shapes(V, m, g).items()})


def _inputs(model, backend, features_rows, phrases):
    results = [backend.ground(f, p) for f, p in zip(features_rows, phrases)]
    raw = np.array([r.raw_score for r in results])
    region = np.array([r.region_feature for r in results]).reshape(len(results), model.g)
    ids, mask = encode_batch(model, phrases)
    return raw, region, ids, mask


def _forward(p, raw, region, ids, mask):
    counts = np.maximum(mask.sum(axis=1), 1.0)
    emb = (p["T"][ids] * mask[:, :, None]).sum(axis=1) / counts[:, None]
    logits = p["w_raw"] * raw + region @ p["w_region"] + emb @ p["w_text"] + p["b"]
    return logits, emb, counts


def _loss_and_grads(p, raw, region, ids, mask, y):
    logits, emb, counts = _forward(p, raw, region, ids, mask)
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    dl = (_sigmoid(logits) - y) / len(y)
    g = {
        "w_raw": np.asarray(dl @ raw),
        "w_region": region.T @ dl,
        "w_text": emb.T @ dl,
        "b": np.asarray(dl.sum()),
        "T": np.zeros_like(p["T"]),
    }
    demb = dl[:, None] * p["w_text"] / counts[:, None]
    for s in range(ids.shape[1]):
        np.add.at(g["T"], ids[:, s], demb * mask[:, s, None])
    return loss, g


def _loss(p, raw, region, ids, mask, y) -> float:
    logits, _, _ = _forward(p, raw, region, ids, mask)
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def train_critic(
    corpus: Corpus,
    backend: GroundingBackend,
    pairs: Sequence[TrainingPair],
    cfg: TrainConfig = TrainConfig(),
) -> CriticModel:
    """Logistic critic trained by seeded mini-batch gradient descent on BCE.

    The text-embedding width equals ``cfg.k``.
    """
    if not pairs:
        raise EmptyPairs("no training pairs")
    rng = np.random.default_rng(cfg.seed)
    vocab = build_vocab([p.phrase for p in pairs])
    shapes = critic_shapes(max(vocab.values()) + 1, cfg.k, backend.region_dim)
    params = {n: rng.uniform(-cfg.init_scale, cfg.init_scale, size=shapes[n]) for n in PARAM_NAMES}
    model = CriticModel(vocab, params, [], asdict(cfg), backend.describe())

    try:
        feats = [corpus.record(p.image_id).features for p in pairs]
    except CfxError as exc:
        raise ContractError(f"training pair references an unknown image: {exc}") from None
    raw, region, ids, mask = _inputs(model, backend, feats, [p.phrase for p in pairs])
    y = np.array([p.label for p in pairs])
    p = model.params
    curve = [_loss(p, raw, region, ids, mask, y)]
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            b = order[start : start + cfg.batch_size]
            _, grads = _loss_and_grads(p, raw[b], region[b], ids[b], mask[b], y[b])
            for name in PARAM_NAMES:
                p[name] -= cfg.learning_rate * grads[name]
        loss = _loss(p, raw, region, ids, mask, y)
        if not (np.isfinite(loss) and all(np.all(np.isfinite(v)) for v in p.values())):
            raise NonFiniteLoss(epoch, cfg.learning_rate)
        curve.append(loss)
        log.info("critic epoch %d loss %.6f", epoch, loss)
    model.loss_curve = curve
    return model


def critic_score(model: CriticModel, backend: GroundingBackend, features, phrase: NounPhrase) -> float:
    raw, region, ids, mask = _inputs(model, backend, [features], [phrase])
    logits, _, _ = _forward(model.params, raw, region, ids, mask)
    return float(_sigmoid(logits[0]))


def critic_predict(
    model: CriticModel, backend: GroundingBackend, corpus: Corpus, pairs: Sequence[TrainingPair]
) -> np.ndarray:
    feats = [corpus.record(p.image_id).features for p in pairs]
    raw, region, ids, mask = _inputs(model, backend, feats, [p.phrase for p in pairs])
    return _sigmoid(_forward(model.params, raw, region, ids, mask)[0])


def critic_scorer(model: CriticModel, backend: GroundingBackend):
    def score(features, phrase: NounPhrase) -> float:
        return critic_score(model, backend, features, phrase)

    return score


# -- serialization --------------------------------------------------------------


def critic_to_dict(model: CriticModel) -> dict:
    return {
        "format": FORMAT,
        "dims": {"g": model.g, "m": model.m, "V": model.V},
        "vocab": dict(model.vocab),
        "params": {n: [float(x) for x in model.params[n].reshape(-1)] for n in PARAM_NAMES},
        "loss_curve": [float(x) for x in model.loss_curve],
        "config": model.config,
        "backend": model.backend,
    }


def critic_from_dict(obj: dict) -> CriticModel:
    if obj.get("format") != FORMAT:
        raise ModelFormatError(f"expected format {FORMAT!r}, got {obj.get('format')!r}")
    dims = obj["dims"]
    shapes = critic_shapes(int(dims["V"]), int(dims["m"]), int(dims["g"]))
    try:
        params = {n: np.array(obj["params"][n], dtype=np.float64).reshape(shapes[n]) for n in PARAM_NAMES}
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"bad critic parameters: {exc}") from None
    return CriticModel(
        {str(w): int(i) for w, i in obj["vocab"].items()},
        params,
        list(obj.get("loss_curve", [])),
        obj.get("config"),
        obj.get("backend"),
    )


def save_critic(model: CriticModel, path) -> None:
    Path(path).write_text(json.dumps(critic_to_dict(model)) + "\n", encoding="utf-8")


def load_critic(path) -> CriticModel:
    return critic_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
