"""Phrase-in-image classifier with elementwise multimodal fusion.

The phrase is encoded by a single-layer tanh recurrent cell over its
tokens, the image feature vector is projected affinely into the same
k-dimensional space, the two are multiplied elementwise, L2-normalized and
passed through a logistic output unit::

    t = rnn(phrase)                  # h <- tanh(W_x e + W_h h + b_r)
    v = W_p f + b_p
    z = v * t
    score = sigmoid(w_o . z/|z| + b_o)     # z/|z| := 0 when |z| <= 1e-12

Scores near 0 mean the phrase is not in the image.  Training is plain
mini-batch gradient descent on mean binary cross-entropy with gradients
derived by hand; :func:`grad_check` compares them with central finite
differences.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .chunker import NounPhrase
from .corpus import Corpus
from .errors import ContractError, EmptyPairs, ModelFormatError, NonFiniteLoss
from .negmine import TrainingPair

log = logging.getLogger(__name__)

FORMAT = "cfx-checker-v1"
EPS = 1e-12
PARAM_NAMES = ("E", "W_x", "W_h", "b_r", "W_p", "b_p", "w_o", "b_o")
OOV = 0


@dataclass(frozen=True)
class TrainConfig:
    k: int = 64
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    seed: int = 17
    init_scale: float = 0.1

    def __post_init__(self):
        for name in ("k", "learning_rate", "epochs", "batch_size", "init_scale"):
            if not getattr(self, name) > 0:
                raise ContractError(f"TrainConfig.{name} must be positive, got {getattr(self, name)!r}")
        if self.seed < 0:
            raise ContractError("TrainConfig.seed must be non-negative")


def param_shapes(V: int, k: int, d: int) -> dict[str, tuple[int, ...]]:
    return {
        "E": (V, k),
        "W_x": (k, k),
        "W_h": (k, k),
        "b_r": (k,),
        "W_p": (k, d),
        "b_p": (k,),
        "w_o": (k,),
        "b_o": (),
    }


@dataclass(eq=False)
class CheckerModel:
    vocab: dict[str, int]
    params: dict[str, np.ndarray]
    loss_curve: list[float] = field(default_factory=list)
    config: dict | None = None

    def __post_init__(self):
        if any(i == OOV for i in self.vocab.values()):
            raise ModelFormatError("vocabulary index 0 is reserved for out-of-vocabulary tokens")
        self.params = {n: np.asarray(self.params[n], dtype=np.float64) for n in PARAM_NAMES}
        expected = param_shapes(self.V, self.k, self.d)
        for n in PARAM_NAMES:
            if self.params[n].shape != expected[n]:
                raise ModelFormatError(f"parameter {n} has shape {self.params[n].shape}, expected {expected[n]}")
            if not np.all(np.isfinite(self.params[n])):
                raise ModelFormatError(f"parameter {n} is not finite")

    @property
    def k(self) -> int:
        return self.params["W_x"].shape[0]

    @property
    def d(self) -> int:
        return self.params["W_p"].shape[1]

    @property
    def V(self) -> int:
        return self.params["E"].shape[0]

    def token_ids(self, phrase: NounPhrase) -> list[int]:
        return [self.vocab.get(w, OOV) for w in phrase.tokens]

    def __eq__(self, other):
        if not isinstance(other, CheckerModel):
            return NotImplemented
        return (
            self.vocab == other.vocab
            and all(np.array_equal(self.params[n], other.params[n]) for n in PARAM_NAMES)
            and self.loss_curve == other.loss_curve
            and self.config == other.config
        )


def build_vocab(phrases: Sequence[NounPhrase]) -> dict[str, int]:
    words = sorted({w for p in phrases for w in p.tokens})
    return {w: i + 1 for i, w in enumerate(words)}


def init_checker(vocab: dict[str, int], d: int, cfg: TrainConfig, rng: np.random.Generator) -> CheckerModel:
    V = max(vocab.values(), default=0) + 1
    shapes = param_shapes(V, cfg.k, d)
    params = {n: rng.uniform(-cfg.init_scale, cfg.init_scale, size=shapes[n]) for n in PARAM_NAMES}
    return CheckerModel(dict(vocab), params, [], asdict(cfg))


def zero_checker(vocab: dict[str, int], d: int, k: int) -> CheckerModel:
    V = max(vocab.values(), default=0) + 1
    return CheckerModel(dict(vocab), {n: np.zeros(s) for n, s in param_shapes(V, k, d).items()})


# -- batched forward / backward -------------------------------------------------


def encode_batch(model: CheckerModel, phrases: Sequence[NounPhrase]) -> tuple[np.ndarray, np.ndarray]:
    """Right-padded token ids and a validity mask, both (B, L)."""
    seqs = [model.token_ids(p) for p in phrases]
    L = max((len(s) for s in seqs), default=0)
    ids = np.zeros((len(seqs), L), dtype=np.int64)
    mask = np.zeros((len(seqs), L))
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def _run_rnn(p, ids, mask):
    B, L = ids.shape
    X = p["E"][ids]
    h = np.zeros((B, p["W_x"].shape[0]))
    hs, hns = [h], []
    for s in range(L):
        hn = np.tanh(X[:, s] @ p["W_x"].T + h @ p["W_h"].T + p["b_r"])
        m = mask[:, s, None]
        h = m * hn + (1.0 - m) * h
        hns.append(hn)
        hs.append(h)
    return X, hs, hns


def _forward(p, F, ids, mask):
    X, hs, hns = _run_rnn(p, ids, mask)
    t = hs[-1]
    u = F @ p["W_p"].T + p["b_p"]
    z = u * t
    norm = np.sqrt(np.sum(z * z, axis=1))
    ok = norm > EPS
    safe = np.where(ok, norm, 1.0)
    zt = np.where(ok[:, None], z / safe[:, None], 0.0)
    logits = zt @ p["w_o"] + p["b_o"]
    cache = dict(X=X, hs=hs, hns=hns, t=t, u=u, zt=zt, ok=ok, norm=safe, F=F, ids=ids, mask=mask)
    return logits, cache


def _backward(p, cache, dlogit):
    g = {n: np.zeros_like(p[n]) for n in PARAM_NAMES}
    zt, ok, norm = cache["zt"], cache["ok"], cache["norm"]
    g["w_o"] = zt.T @ dlogit
    g["b_o"] = np.asarray(dlogit.sum())
    dzt = dlogit[:, None] * p["w_o"]
    dz = ok[:, None] * (dzt - zt * np.sum(zt * dzt, axis=1, keepdims=True)) / norm[:, None]
    du = dz * cache["t"]
    dh = dz * cache["u"]
    g["W_p"] = du.T @ cache["F"]
    g["b_p"] = du.sum(axis=0)

    X, hs, hns, ids, mask = cache["X"], cache["hs"], cache["hns"], cache["ids"], cache["mask"]
    for s in range(ids.shape[1] - 1, -1, -1):
        m = mask[:, s, None]
        da = m * dh * (1.0 - hns[s] ** 2)
        g["W_x"] += da.T @ X[:, s]
        g["W_h"] += da.T @ hs[s]
        g["b_r"] += da.sum(axis=0)
        np.add.at(g["E"], ids[:, s], da @ p["W_x"])
        dh = (1.0 - m) * dh + da @ p["W_h"]
    return g


def _bce(logits, y):
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def loss_and_grads(p, F, ids, mask, y):
    logits, cache = _forward(p, F, ids, mask)
    dlogit = (_sigmoid(logits) - y) / len(y)
    return _bce(logits, y), _backward(p, cache, dlogit)


def batch_loss(p, F, ids, mask, y) -> float:
    return _bce(_forward(p, F, ids, mask)[0], y)


# -- public scoring -------------------------------------------------------------


def encode_text(model: CheckerModel, phrase: NounPhrase) -> np.ndarray:
    ids, mask = encode_batch(model, [phrase])
    _, hs, _ = _run_rnn(model.params, ids, mask)
    return hs[-1][0]


def _check_dim(model, features):
    f = np.asarray(features, dtype=np.float64)
    if f.shape[-1] != model.d:
        raise ContractError(f"feature vector has dimension {f.shape[-1]}, model expects {model.d}")
    return f


def fuse_score(model: CheckerModel, features, phrase: NounPhrase) -> float:
    f = _check_dim(model, features)
    ids, mask = encode_batch(model, [phrase])
    logits, _ = _forward(model.params, f[None, :], ids, mask)
    return float(_sigmoid(logits[0]))


def score_many(model: CheckerModel, features, phrases: Sequence[NounPhrase]) -> np.ndarray:
    """Scores of several phrases against one image, in one batched pass."""
    f = _check_dim(model, features)
    ids, mask = encode_batch(model, phrases)
    logits, _ = _forward(model.params, np.broadcast_to(f, (len(phrases), f.size)), ids, mask)
    return _sigmoid(logits)


def checker_scorer(model: CheckerModel) -> Callable[[np.ndarray, NounPhrase], float]:
    """Scoring function ``(features, phrase) -> score`` with cached text encodings."""
    cache: dict[str, np.ndarray] = {}
    p = model.params

    def score(features, phrase: NounPhrase) -> float:
        f = _check_dim(model, features)
        t = cache.get(phrase.canonical)
        if t is None:
            t = cache[phrase.canonical] = encode_text(model, phrase)
        z = (p["W_p"] @ f + p["b_p"]) * t
        n = float(np.sqrt(z @ z))
        zt = z / n if n > EPS else np.zeros_like(z)
        return float(_sigmoid(zt @ p["w_o"] + p["b_o"]))

    return score


# -- training -------------------------------------------------------------------


def _pair_arrays(model, corpus, pairs):
    rows = {rec.id: i for i, rec in enumerate(corpus.records)}
    try:
        idx = np.array([rows[p.image_id] for p in pairs], dtype=np.int64)
    except KeyError as exc:
        raise ContractError(f"training pair references unknown image {exc.args[0]!r}") from None
    F = corpus.feature_matrix()[idx]
    ids, mask = encode_batch(model, [p.phrase for p in pairs])
    y = np.array([p.label for p in pairs])
    return F, ids, mask, y


def train_checker(corpus: Corpus, pairs: Sequence[TrainingPair], cfg: TrainConfig = TrainConfig()) -> CheckerModel:
    if not pairs:
        raise EmptyPairs("no training pairs")
    rng = np.random.default_rng(cfg.seed)
    model = init_checker(build_vocab([p.phrase for p in pairs]), corpus.feature_dim, cfg, rng)
    F, ids, mask, y = _pair_arrays(model, corpus, pairs)
    p = model.params
    curve = [batch_loss(p, F, ids, mask, y)]
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            b = order[start : start + cfg.batch_size]
            _, grads = loss_and_grads(p, F[b], ids[b], mask[b], y[b])
            for name in PARAM_NAMES:
                p[name] -= cfg.learning_rate * grads[name]
        loss = batch_loss(p, F, ids, mask, y)
        if not (np.isfinite(loss) and all(np.all(np.isfinite(v)) for v in p.values())):
            raise NonFiniteLoss(epoch, cfg.learning_rate)
        curve.append(loss)
        log.info("checker epoch %d loss %.6f", epoch, loss)
    model.loss_curve = curve
    return model


def predict(model: CheckerModel, corpus: Corpus, pairs: Sequence[TrainingPair]) -> np.ndarray:
    F, ids, mask, _ = _pair_arrays(model, corpus, pairs)
    logits, _ = _forward(model.params, F, ids, mask)
    return _sigmoid(logits)


# -- gradient check -------------------------------------------------------------

GradientFn = Callable[[dict, np.ndarray, np.ndarray, np.ndarray, np.ndarray], tuple]


def grad_check(
    model: CheckerModel,
    pair: tuple,
    step: float = 1e-5,
    gradient_fn: GradientFn = loss_and_grads,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``pair`` is ``(features, phrase, label)`` with label 1 for "present".
    Relative error per entry is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    features, phrase, label = pair
    F = _check_dim(model, features)[None, :]
    ids, mask = encode_batch(model, [phrase])
    y = np.array([float(label)])
    p = {n: v.copy() for n, v in model.params.items()}
    _, analytic = gradient_fn(p, F, ids, mask, y)

    worst = 0.0
    for name in PARAM_NAMES:
        arr = p[name]
        flat = arr.reshape(-1)
        ga = np.asarray(analytic[name]).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = batch_loss(p, F, ids, mask, y)
            flat[i] = orig - step
            down = batch_loss(p, F, ids, mask, y)
            flat[i] = orig
            gn = (up - down) / (2.0 * step)
            err = abs(ga[i] - gn) / max(1e-8, abs(ga[i]) + abs(gn))
            worst = max(worst, err)
    return worst


# -- serialization --------------------------------------------------------------


def checker_to_dict(model: CheckerModel) -> dict:
    return {
        "format": FORMAT,
        "dims": {"d": model.d, "k": model.k, "V": model.V},
        "vocab": dict(model.vocab),
        "params": {n: [float(x) for x in model.params[n].reshape(-1)] for n in PARAM_NAMES},
        "loss_curve": [float(x) for x in model.loss_curve],
        "config": model.config,
    }


def checker_from_dict(obj: dict) -> CheckerModel:
    if obj.get("format") != FORMAT:
        raise ModelFormatError(f"expected format {FORMAT!r}, got {obj.get('format')!r}")
    dims = obj["dims"]
    shapes = param_shapes(int(dims["V"]), int(dims["k"]), int(dims["d"]))
    try:
        params = {n: np.array(obj["params"][n], dtype=np.float64).reshape(shapes[n]) for n in PARAM_NAMES}
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"bad checker parameters: {exc}") from None
    return CheckerModel(
        {str(w): int(i) for w, i in obj["vocab"].items()},
        params,
        list(obj.get("loss_curve", [])),
        obj.get("config"),
    )


def save_checker(model: CheckerModel, path) -> None:
    Path(path).write_text(json.dumps(checker_to_dict(model)) + "\n", encoding="utf-8")


def load_checker(path) -> CheckerModel:
    return checker_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
