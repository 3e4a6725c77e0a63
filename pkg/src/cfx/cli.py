"""``cfx`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or contract error.  Every run
echoes its resolved configuration as JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .chunker import MATCH_MODES, chunk_text
from .corpus import Lexicon, load_corpus, save_corpus
from .critic import ReplayBackend, load_critic, save_critic, synthetic_backend, train_critic
from .encoder import TrainConfig, load_checker, save_checker, train_checker
from .errors import CfxError
from .evaluation import (
    explain_all,
    load_sentclf,
    make_scorer,
    run_eval,
    save_report,
    save_sentclf,
    train_sentence_classifier,
)
from .explainer import DEFAULT_POOL_CAP, METRICS, explain, load_external_explanations
from .negmine import build_inventory, load_pairs, make_training_pairs, save_pairs
from .synthworld import SynthSpec, generate

log = logging.getLogger("cfx")

CHECKERS = {
    "classifier": "classifier",
    "critic": "phrase-critic",
    "baseline": "random-baseline",
    "oracle": "oracle",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_train_flags(p):
    d = TrainConfig()
    p.add_argument("--k", type=int, default=d.k, help="embedding width (default %(default)s)")
    p.add_argument("--lr", type=float, default=d.learning_rate, help="learning rate (default %(default)s)")
    p.add_argument("--epochs", type=int, default=d.epochs, help="training epochs (default %(default)s)")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="mini-batch size (default %(default)s)")
    p.add_argument("--init-scale", type=float, default=d.init_scale, help="uniform init half-width (default %(default)s)")


def _add_selection_flags(p):
    p.add_argument("--checker", choices=sorted(CHECKERS), required=True, help="evidence checker")
    p.add_argument("--model", type=Path, help="checker or critic model file (classifier/critic)")
    p.add_argument("--grounding", type=Path, help="grounding dump (JSONL) replayed instead of the critic's recorded backend")
    p.add_argument("--external", type=Path, help="external explanations JSONL used as the candidate source")
    p.add_argument("--pool-cap", type=int, default=DEFAULT_POOL_CAP, help="max candidates per class (default %(default)s)")
    p.add_argument("--metric", choices=METRICS, default="euclidean", help="counter-class distance (default %(default)s)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads over images (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfx", description="Counterfactual explanations for feature-vector images.")
    parser.add_argument("--version", action="version", version=f"cfx {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress per-epoch loss lines")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic attribute-world corpus")
    p.add_argument("--spec", type=Path, help="JSON file mirroring SynthSpec (defaults otherwise)")
    p.add_argument("--out", type=Path, required=True, help="corpus JSONL to write")
    p.add_argument("--seed", type=int, help="overrides the spec seed (spec default 17)")
    p.add_argument("--violate-exclusivity", type=float, metavar="P",
                   help="per-(image, noun) probability of departing from the class adjective")

    p = sub.add_parser("chunk", help="print the noun phrases of a sentence")
    p.add_argument("--text", required=True)
    p.add_argument("--corpus", type=Path, help="take the lexicon from this corpus")

    p = sub.add_parser("pairs", help="dump positive/flipped-negative training pairs")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=17)

    for name, helptext in (("train-checker", "train the fusion classifier"), ("train-critic", "train the phrase critic")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--corpus", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--pairs", type=Path, help="training pairs JSONL (mined from the corpus otherwise)")
        p.add_argument("--seed", type=int, default=17)
        _add_train_flags(p)
        if name == "train-critic":
            p.add_argument("--noise-sigma", type=float, default=0.0,
                           help="synthetic grounding noise (default %(default)s)")
            p.add_argument("--grounding", type=Path, help="replay this grounding dump instead of the synthetic backend")

    p = sub.add_parser("train-sentclf", help="train the bag-of-words sentence classifier")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=17)
    _add_train_flags(p)

    p = sub.add_parser("explain", help="explain why an image is not of a counter-class")
    p.add_argument("--corpus", type=Path, required=True)
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--image", help="image id")
    target.add_argument("--all", action="store_true", help="explain every image")
    p.add_argument("--counter-class", help="class id (nearest different-class image otherwise)")
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--out", type=Path, help="write JSONL traces here instead of stdout (with --all)")
    _add_selection_flags(p)

    p = sub.add_parser("eval", help="phrase error and accuracy with counterfactual text")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--sentclf", type=Path, help="sentence classifier (trained with --seed otherwise)")
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--match", choices=MATCH_MODES, default="exact-np", help="phrase matching (default %(default)s)")
    p.add_argument("--out", type=Path, help="report JSON (stdout otherwise)")
    _add_selection_flags(p)
    return parser


def _resolved(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())}


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        k=args.k,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        init_scale=args.init_scale,
    )


def _pairs(args, corpus):
    if args.pairs is not None:
        return load_pairs(args.pairs)
    return make_training_pairs(corpus, build_inventory(corpus), np.random.default_rng(args.seed))


def _scorer(args, corpus, kind):
    if kind in ("random-baseline", "oracle"):
        return make_scorer(kind, corpus)
    if args.model is None:
        raise UsageError(f"--checker {args.checker} needs --model")
    if kind == "classifier":
        return make_scorer(kind, corpus, checker=load_checker(args.model))
    backend = ReplayBackend(corpus, args.grounding) if args.grounding else None
    return make_scorer(kind, corpus, critic=load_critic(args.model), backend=backend)


def _write_json(obj, path):
    text = json.dumps(obj, indent=1) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_synth(args):
    spec = SynthSpec.from_json(args.spec) if args.spec else SynthSpec()
    if args.seed is not None:
        spec.seed = args.seed
    if args.violate_exclusivity is not None:
        spec.violate_exclusivity = args.violate_exclusivity
    corpus = generate(spec)
    save_corpus(corpus, args.out)
    log.info("wrote %d records (d=%d) to %s", len(corpus), corpus.feature_dim, args.out)


def cmd_chunk(args):
    lexicon = load_corpus(args.corpus).lexicon if args.corpus else Lexicon.default()
    for phrase in chunk_text(args.text, lexicon):
        print(phrase.canonical)


def cmd_pairs(args):
    corpus = load_corpus(args.corpus)
    pairs = make_training_pairs(corpus, build_inventory(corpus), np.random.default_rng(args.seed))
    save_pairs(pairs, args.out)
    log.info("wrote %d pairs to %s", len(pairs), args.out)


def cmd_train_checker(args):
    corpus = load_corpus(args.corpus)
    model = train_checker(corpus, _pairs(args, corpus), _train_config(args))
    save_checker(model, args.out)


def cmd_train_critic(args):
    corpus = load_corpus(args.corpus)
    if args.grounding:
        backend = ReplayBackend(corpus, args.grounding)
    else:
        backend = synthetic_backend(corpus, args.noise_sigma, args.seed)
    model = train_critic(corpus, backend, _pairs(args, corpus), _train_config(args))
    save_critic(model, args.out)


def cmd_train_sentclf(args):
    corpus = load_corpus(args.corpus)
    save_sentclf(train_sentence_classifier(corpus, _train_config(args)), args.out)


def cmd_explain(args):
    corpus = load_corpus(args.corpus)
    kind = CHECKERS[args.checker]
    scorer = _scorer(args, corpus, kind)
    external = load_external_explanations(args.external) if args.external else None
    if args.all:
        if args.counter_class:
            raise UsageError("--counter-class cannot be combined with --all")
        expls = explain_all(corpus, kind, scorer, args.seed, external, args.pool_cap, args.metric, args.jobs)
        lines = "".join(json.dumps(e.trace()) + "\n" for e in expls)
        if args.out:
            args.out.write_text(lines, encoding="utf-8")
        else:
            sys.stdout.write(lines)
        return
    rng = np.random.default_rng(args.seed) if kind == "random-baseline" else None
    expl = explain(
        corpus,
        args.image,
        args.counter_class,
        kind,
        scorer=scorer,
        rng=rng,
        external=external,
        pool_cap=args.pool_cap,
        metric=args.metric,
    )
    print(expl.sentence)
    _write_json(expl.trace(), args.out)


def cmd_eval(args):
    corpus = load_corpus(args.corpus)
    kind = CHECKERS[args.checker]
    scorer = _scorer(args, corpus, kind)
    if args.sentclf:
        sentclf = load_sentclf(args.sentclf, corpus.lexicon)
    else:
        sentclf = train_sentence_classifier(corpus, TrainConfig(seed=args.seed))
    external = load_external_explanations(args.external) if args.external else None
    report = run_eval(
        corpus,
        kind,
        sentclf,
        seed=args.seed,
        scorer=scorer,
        match=args.match,
        external=external,
        pool_cap=args.pool_cap,
        metric=args.metric,
        jobs=args.jobs,
    )
    if args.out:
        save_report(report, args.out)
    else:
        _write_json(report.to_dict(), None)
    log.info(
        "%s: phrase_error %.4f  acc_without_cf %.4f  acc_with_cf %.4f",
        kind, report.phrase_error, report.acc_without_cf, report.acc_with_cf,
    )


COMMANDS = {
    "synth": cmd_synth,
    "chunk": cmd_chunk,
    "pairs": cmd_pairs,
    "train-checker": cmd_train_checker,
    "train-critic": cmd_train_critic,
    "train-sentclf": cmd_train_sentclf,
    "explain": cmd_explain,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
        force=True,
    )
    print(json.dumps(_resolved(args)), file=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cfx: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"cfx: error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except (CfxError, OSError, json.JSONDecodeError) as exc:
        print(f"cfx: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
