"""``dcsr`` command line: stats, synth, train, index, search, eval, mine-negatives.

Exit codes: 0 success, 1 usage error, 2 data or runtime error. Logs go to
stderr; results go to stdout or the file named by ``--out`` / ``--json``.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .corpus import conflict_stats, dump_dataset, load_dataset, load_passages, overlap_stats
from .encoder import CHECKPOINT_VERSION, encode_question, load_params
from .errors import DCSRError
from .index import INDEX_VERSION, build, import_vectors, load, passage_mean_index, save
from .retrieval import evaluate, mine_hard_negatives, rank_passages
from .sampler import Variant
from .synth import SynthSpec, write as write_synth
from .trainer import TrainConfig, concat_datasets, train

logger = logging.getLogger("dcsr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _sidecar(index_path) -> Path:
    return Path(str(index_path) + ".meta.json")


def _resolve(args, name: str):
    """Flag value, else the path recorded next to the index at build time."""
    value = getattr(args, name, None)
    if value:
        return value
    meta = _sidecar(args.index)
    if meta.exists():
        value = json.loads(meta.read_text()).get(name)
    if not value:
        raise UsageError(f"--{name} is required (no value recorded for index {args.index})")
    return value


def _emit(obj, out=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _ks(text: str) -> list:
    try:
        ks = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --ks value {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("--ks needs positive integers")
    return ks


def _distribution(text: str) -> dict:
    out = {}
    try:
        for part in text.split(","):
            k, v = part.split(":")
            out[int(k)] = float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad distribution {text!r}; use e.g. 1:0.5,3:0.5") from None
    return out


def cmd_stats(args):
    ds = load_dataset(args.dataset)
    result = conflict_stats(ds).to_dict()
    result["dropped"] = ds.dropped
    if args.dev:
        title, passage = overlap_stats(ds, load_dataset(args.dev))
        result["overlap"] = {"title": title, "passage": passage}
    _emit(result, args.out)


def cmd_synth(args):
    spec = SynthSpec(passages=args.passages, sentences_per_passage=args.sentences,
                     topics=args.topics, questions_per_passage=args.questions_per_passage,
                     seed=args.seed, dev_fraction=args.dev_fraction)
    paths = write_synth(spec, args.out)
    _emit({k: str(v) for k, v in paths.items()})


def cmd_train(args):
    sets = [load_dataset(p) for p in args.train]
    train_set = sets[0] if len(sets) == 1 else concat_datasets(sets, args.seed)
    dev_set = load_dataset(args.dev) if args.dev else []
    config = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                         strategy=args.strategy, seed=args.seed, dim=args.dim,
                         feature_space_size=args.features, context_blend=args.alpha,
                         eval_every=args.eval_every)
    report = train(train_set, dev_set, config, out_dir=args.out)
    _emit({"final_checkpoint": report.final_checkpoint,
           "best_checkpoint": report.best_checkpoint,
           "best_val_accuracy": report.best_val_accuracy,
           "epochs": len(report.epochs),
           "final_loss": report.losses[-1],
           "report": str(Path(args.out) / "report.jsonl")})


def cmd_index(args):
    if args.vectors:
        idx = import_vectors(args.vectors)
    else:
        if not args.checkpoint:
            raise UsageError("index needs --checkpoint unless --vectors is given")
        idx = build(load_passages(args.passages), load_params(args.checkpoint))
    save(idx, args.out)
    meta = {"passages": str(Path(args.passages).resolve()),
            "checkpoint": str(Path(args.checkpoint).resolve()) if args.checkpoint else None}
    _sidecar(args.out).write_text(json.dumps(meta, indent=2) + "\n")
    _emit({"index": str(args.out), "sentences": len(idx), "dim": idx.dim,
           "avg_sentences_per_passage": idx.avg_sentences_per_passage})


def cmd_search(args):
    idx = load(args.index)
    params = load_params(_resolve(args, "checkpoint"))
    depth = args.depth or idx.default_depth(args.top)
    ranked = rank_passages(idx, encode_question(args.query, params), depth,
                           max_passages=args.top, question_id=args.query)
    _emit(ranked.to_dict())


def cmd_eval(args):
    idx = load(args.index)
    params = load_params(_resolve(args, "checkpoint"))
    passages = load_passages(_resolve(args, "passages"))
    if args.granularity == "passage":
        idx = passage_mean_index(idx)
    report = evaluate(load_dataset(args.dataset), idx, params,
                      {p.id: p.source_text for p in passages}, args.ks, args.depth)
    _emit(report.to_dict(), args.json)


def cmd_mine(args):
    idx = load(args.index)
    params = load_params(_resolve(args, "checkpoint"))
    passages = {p.id: p for p in load_passages(_resolve(args, "passages"))}
    examples, report = mine_hard_negatives(load_dataset(args.dataset), idx, params, passages,
                                           args.per_question, args.depth, args.replace)
    dump_dataset(examples, args.out)
    _emit({"out": str(args.out), "questions": len(examples), "mined": report.mined,
           "unchanged": report.unchanged})


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dcsr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"dcsr {__version__} (checkpoint format v{CHECKPOINT_VERSION}, "
                           f"index format v{INDEX_VERSION})")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("stats", help="one-to-many conflict statistics of a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--dev", help="also report train/dev positive overlap")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("synth", help="generate a synthetic conflict-controlled corpus")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--passages", type=int, default=500)
    s.add_argument("--sentences", type=int, default=3)
    s.add_argument("--topics", type=int, default=3)
    s.add_argument("--questions-per-passage", type=_distribution, default={3: 1.0},
                   help="count:probability list, e.g. 1:0.5,3:0.5")
    s.add_argument("--dev-fraction", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train the toy bi-encoder")
    s.add_argument("--train", required=True, action="append",
                   help="dataset file; repeat to train on several datasets (Multi)")
    s.add_argument("--dev")
    s.add_argument("--epochs", type=int, default=40)
    s.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--strategy", choices=[v.value for v in Variant], default="inpassage+bm25")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--features", type=int, default=2**15, help="hashed feature space size")
    s.add_argument("--alpha", type=float, default=0.7, help="sentence vs passage blend")
    s.add_argument("--eval-every", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("index", help="build a sentence index")
    s.add_argument("--passages", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--vectors", help="import precomputed DVEC embeddings instead of encoding")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("search", help="rank passages for one question")
    s.add_argument("--index", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--query", required=True)
    s.add_argument("--top", type=int, default=100, help="passages to return")
    s.add_argument("--depth", type=int, help="sentences to retrieve (default ceil(top x k))")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("eval", help="top-k retrieval accuracy")
    s.add_argument("--index", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--ks", type=_ks, default=[1, 5, 20, 100])
    s.add_argument("--json", help="also write the report here")
    s.add_argument("--checkpoint")
    s.add_argument("--passages")
    s.add_argument("--depth", type=int)
    s.add_argument("--granularity", choices=["sentence", "passage"], default="sentence",
                   help="passage = mean-of-sentences baseline")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("mine-negatives", help="mine sentence-level hard negatives")
    s.add_argument("--index", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--per-question", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--passages")
    s.add_argument("--depth", type=int)
    s.add_argument("--replace", action="store_true", help="drop the original negatives")
    s.set_defaults(func=cmd_mine)
    return p


def _thread_limit(n):
    if n is None:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        logger.warning("threadpoolctl not installed; --threads ignored")
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            args.func(args)
    except UsageError as exc:
        print(f"dcsr: error: {exc}", file=sys.stderr)
        return 1
    except (DCSRError, OSError, ValueError, KeyError) as exc:
        print(f"dcsr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
