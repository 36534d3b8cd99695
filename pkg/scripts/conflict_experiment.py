"""Sentence vs passage granularity under one-to-many conflicts, per sampling strategy.

Trains one toy encoder per (strategy, seed) on a synthetic corpus and reports
Top-k accuracy of sentence-level retrieval with noisy-OR passage ranking next
to the mean-of-sentences passage baseline, plus first/last epoch validation
accuracy.

    python scripts/conflict_experiment.py --seeds 5 --epochs 15 --json results.json
"""

import argparse
import json
import logging
import time

import numpy as np

from dcsr.corpus import conflict_stats, parse_example
from dcsr.index import build, passage_mean_index
from dcsr.retrieval import evaluate
from dcsr.synth import SynthSpec, generate, split
from dcsr.trainer import TrainConfig, train


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--passages", type=int, default=500)
    ap.add_argument("--sentences", type=int, default=3)
    ap.add_argument("--topics", type=int, default=3)
    ap.add_argument("--questions-per-passage", type=int, default=3)
    ap.add_argument("--corpus-seed", type=int, default=0)
    ap.add_argument("--dev-fraction", type=float, default=0.2)
    ap.add_argument("--strategies", default="bm25x1,bm25x2,inpassage+bm25")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--lr", type=float, default=2.0)
    ap.add_argument("--alpha", type=float, default=0.7)
    ap.add_argument("--ks", default="1,5,20")
    ap.add_argument("--json", help="write per-run results here")
    return ap.parse_args()


def main():
    args = parse_args()
    logging.basicConfig(level=logging.WARNING)
    ks = tuple(int(k) for k in args.ks.split(","))
    corpus = generate(SynthSpec(passages=args.passages, sentences_per_passage=args.sentences,
                                topics=args.topics,
                                questions_per_passage={args.questions_per_passage: 1.0},
                                seed=args.corpus_seed))
    tr, dv = split(corpus, args.dev_fraction, args.corpus_seed)
    train_set = [parse_example(r) for r in tr]
    dev_set = [parse_example(r) for r in dv]
    texts = {p.id: p.source_text for p in corpus.passages}
    print(f"corpus: {len(corpus.passages)} passages, {len(train_set)} train / {len(dev_set)} dev "
          f"questions, conflict average {conflict_stats(train_set + dev_set).average:.2f}")

    rows = []
    for strategy in args.strategies.split(","):
        for seed in range(args.seeds):
            t0 = time.perf_counter()
            cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, strategy=strategy,
                              seed=seed, context_blend=args.alpha)
            report = train(train_set, dev_set, cfg)
            idx = build(corpus.passages, report.params)
            sent = evaluate(dev_set, idx, report.params, texts, ks).top_k_accuracy
            pas = evaluate(dev_set, passage_mean_index(idx), report.params, texts, ks).top_k_accuracy
            rows.append(dict(strategy=strategy, seed=seed, sentence=sent, passage=pas,
                             val_first=report.val_accuracies[0], val_last=report.val_accuracies[-1],
                             seconds=time.perf_counter() - t0))
            print(f"{strategy:>15} seed {seed}: sentence Top-{ks[1]} {sent[ks[1]]:.3f}  "
                  f"passage-mean {pas[ks[1]]:.3f}  val {rows[-1]['val_first']:.3f} -> "
                  f"{rows[-1]['val_last']:.3f}  ({rows[-1]['seconds']:.1f}s)", flush=True)

    print()
    header = "strategy".rjust(15) + "".join(f"  sent@{k:<3} pass@{k:<3}" for k in ks)
    print(header)
    for strategy in args.strategies.split(","):
        mine = [r for r in rows if r["strategy"] == strategy]
        cells = "".join(f"  {np.mean([r['sentence'][k] for r in mine]):.3f}    "
                        f"{np.mean([r['passage'][k] for r in mine]):.3f}   " for k in ks)
        print(strategy.rjust(15) + cells)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
