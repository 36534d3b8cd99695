"""End-to-end CLI walk-through: synth, stats, train, index, eval, search, mine, retrain.

    python scripts/pipeline_demo.py --workdir /tmp/dcsr-demo
"""

import argparse
import shlex
import sys
from pathlib import Path

from dcsr.cli import run


def step(*argv):
    argv = [str(a) for a in argv]
    print(f"\n$ dcsr {shlex.join(argv)}", flush=True)
    code = run(argv)
    if code:
        sys.exit(f"step failed with exit code {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="dcsr-demo")
    ap.add_argument("--passages", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=10)
    args = ap.parse_args()
    w = Path(args.workdir)

    step("synth", "--out", w / "data", "--passages", args.passages, "--seed", 0)
    step("stats", "--dataset", w / "data/train.jsonl", "--dev", w / "data/dev.jsonl")
    step("train", "--train", w / "data/train.jsonl", "--dev", w / "data/dev.jsonl",
         "--epochs", args.epochs, "--out", w / "run")
    step("index", "--passages", w / "data/passages.jsonl", "--checkpoint", w / "run/best.ckpt",
         "--out", w / "sentences.didx")
    step("eval", "--index", w / "sentences.didx", "--dataset", w / "data/dev.jsonl",
         "--ks", "1,5,20", "--json", w / "eval.json")
    step("eval", "--index", w / "sentences.didx", "--dataset", w / "data/dev.jsonl",
         "--ks", "1,5,20", "--granularity", "passage")
    question = (w / "data/dev.jsonl").read_text().split('"question": "')[1].split('"')[0]
    step("search", "--index", w / "sentences.didx", "--query", question, "--top", 3)
    step("mine-negatives", "--index", w / "sentences.didx", "--dataset", w / "data/train.jsonl",
         "--per-question", 1, "--out", w / "data/train.mined.jsonl")
    step("train", "--train", w / "data/train.mined.jsonl", "--dev", w / "data/dev.jsonl",
         "--epochs", args.epochs, "--out", w / "run-mined")


if __name__ == "__main__":
    main()
