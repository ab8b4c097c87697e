"""Cut prompt lines out of a corpus file: one prompt per line, blank lines skipped.

    python3 scripts/make_prompts.py data/corpus.txt data/prompts.txt --count 32
"""
from __future__ import annotations

import argparse
import random
from pathlib import Path


def make_prompts(corpus: Path, count: int, words: int, seed: int) -> list[str]:
    text = corpus.read_bytes().decode("utf-8", errors="replace")
    tokens = text.split()
    if len(tokens) < words:
        raise SystemExit(f"{corpus} has only {len(tokens)} words")
    rng = random.Random(seed)
    starts = sorted(rng.sample(range(len(tokens) - words + 1), count))
    return [" ".join(tokens[s : s + words]) for s in starts]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("corpus", type=Path)
    ap.add_argument("out", type=Path)
    ap.add_argument("--count", type=int, default=32)
    ap.add_argument("--words", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    prompts = make_prompts(args.corpus, args.count, args.words, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text("\n".join(prompts) + "\n", encoding="utf-8")
    print(f"wrote {len(prompts)} prompts to {args.out}")


if __name__ == "__main__":
    main()
