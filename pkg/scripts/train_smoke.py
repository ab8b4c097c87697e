"""Short training run on the OS-file corpus; prints the windowed loss curve.

    python3 scripts/train_smoke.py --steps 2000 --out runs/smoke
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from build_corpus import build  # noqa: E402

from plgasoc.config import ExperimentConfig, save_config  # noqa: E402
from plgasoc.cli import main as cli_main  # noqa: E402
from plgasoc.tokenizer import VOCAB_SIZE  # noqa: E402


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--warmup", type=int, default=200)
    ap.add_argument("--lr", type=float, default=1.2e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/smoke"))
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    corpus = args.out / "corpus.txt"
    if not corpus.exists():
        build(corpus)
    cfg = ExperimentConfig()
    cfg.model.num_layers, cfg.model.num_heads, cfg.model.d_k, cfg.model.context_length = 2, 2, 16, 64
    cfg.optimizer.lr_max, cfg.optimizer.warmup_steps, cfg.optimizer.total_steps = args.lr, args.warmup, args.steps
    cfg.train.log_window = max(1, args.steps // 10)
    cfg.experiment.seed, cfg.experiment.corpus_path = args.seed, "corpus.txt"
    save_config(cfg, args.out / "smoke.ini")

    t0 = time.perf_counter()
    code = cli_main(["train", "--config", str(args.out / "smoke.ini"), "--out", str(args.out)])
    if code:
        sys.exit(code)
    print(f"{time.perf_counter() - t0:.1f}s; uniform-prediction loss ln({VOCAB_SIZE}) = {math.log(VOCAB_SIZE):.3f}")
    print((args.out / "trainlog.csv").read_text())


if __name__ == "__main__":
    main()
