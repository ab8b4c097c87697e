"""Warm-up and learning-rate sweep: train, generate, diagnose, then compare.

Each grid point trains a small model, runs the three-run generation protocol
on a shared prompt set and diagnoses the dump. The final comparison table
lists the normalised cached-vs-uncached RMSE of every deductive tensor for
all grid points, near-critical models first.

    python3 scripts/run_desk_experiment.py --steps 300 --warmups 0 30 --lrs 1e-3 3e-3
"""
from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from build_corpus import build  # noqa: E402
from make_prompts import make_prompts  # noqa: E402

from plgasoc.cli import main as cli_main  # noqa: E402
from plgasoc.config import ExperimentConfig, save_config  # noqa: E402


def run(argv: list[str]) -> None:
    code = cli_main(argv)
    if code:
        sys.exit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--warmups", type=int, nargs="+", default=[0, 30])
    ap.add_argument("--lrs", type=float, nargs="+", default=[1e-3, 3e-3])
    ap.add_argument("--prompts", type=int, default=8)
    ap.add_argument("--new-tokens", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    corpus, prompts = out / "corpus.txt", out / "prompts.txt"
    if not corpus.exists():
        build(corpus)
    prompts.write_text("\n".join(make_prompts(corpus, args.prompts, 8, args.seed)) + "\n", encoding="utf-8")

    reports = []
    for warmup, lr in itertools.product(args.warmups, args.lrs):
        name = f"w{warmup}_lr{lr:g}"
        cfg = ExperimentConfig()
        cfg.model.num_layers, cfg.model.num_heads, cfg.model.d_k, cfg.model.context_length = 2, 2, 8, 64
        cfg.optimizer.lr_max, cfg.optimizer.warmup_steps, cfg.optimizer.total_steps = lr, warmup, args.steps
        cfg.sampler.max_new_tokens, cfg.sampler.seed = args.new_tokens, args.seed
        cfg.train.log_window = max(1, args.steps // 5)
        cfg.experiment.seed, cfg.experiment.model_id = args.seed, name
        cfg.experiment.corpus_path, cfg.experiment.prompt_path = "corpus.txt", "prompts.txt"
        ini = out / f"{name}.ini"
        save_config(cfg, ini)
        run_dir = out / name
        print(f"== {name}")
        run(["train", "--config", str(ini), "--out", str(run_dir)])
        run(["generate", "--checkpoint", str(run_dir / "checkpoint.plgc"), "--config", str(ini),
             "--out", str(run_dir / "bundle.plgb")])
        run(["diagnose", "--bundle", str(run_dir / "bundle.plgb"), "--out", str(run_dir / "report"),
             "--model-id", name])
        reports.append(str(run_dir / "report"))

    run(["report", *reports, "--out", str(out / "comparison.csv")])
    print((out / "comparison.csv").read_text())
    for r in reports:
        s = json.loads((Path(r) / "summary.json").read_text())
        print(f"{s['model_id']:>16}  {s['phase']:<12}  G_LM {s['order_parameter']['G_LM']}")


if __name__ == "__main__":
    main()
