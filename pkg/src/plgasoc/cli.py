"""Command-line workbench: ``train``, ``generate``, ``diagnose`` and ``report``.

Failures print a single ``error <ErrorClass>: message`` line on stderr and
exit with status 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import metrics
from .config import ExperimentConfig, load_config, resolve
from .errors import InputError, PlgaError, TrainingDiverged
from .generation import LanguageModel, RunBundle, encode_prompt, run_single, run_protocol
from .model import init_parameters
from .persistence import load_bundle, load_checkpoint, save_bundle, save_checkpoint
from .report import emit_report, load_summary, write_comparison
from .tensor import Rng
from .tokenizer import PAD, detokenize, ingest_corpus, read_prompts
from .trainer import SpikeDetector, train_loop

log = logging.getLogger("plgasoc")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.config).parent
    seed = cfg.experiment.seed if args.seed is None else args.seed
    out = Path(args.out or resolve(cfg.experiment.out_dir, base))
    out.mkdir(parents=True, exist_ok=True)
    if not cfg.experiment.corpus_path:
        raise InputError("experiment.corpus_path is required for training")
    blocks = ingest_corpus(resolve(cfg.experiment.corpus_path, base), cfg.model.context_length + 1,
                           max_bytes=cfg.train.max_corpus_bytes or None)
    rng = Rng(seed)
    params = init_parameters(cfg.model, rng)
    detector = SpikeDetector(cfg.train.dk_window, cfg.train.dk_ratio, cfg.train.dk_margin)
    ckpt = out / "checkpoint.plgc"

    def on_window(step, p, tlog):
        save_checkpoint(ckpt, p, cfg.model, {"step": step, "seed": seed})
        tlog.write_csv(out / "trainlog.csv")

    try:
        tlog, params = train_loop(params, cfg.model, blocks, cfg.optimizer, rng, batch_size=cfg.train.batch_size,
                                  log_window=cfg.train.log_window, pad_id=PAD, detector=detector,
                                  checkpoint_fn=on_window)
    except TrainingDiverged as exc:
        if exc.last_good is not None:
            params.load_state_dict(exc.last_good)
            save_checkpoint(out / "checkpoint_last_good.plgc", params, cfg.model, {"diverged_at": exc.step})
        raise
    tlog.write_csv(out / "trainlog.csv")
    tlog.write_steps_csv(out / "steps.csv")
    print(f"trained {cfg.optimizer.total_steps} steps, checkpoint {ckpt}")
    if tlog.dragon_kings:
        print(f"loss spikes at steps {tlog.dragon_kings}")
    return 0


def cmd_generate(args) -> int:
    params, model_cfg, _ = load_checkpoint(args.checkpoint)
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    sampler = cfg.sampler
    if args.seed is not None:
        sampler.seed = args.seed
    sampler.greedy = sampler.greedy or args.greedy
    prompt_path = args.prompts or (cfg.experiment.prompt_path and resolve(cfg.experiment.prompt_path, Path(args.config).parent))
    if not prompt_path:
        raise InputError("no prompt file given (--prompts or experiment.prompt_path)")
    prompts = [p for p in read_prompts(prompt_path) if p.strip()]
    if not prompts:
        raise InputError(f"no prompts in {prompt_path}")
    model = LanguageModel(model_cfg, params)
    if args.mode == "protocol":
        bundle = run_protocol(model, prompts, sampler, prompt_words=cfg.train.prompt_words)
    else:
        ids = list(range(len(prompts)))
        encoded = [encode_prompt(p, cfg.train.prompt_words, model_cfg.context_length) for p in prompts]
        name = "run1" if args.mode == "full" else "cached"
        bundle = RunBundle(runs={name: run_single(model, name, args.mode, sampler.seed, ids, encoded, sampler)})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_bundle(out, bundle, {"checkpoint": str(args.checkpoint)})
    first = next(iter(bundle.runs.values()))
    for sid, toks in zip(first.sample_ids, first.outputs):
        print(f"[{sid}] {detokenize(toks).decode('utf-8', errors='replace')!r}")
    return 0


def cmd_diagnose(args) -> int:
    bundle = load_bundle(args.bundle)
    missing = {"run1", "run2", "cached"} - set(bundle.runs)
    if missing:
        raise InputError(f"bundle lacks runs {sorted(missing)}; generate with --mode protocol")
    rep = metrics.build_report(bundle, model_id=args.model_id or Path(args.bundle).stem, threshold=args.threshold,
                               histogram_runs=() if args.no_histograms else ("run1",),
                               heatmaps=() if args.no_histograms else None)
    emit_report(bundle, rep, args.out)
    print(json.dumps({"model_id": rep.model_id, "phase": rep.phase.phase,
                      "G_LM": rep.order_parameters["G_LM"]}))
    return 0


def cmd_report(args) -> int:
    summaries = [load_summary(p) for p in args.summaries]
    path = write_comparison(summaries, args.out)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plgasoc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (default: experiment.out_dir)")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="generate continuations and dump deductive outputs")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--prompts")
    g.add_argument("--config")
    g.add_argument("--out", required=True, help="bundle file to write")
    g.add_argument("--seed", type=int)
    g.add_argument("--mode", choices=("protocol", "full", "cached"), default="protocol",
                   help="'protocol' runs two uncached runs and one cached run")
    g.add_argument("--greedy", action="store_true")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("diagnose", help="statistics and order parameters of a bundle")
    d.add_argument("--bundle", required=True)
    d.add_argument("--out", required=True, help="report directory")
    d.add_argument("--model-id")
    d.add_argument("--threshold", type=float, default=metrics.DEFAULT_THRESHOLD)
    d.add_argument("--no-histograms", action="store_true")
    d.set_defaults(func=cmd_diagnose)

    r = sub.add_parser("report", help="compare several diagnosed models")
    r.add_argument("summaries", nargs="+", help="report directories or summary.json files")
    r.add_argument("--out", required=True, help="comparison CSV to write")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PlgaError, OSError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
