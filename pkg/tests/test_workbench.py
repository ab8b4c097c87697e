import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plgasoc import cli, metrics
from plgasoc import report as R
from plgasoc.config import ExperimentConfig, dumps, load_config, loads, save_config
from plgasoc.errors import FormatError, InputError
from plgasoc.generation import LanguageModel, SamplerConfig, run_protocol
from plgasoc.model import ModelConfig, init_parameters
from plgasoc.persistence import load_bundle, load_checkpoint, save_bundle, save_checkpoint
from plgasoc.tensor import Rng
from plgasoc.tokenizer import BOS, EOS, PAD, detokenize, ingest_corpus, pack_blocks, split_documents, tokenize

from .bundles import bundle_of, random_run

SMALL = ModelConfig(num_layers=1, num_heads=2, d_k=2, d_ff=4, context_length=16, resnet_layers=1)


# --- tokenizer and corpus ----------------------------------------------------------


def test_tokenizer_examples():
    assert tokenize(b"") == [] and detokenize([]) == b""
    assert tokenize(b"AB") == [65, 66] and detokenize([65, 66]) == b"AB"
    assert tokenize(b"Ab") == [65, 98]
    assert detokenize([BOS, 104, 105, EOS, PAD]) == b"hi"
    with pytest.raises(InputError):
        detokenize([259])
    with pytest.raises(InputError):
        detokenize([BOS], strip_special=False)


@given(st.binary(max_size=1024))
def test_tokenizer_round_trip(data):
    assert detokenize(tokenize(data)) == data


def test_single_block_corpus(tmp_path):
    (tmp_path / "c.txt").write_bytes(b"x" * 14)
    blocks = ingest_corpus(tmp_path / "c.txt", 16)
    assert blocks.tolist() == [[BOS] + [120] * 14 + [EOS]]


def test_documents_separated_by_eos():
    blocks = pack_blocks(split_documents(b"ab\n\ncd"), 8)
    assert blocks.tolist() == [[BOS, 97, 98, EOS, BOS, 99, 100, EOS]]


@given(st.lists(st.binary(min_size=1, max_size=40), min_size=1, max_size=10), st.integers(2, 33))
def test_block_count(docs, ctx):
    total = sum(len(d) + 2 for d in docs)
    blocks = pack_blocks(docs, ctx)
    assert blocks.shape == (math.ceil(total / ctx), ctx)
    assert np.all(blocks.reshape(-1)[total:] == PAD)


def test_empty_corpus(tmp_path):
    (tmp_path / "e.txt").write_bytes(b"\n\n\n\n")
    with pytest.raises(InputError):
        ingest_corpus(tmp_path / "e.txt", 8)
    with pytest.raises(InputError):
        ingest_corpus(tmp_path / "missing.txt", 8)


# --- config ---------------------------------------------------------------------------------


def random_config(r) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.model = ModelConfig(num_layers=int(r.integers(1, 6)), num_heads=int(r.integers(1, 5)),
                            d_k=int(r.integers(1, 32)), eps=float(r.uniform(1e-12, 1e-3)),
                            density=str(r.choice(["global", "prefix"])), identity_glm=bool(r.integers(0, 2)))
    warm = int(r.integers(0, 1000))
    cfg.optimizer.lr_max = float(r.uniform(1e-5, 1e-2))
    cfg.optimizer.warmup_steps, cfg.optimizer.total_steps = warm, warm + int(r.integers(0, 1000))
    cfg.sampler.top_p = float(r.uniform(0.01, 1.0))
    cfg.sampler.temperature = float(r.uniform(0.1, 3.0))
    cfg.experiment.seed = int(r.integers(0, 2**63))
    cfg.experiment.model_id = f"m{int(r.integers(0, 1000))}"
    return cfg


def test_config_round_trip_random():
    r = np.random.default_rng(0)
    for _ in range(100):
        cfg = random_config(r)
        assert loads(dumps(cfg)) == cfg


def test_config_rejects_unknown(tmp_path):
    with pytest.raises(FormatError):
        loads("[model]\nnum_layers = 2\nwidth = 3\n")
    with pytest.raises(FormatError):
        loads("[extras]\nx = 1\n")
    with pytest.raises(FormatError):
        loads("[model]\nnum_layers = two\n")
    with pytest.raises(InputError):
        loads("[model]\nnum_layers = 0\n")


def test_config_checks_paths(tmp_path):
    cfg = ExperimentConfig()
    cfg.experiment.corpus_path = "nowhere.txt"
    save_config(cfg, tmp_path / "c.ini")
    with pytest.raises(InputError):
        load_config(tmp_path / "c.ini")
    (tmp_path / "nowhere.txt").write_text("hi")
    assert load_config(tmp_path / "c.ini") == cfg


# --- persistence ---------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    r = np.random.default_rng(1)
    for trial in range(100):
        cfg = ModelConfig(num_layers=int(r.integers(1, 3)), num_heads=int(r.integers(1, 3)),
                          d_k=int(r.integers(1, 4)), d_ff=int(r.integers(1, 5)), vocab_size=int(r.integers(2, 9)),
                          resnet_layers=int(r.integers(1, 3)))
        params = init_parameters(cfg, Rng(trial))
        for t in params.named_tensors().values():
            t.data = r.normal(size=t.shape) * 10.0 ** r.integers(-300, 300)
        save_checkpoint(tmp_path / "ck", params, cfg, {"trial": trial})
        loaded, cfg2, extra = load_checkpoint(tmp_path / "ck")
        assert cfg2 == cfg and extra == {"trial": trial}
        for k, v in params.state_dict().items():
            assert loaded.state_dict()[k].tobytes() == v.tobytes(), k


def test_checkpoint_detects_corruption(tmp_path):
    params = init_parameters(SMALL, Rng(0))
    path = tmp_path / "ck"
    save_checkpoint(path, params, SMALL)
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(path)
    path.write_bytes(b"nonsense")
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_bundle_round_trip(tmp_path):
    r = np.random.default_rng(2)
    for _ in range(100):
        L, H, dk, n = (int(x) for x in r.integers(1, 4, size=4))
        b = bundle_of(*(random_run(r, n, L, H, dk, name) for name in ("run1", "run2", "cached")))
        save_bundle(tmp_path / "b", b)
        back = load_bundle(tmp_path / "b")
        assert set(back.runs) == set(b.runs)
        for name, run in b.runs.items():
            other = back.runs[name]
            assert other.sample_ids == run.sample_ids and other.outputs == run.outputs
            for x, y in zip(run.deductives, other.deductives):
                for t in ("A", "A_LM", "A_P", "G_LM"):
                    assert x[t].tobytes() == y[t].tobytes()


def test_wrong_kind_rejected(tmp_path):
    save_checkpoint(tmp_path / "ck", init_parameters(SMALL, Rng(0)), SMALL)
    with pytest.raises(FormatError):
        load_bundle(tmp_path / "ck")


# --- reports ---------------------------------------------------------------------------------


def p_zero_bundle():
    params = init_parameters(SMALL, Rng(0))
    for layer in params.layers:
        layer.plga.P.data[...] = 0.0
    model = LanguageModel(SMALL, params)
    return run_protocol(model, ["alpha beta", "gamma"], SamplerConfig(max_new_tokens=4))


def test_p_zero_report(tmp_path):
    b = p_zero_bundle()
    rep = metrics.build_report(b, "pzero")
    files = R.emit_report(b, rep, tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["order_parameter"]["G_LM"] == 0.0
    assert summary["phase"] == "NearCritical"
    header = (tmp_path / "report.csv").read_text().splitlines()[0]
    assert header == ",".join(R.REPORT_COLUMNS)
    assert (tmp_path / "histograms_run1.csv").read_text().startswith("tensor,bucket_left,bucket_right,density\n")
    heat = R.heatmap_array(tmp_path / "heatmap_A_L0_H0.csv")
    np.testing.assert_array_equal(heat, rep.heatmaps[(0, 0)])
    assert len(files) == 4


def test_report_deterministic(tmp_path):
    b = p_zero_bundle()
    rep = metrics.build_report(b, "m")
    R.emit_report(b, rep, tmp_path / "a")
    R.emit_report(b, metrics.build_report(b, "m"), tmp_path / "b")
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_no_payload_requests(tmp_path):
    b = p_zero_bundle()
    rep = metrics.build_report(b, "m", histogram_runs=(), heatmaps=())
    R.emit_report(b, rep, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["report.csv", "summary.json"]


def test_report_failure_leaves_nothing(tmp_path, monkeypatch):
    b = p_zero_bundle()
    rep = metrics.build_report(b, "m")
    real = R._write_csv

    def flaky(path, header, rows):
        if "heatmap" in path.name:
            raise OSError("disk full")
        real(path, header, rows)

    monkeypatch.setattr(R, "_write_csv", flaky)
    with pytest.raises(OSError):
        R.emit_report(b, rep, tmp_path / "out")
    assert list((tmp_path / "out").iterdir()) == []
    (tmp_path / "file").write_text("x")
    with pytest.raises(OSError):
        R.emit_report(b, rep, tmp_path / "file")


def test_comparison_table(tmp_path):
    from .fixtures import NORMALIZED_RMSE_1C

    summaries = [{"model_id": m, "order_parameter": v, "phase": metrics.classify_phase(v["G_LM"]).phase}
                 for m, (_, v) in NORMALIZED_RMSE_1C.items()]
    R.write_comparison(summaries[::-1], tmp_path / "cmp.csv")
    lines = (tmp_path / "cmp.csv").read_text().splitlines()
    assert lines[0] == "model,group,A,A_LM,A_P,G_LM"
    assert [l.split(",")[1] for l in lines[1:]] == ["NearCritical"] * 5 + ["SubCritical"] * 5


# --- command line ---------------------------------------------------------------------------


def test_cli_pipeline(tmp_path, capsys):
    (tmp_path / "corpus.txt").write_text("the quick brown fox jumps over the lazy dog\n\n" * 20)
    (tmp_path / "prompts.txt").write_text("the quick\nlazy dog\n")
    cfg = ExperimentConfig()
    cfg.model = SMALL
    cfg.optimizer.warmup_steps, cfg.optimizer.total_steps = 2, 6
    cfg.sampler.max_new_tokens = 3
    cfg.train.log_window = 3
    cfg.experiment.corpus_path = "corpus.txt"
    cfg.experiment.prompt_path = "prompts.txt"
    cfg.experiment.out_dir = "out"
    save_config(cfg, tmp_path / "exp.ini")

    assert cli.main(["train", "--config", str(tmp_path / "exp.ini")]) == 0
    ck = tmp_path / "out" / "checkpoint.plgc"
    assert ck.exists()
    assert (tmp_path / "out" / "trainlog.csv").read_text().startswith("step,loss_avg,acc_avg,lr,dragon_king\n")

    bundle = tmp_path / "bundle.plgc"
    assert cli.main(["generate", "--checkpoint", str(ck), "--config", str(tmp_path / "exp.ini"),
                     "--out", str(bundle), "--seed", "3"]) == 0
    assert cli.main(["diagnose", "--bundle", str(bundle), "--out", str(tmp_path / "rep"), "--model-id", "tiny"]) == 0
    assert json.loads((tmp_path / "rep" / "summary.json").read_text())["model_id"] == "tiny"
    assert cli.main(["report", str(tmp_path / "rep"), "--out", str(tmp_path / "cmp.csv")]) == 0
    assert (tmp_path / "cmp.csv").read_text().splitlines()[1].startswith("tiny,")

    single = tmp_path / "single.plgc"
    assert cli.main(["generate", "--checkpoint", str(ck), "--prompts", str(tmp_path / "prompts.txt"),
                     "--out", str(single), "--mode", "cached", "--greedy"]) == 0
    assert set(load_bundle(single).runs) == {"cached"}


def test_cli_error_line(tmp_path, capsys):
    assert cli.main(["diagnose", "--bundle", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error InputError: ")
