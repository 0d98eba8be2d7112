import json
from pathlib import Path

import numpy as np
import pytest

from kneecast.cli import main
from kneecast.dataset import load_example_cache
from kneecast.preprocess import WindowSpec, segment_stream


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Synthesized subjects plus one trained tiny SIC checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    for seed, name in ((1, "a"), (2, "b"), (5, "new")):
        assert run("synth", "--cycles", 5, "--seed", seed, "--forces",
                   "--subject-id", f"s{seed}", "-o", root / f"{name}.csv") == 0
    config = {
        "seed": 3,
        "scenario": "SIC",
        "horizon": 1,
        "data": ["a.csv", "b.csv"],
        "window": {"window_ms": 400, "stride_ms": 100},
        "hyper": {"conv1_filters": 2, "conv2_filters": 4, "lstm1_hidden": 4,
                  "lstm2_hidden": 4, "kin_lstm_hidden": 4, "attn_dim": 4,
                  "force_feature_dim": 4},
        "train": {"batch_size": 32, "max_epochs": 6, "seed": 3},
        "split": {"kind": "trial_80_20"},
        "output_dir": "run1",
    }
    (root / "train.json").write_text(json.dumps(config))
    assert run("train", "--config", root / "train.json") == 0
    assert (root / "run1" / "model.ckpt").exists()
    return root


def test_synth_deterministic_bytes(tmp_path):
    for out in ("x1.csv", "x2.csv"):
        assert run("synth", "--cycles", 3, "--condition", "abnormal",
                   "--seed", 7, "-o", tmp_path / out) == 0
    assert (tmp_path / "x1.csv").read_bytes() == (tmp_path / "x2.csv").read_bytes()
    assert (tmp_path / "x1.meta.json").exists()


def test_preprocess_cache_roundtrip(workdir, tmp_path):
    cache = tmp_path / "cache.npz"
    assert run("preprocess", "--data", workdir / "a.csv", "--scenario", "DIC_F",
               "--horizon", "2", "-o", cache) == 0
    examples, meta = load_example_cache(cache)
    assert meta["horizon"] == 2
    assert examples[0].inputs.emg.shape == (4, 200)
    assert examples[0].inputs.forces is not None
    assert all(ex.target.shape == (2,) for ex in examples)


def test_train_outputs_and_determinism(workdir, tmp_path):
    assert (workdir / "run1" / "history.json").exists()
    assert (workdir / "run1" / "metrics.json").exists()
    # retrain into another directory: identical metrics under the same seed
    assert run("train", "--config", workdir / "train.json",
               "--output-dir", tmp_path / "run2") == 0
    m1 = (workdir / "run1" / "metrics.json").read_text()
    m2 = (tmp_path / "run2" / "metrics.json").read_text()
    assert m1 == m2


def test_eval_train_data_beats_holdout(workdir, tmp_path):
    # NMAE on the checkpoint's own training recordings is lower than on an
    # unseen subject (overfit-direction sanity).
    ckpt = workdir / "run1" / "model.ckpt"
    out_train = tmp_path / "m_train.json"
    out_new = tmp_path / "m_new.json"
    assert run("eval", "--ckpt", ckpt, "--data", workdir / "a.csv",
               workdir / "b.csv", "-o", out_train) == 0
    assert run("eval", "--ckpt", ckpt, "--data", workdir / "new.csv",
               "-o", out_new) == 0
    nmae_train = json.loads(out_train.read_text())["nmae"]
    nmae_new = json.loads(out_new.read_text())["nmae"]
    assert nmae_train < nmae_new


def test_eval_plot_csv(workdir, tmp_path):
    plot = tmp_path / "plot.csv"
    assert run("eval", "--ckpt", workdir / "run1" / "model.ckpt",
               "--data", workdir / "a.csv", "--plot-csv", plot,
               "--baseline") == 0
    lines = plot.read_text().strip().splitlines()
    assert lines[0] == "end_time_ms,truth_first,pred_first"
    assert len(lines) > 10


def test_transfer_then_eval_and_mismatch_rejection(workdir, tmp_path):
    sic_ckpt = workdir / "run1" / "model.ckpt"
    dic_ckpt = tmp_path / "dic.ckpt"
    assert run("transfer", "--source", sic_ckpt, "--scenario", "DIC",
               "--seed", 4, "-o", dic_ckpt) == 0
    report = json.loads((str(dic_ckpt) + ".graft.json").__class__(
        str(dic_ckpt) + ".graft.json") and Path(str(dic_ckpt) + ".graft.json").read_text())
    assert any(n.startswith("kin.") for n in report["created"])
    # plain eval refuses a scenario mismatch; transfer is the only graft path
    assert run("eval", "--ckpt", dic_ckpt, "--data", workdir / "a.csv",
               "--scenario", "SIC") == 1
    assert run("eval", "--ckpt", dic_ckpt, "--data", workdir / "a.csv") == 0


def test_finetune_cli(workdir, tmp_path):
    sic_ckpt = workdir / "run1" / "model.ckpt"
    out = tmp_path / "ft.ckpt"
    assert run("finetune", "--ckpt", sic_ckpt, "--data", workdir / "new.csv",
               "--lr-scale", 0.1, "--epochs", 3, "-o", out) == 0
    assert out.exists()
    hist = json.loads((tmp_path / "ft.ckpt.history.json").read_text())
    assert all(abs(lr - 1e-4) < 1e-12 for lr in hist["lr"])
    metrics = json.loads((tmp_path / "ft.ckpt.metrics.json").read_text())
    assert 0 <= metrics["nmae"] <= 1


def test_predict_row_count_and_causality(workdir, tmp_path):
    ckpt = workdir / "run1" / "model.ckpt"
    preds = tmp_path / "preds.csv"
    assert run("predict", "--ckpt", ckpt, "--data", workdir / "new.csv",
               "-o", preds) == 0
    lines = preds.read_text().strip().splitlines()
    import csv as _csv

    from kneecast.recordings import load_recording

    rec = load_recording(workdir / "new.csv")
    expected = (rec.n_samples - 400) // 100 + 1
    assert len(lines) - 1 == expected

    # causality: truncating the recording after time T leaves all rows with
    # end_time <= T byte-identical
    full = rec.n_samples
    cut = full // 2
    rows = (workdir / "new.csv").read_text().splitlines()
    truncated = tmp_path / "trunc.csv"
    truncated.write_text("\n".join(rows[: cut + 1]) + "\n")
    meta_src = Path(str(workdir / "new.csv").replace(".csv", ".meta.json"))
    Path(str(truncated).replace(".csv", ".meta.json")).write_text(meta_src.read_text())
    preds2 = tmp_path / "preds_trunc.csv"
    assert run("predict", "--ckpt", ckpt, "--data", truncated, "-o", preds2) == 0
    cut_time_ms = (cut - 1) * 1000.0 / rec.sample_rate_hz
    keep = [l for l in lines[1:] if float(l.split(",")[0]) <= cut_time_ms]
    lines2 = preds2.read_text().strip().splitlines()[1:]
    assert lines2 == keep


def test_predict_full_scale_row_formula():
    # the documented formula at production scale: 12 s at the default
    # window spec gives floor((12000-2000)/40)+1 = 251 windows
    assert len(segment_stream(12000, WindowSpec())) == 251


def test_exit_codes(workdir, tmp_path):
    assert run("eval", "--ckpt", tmp_path / "missing.ckpt",
               "--data", workdir / "a.csv") == 2  # data error
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"scenario": "NOPE"}))
    assert run("train", "--config", bad_cfg) == 1  # schema violation
    assert run("train", "--config", tmp_path / "nope.json") == 1
    assert run("synth", "--cycles", "0", "-o", tmp_path / "x.csv") == 1
    assert run("bogus-subcommand") == 1
    # corrupt checkpoint: data error
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"\0" * 100)
    assert run("eval", "--ckpt", junk, "--data", workdir / "a.csv") == 2


def test_preprocess_force_scenario_without_forces(tmp_path):
    assert run("synth", "--cycles", 3, "--seed", 1, "-o", tmp_path / "nf.csv") == 0
    assert run("preprocess", "--data", tmp_path / "nf.csv", "--scenario", "DIC_F",
               "--horizon", "1", "-o", tmp_path / "c.npz") == 1
