import csv
import json
import math
from pathlib import Path

import pytest
import torch
from hypothesis import given, settings, strategies as st

from sdwarp.checkpoint import load_checkpoint, save_checkpoint
from sdwarp.cli import main
from sdwarp.config import RunConfig, parse_config, resolve_out, serialize_config
from sdwarp.data import Dataset, generate_pair, mixed_dataset, read_dataset
from sdwarp.errors import ArgumentError, ConfigurationError, FormatError, VersionError
from sdwarp.evaluate import METRIC_COLUMNS, evaluate, model_predictor, passthrough_predictor, run_eval
from sdwarp.pipeline import (ABLATION_COLUMNS, probe_checkpoint, render_sample_grid, run_ablation,
                             stratified_split)
from sdwarp.diagnostics import reference_grid
from sdwarp.train import build_condition, train_condition

SMALL = dict(height=32, width=32, widths=(8, 8, 8, 8, 8), batch_size=4)


def _small_ds(n=4, kinds=("long_sleeve", "tucked_in")):
    return Dataset(mixed_dataset({k: n for k in kinds}, 0, (32, 32)))


# ---------------------------------------------------------------------------
# config


def test_config_defaults():
    cfg = RunConfig()
    assert (cfg.batch_size, cfg.learning_rate, cfg.iterations) == (8, 0.0002, 2000)
    assert RunConfig.reference_scale().iterations == 100000


configs = st.tuples(st.sampled_from([("sequential", True), ("sequential", False), ("residual_baseline", False)]),
                    st.builds(
    RunConfig,
    widths=st.lists(st.integers(1, 64), min_size=5, max_size=5).map(tuple),
    dataset=st.text("abc/_-.", max_size=12),
    batch_size=st.integers(1, 64),
    learning_rate=st.floats(1e-7, 1.0),
    iterations=st.integers(1, 10**6),
    seed=st.integers(0, 2**31),
    lambda_tv=st.floats(0, 100),
    log_every=st.integers(1, 100),
    composition=st.booleans(),
    nonroi_removal=st.just(False),
)).map(lambda t: t[1].with_(connection=t[0][0], nonroi_removal=t[0][1]))


@settings(max_examples=60, deadline=None)
@given(configs, st.floats(0, 10) | st.none())
def test_config_round_trip(cfg, zd):
    if cfg.nonroi_removal:
        cfg = cfg.with_(lambda_zdist=zd)
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert serialize_config(again) == text


def test_config_errors():
    with pytest.raises(ConfigurationError):
        parse_config("connection = sequential\nnonroi_removal = off\nlambda_zdist = 1.0\n")
    with pytest.raises(ConfigurationError):
        parse_config("bogus = 1\n")
    with pytest.raises(ConfigurationError):
        parse_config("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigurationError):
        parse_config("batch_size = many\n")


def test_out_dir_override(monkeypatch, tmp_path):
    monkeypatch.setenv("SDWARP_OUT_DIR", str(tmp_path))
    assert resolve_out("runs/x") == tmp_path / "runs/x"
    assert resolve_out("/abs/x") == Path("/abs/x")
    monkeypatch.delenv("SDWARP_OUT_DIR")
    assert resolve_out("runs/x") == Path("runs/x")


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(tmp_path):
    payload = {"a": torch.randn(3, 4, dtype=torch.float64), "b": {"c": torch.arange(5), 7: [1, 2.5, "x"]},
               "t": (torch.ones(2, dtype=torch.float16), None, True)}
    path = save_checkpoint(tmp_path / "x.ckpt", payload, {"step": 3})
    got, meta = load_checkpoint(path)
    assert meta == {"step": 3}
    assert torch.equal(got["a"], payload["a"]) and got["a"].dtype == torch.float64
    assert torch.equal(got["b"]["c"], payload["b"]["c"]) and got["b"][7] == [1, 2.5, "x"]
    assert isinstance(got["t"], tuple) and got["t"][1] is None and got["t"][2] is True


def test_checkpoint_errors(tmp_path):
    import zipfile
    path = save_checkpoint(tmp_path / "x.ckpt", {"a": torch.zeros(2)}, {})
    with zipfile.ZipFile(path) as z:
        manifest = json.loads(z.read("manifest.json"))
        files = {n: z.read(n) for n in z.namelist()}
    manifest["format_version"] = 99
    files["manifest.json"] = json.dumps(manifest).encode()
    bad = tmp_path / "v.ckpt"
    with zipfile.ZipFile(bad, "w") as z:
        for n, data in files.items():
            z.writestr(n, data)
    with pytest.raises(VersionError):
        load_checkpoint(bad)
    (tmp_path / "junk.ckpt").write_bytes(b"not a zip")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "junk.ckpt")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_resume_refuses_topology_mismatch(tmp_path):
    ds = _small_ds()
    cfg = RunConfig(iterations=2, **SMALL)
    res = train_condition(cfg, dataset=ds, out_dir=tmp_path / "a", render=False)
    other = cfg.with_(connection="residual_baseline", nonroi_removal=False, iterations=4)
    with pytest.raises(ConfigurationError, match="connection"):
        train_condition(other, dataset=ds, out_dir=tmp_path / "b", resume=res.final_checkpoint, render=False)


def test_checkpoint_reproduces_metrics(tmp_path):
    from sdwarp.train import restore_condition
    ds = _small_ds()
    res = train_condition(RunConfig(iterations=3, **SMALL), dataset=ds, out_dir=tmp_path, render=False)
    model, _, _, _ = restore_condition(res.final_checkpoint)
    a, _ = evaluate(model_predictor(model), ds)
    model2, _, _, _ = restore_condition(res.final_checkpoint)
    b, _ = evaluate(model_predictor(model2), ds)
    assert a == b


# ---------------------------------------------------------------------------
# training


def test_condition_smoke_and_resume(tmp_path):
    ds = Dataset(mixed_dataset({"long_sleeve": 8, "tucked_in": 8}, 0, (32, 32)))
    cfg = RunConfig(iterations=50, log_every=1, ckpt_every=25, **SMALL)
    full = train_condition(cfg, dataset=ds, out_dir=tmp_path / "full", render=False)
    assert full.records[-1]["total"] < full.records[0]["total"]
    assert [r["step"] for r in full.records] == list(range(1, 51))
    logged = [json.loads(l) for l in (tmp_path / "full" / "condition_log.jsonl").read_text().splitlines()]
    assert logged == full.records
    part = train_condition(cfg, dataset=ds, out_dir=tmp_path / "part", stop_at=25, render=False)
    assert part.final_checkpoint.name == "condition_000025.ckpt"
    resumed = train_condition(cfg, dataset=ds, out_dir=tmp_path / "part", resume=part.final_checkpoint,
                              render=False)
    assert resumed.records == full.records
    assert resumed.records[25] == full.records[25] and resumed.records[25]["step"] == 26


# ---------------------------------------------------------------------------
# evaluation


def test_eval_passthrough_and_csv(tmp_path):
    ds = _small_ds()
    summary = run_eval(passthrough_predictor, ds, "paired", tmp_path)
    assert summary["mean_ssim"] == 1.0 and summary["median_ssim"] == 1.0
    with open(tmp_path / "metrics.csv") as fh:
        header = next(csv.reader(fh))
    assert tuple(header) == METRIC_COLUMNS
    assert len(list((tmp_path / "renders").glob("*.png"))) > 0


def test_eval_untrained_is_finite(tmp_path):
    ds = _small_ds()
    model, _ = build_condition(RunConfig(**SMALL).topology, 0)
    for mode in ("paired", "unpaired"):
        rows, _ = evaluate(model_predictor(model), ds, mode)
        for r in rows:
            for c in METRIC_COLUMNS[3:]:
                assert r[c] is None or math.isfinite(r[c])
        if mode == "unpaired":
            assert all(r["ssim"] is None for r in rows)


def test_eval_unpaired_needs_two_samples(tmp_path):
    ds = Dataset([generate_pair("long_sleeve", 0, (32, 32))])
    with pytest.raises(ArgumentError):
        run_eval(passthrough_predictor, ds, "unpaired", tmp_path)
    with pytest.raises(ArgumentError):
        run_eval(passthrough_predictor, ds, "both", tmp_path)


# ---------------------------------------------------------------------------
# ablation, probe, renders


def test_ablation_refuses_missing_scenario(tmp_path):
    with pytest.raises(ConfigurationError, match="tucked_in"):
        run_ablation(_small_ds(kinds=("long_sleeve",)), tmp_path)


def test_ablation_table_contract(tmp_path):
    ds = _small_ds(4)
    base = RunConfig(iterations=2, log_every=1, **SMALL)
    rows = run_ablation(ds, tmp_path, seeds=2, base=base)
    assert [(r["config"], r["seed"]) for r in rows] == [(c, s) for s in (0, 1) for c in "bcd"]
    for r in rows:
        for col in ABLATION_COLUMNS:
            if col == "zdist":
                assert (r[col] is None) == (r["config"] != "d")
            elif col != "image_ssim":
                assert r[col] is not None, col
    for s in (0, 1):
        assert len({r["split_hash"] for r in rows if r["seed"] == s}) == 1
    assert stratified_split(ds, 0)[2] == rows[0]["split_hash"]
    with open(tmp_path / "ablation.csv") as fh:
        assert tuple(next(csv.reader(fh))) == ABLATION_COLUMNS
    # a second call reuses the finished checkpoints
    stamp = (tmp_path / "seed0" / "b" / "checkpoints" / "condition_000002.ckpt").stat().st_mtime_ns
    assert run_ablation(ds, tmp_path, seeds=2, base=base) == rows
    assert (tmp_path / "seed0" / "b" / "checkpoints" / "condition_000002.ckpt").stat().st_mtime_ns == stamp


def test_probe_and_render(tmp_path):
    ds = _small_ds()
    cfg = RunConfig(connection="residual_baseline", nonroi_removal=False, iterations=2, **SMALL)
    res = train_condition(cfg, dataset=ds, out_dir=tmp_path, render=False)
    a = probe_checkpoint(res.final_checkpoint, ds, batch_seed=1)
    b = probe_checkpoint(res.final_checkpoint, ds, batch_seed=1)
    assert a == b and a.step == 2
    assert all(-1 <= c <= 1 for c in a.cosines)
    fresh = tmp_path / "fresh.ckpt"
    model, disc = build_condition(cfg.topology, 0)
    save_checkpoint(fresh, {"generator": model.state_dict(), "discriminator": disc.state_dict()},
                    {"kind": "condition", "step": 0, "topology": load_checkpoint(res.final_checkpoint)[1]["topology"]})
    img = render_sample_grid(fresh, ds.samples[0])
    grid = img[:, 3 * 32:]
    ref = (reference_grid(32, 32).permute(1, 2, 0).numpy() * 255 + 0.5).astype("uint8")
    assert (abs(grid.astype(int) - ref.astype(int)) > 64).mean() < 0.02


# ---------------------------------------------------------------------------
# command line


def test_cli_gen_data(tmp_path, capsys):
    out = tmp_path / "ds"
    assert main(["gen-data", "--scenario", "long_sleeve", "--count", "8", "--out", str(out)]) == 0
    assert len([p for p in out.iterdir() if p.is_dir()]) == 8
    assert (out / "manifest.txt").is_file()
    again = tmp_path / "ds2"
    assert main(["gen-data", "--scenario", "long_sleeve", "--count", "8", "--out", str(again)]) == 0
    for p in sorted(out.rglob("*")):
        if p.is_file():
            assert p.read_bytes() == (again / p.relative_to(out)).read_bytes()
    assert main(["gen-data", "--scenario", "long_sleeve", "--out", str(out)]) == 1
    assert "not empty" in capsys.readouterr().err
    assert main(["gen-data", "--scenario", "long_sleeve", "--out", str(out), "--force", "--count", "2"]) == 0
    assert len(read_dataset(out)) == 2
    assert main(["gen-data", "--scenario", "long_sleeve", "--resolution", "100x77",
                 "--out", str(tmp_path / "bad")]) == 1
    assert "divisible" in capsys.readouterr().err
    assert main(["gen-data", "--scenario", "nope", "--out", str(tmp_path / "bad2")]) == 1
    assert main(["gen-data"]) == 1
    assert main(["frobnicate"]) == 1


def test_cli_train_eval_probe_render(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SDWARP_OUT_DIR", str(tmp_path))
    assert main(["gen-data", "--scenario", "long_sleeve,tucked_in", "--count", "3",
                 "--resolution", "32x32", "--out", "data"]) == 0
    cfg = RunConfig(dataset=str(tmp_path / "data"), iterations=4, ckpt_every=2, log_every=1,
                    connection="residual_baseline", nonroi_removal=False, **SMALL)
    (tmp_path / "run.cfg").write_text(serialize_config(cfg))
    assert main(["train-condition", "--config", str(tmp_path / "run.cfg"), "--out", "run"]) == 0
    ckpt = tmp_path / "run" / "checkpoints" / "condition_000004.ckpt"
    assert ckpt.is_file() and (tmp_path / "run" / "condition_log.jsonl").is_file()
    assert main(["eval", "--checkpoint", str(ckpt), "--dataset", str(tmp_path / "data"), "--out", "ev"]) == 0
    assert (tmp_path / "ev" / "metrics.csv").is_file()
    assert main(["eval", "--checkpoint", str(ckpt), "--dataset", str(tmp_path / "data"), "--mode", "unpaired",
                 "--out", "evu"]) == 0
    assert main(["probe", "--checkpoint", str(ckpt), "--dataset", str(tmp_path / "data"),
                 "--out", "probe.json"]) == 0
    report = json.loads((tmp_path / "probe.json").read_text())
    assert len(report["cosines"]) == 5
    sample = next(p for p in sorted((tmp_path / "data").iterdir()) if p.is_dir())
    assert main(["render-grid", "--checkpoint", str(ckpt), "--sample", str(sample), "--out", "grid.png"]) == 0
    assert (tmp_path / "grid.png").is_file()
    bad = cfg.with_(nonroi_removal=False)
    (tmp_path / "bad.cfg").write_text(serialize_config(bad).replace("lambda_zdist = unset", "lambda_zdist = 1.0"))
    assert main(["train-condition", "--config", str(tmp_path / "bad.cfg")]) == 1
    assert "lambda_zdist" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"), "--dataset", str(tmp_path / "data"),
                 "--out", "x"]) == 1
