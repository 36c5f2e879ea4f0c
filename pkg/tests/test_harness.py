"""Config resolution, checkpoint format, run artifacts, diagnostics, CLI."""

import json
import math
import struct

import numpy as np
import pytest

from mgpp.checkpoint import (MAGIC, CheckpointError, load_checkpoint,
                             save_checkpoint)
from mgpp.cli import main
from mgpp.config import (ConfigError, build_config, config_to_text,
                         load_config, parse_config_text)
from mgpp.harness import (compare_runs, dump_schedule, export_histogram,
                          export_threshold_trajectory, run_experiment)
from mgpp.metrics import RunMetrics, final_record, load_records
from mgpp.params import ParamStore
from mgpp.schedule import sparsity_and_eta_at

MICRO = """\
# micro run for tests
task.train = 256
task.dev = 64
task.test = 64
task.length = 8
task.vocab = 12
task.classes = 4
model.d = 8
model.k = 4
model.ffn = 16
model.heads = 2
model.layers = 1
epochs = 2
batch_size = 32
schedule.t_i = 2
schedule.t_f = 12
schedule.delta_t = 2
"""


def micro_config_file(tmp_path, extra: str = "", name: str = "micro.cfg"):
    path = tmp_path / name
    path.write_text(MICRO + extra, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# config files and presets
# ---------------------------------------------------------------------------

def test_defaults_resolve():
    cfg = build_config({})
    assert cfg.method == "mgpp"
    assert cfg.lr == 3e-3 and cfg.lr_floor == 3e-4
    assert cfg.weight_decay == 0.0
    assert cfg.lam == 1e-7 and cfg.sigma0_sq == 1e-10 and cfg.sigma1_sq == 0.05
    assert cfg.model.n_max == cfg.task.length == 16
    assert cfg.total_steps == math.ceil(8 * 8000 / 32) == 2000
    assert (cfg.t_i, cfg.t_f, cfg.delta_t) == (200, 1600, 10)


def test_published_preset_expands():
    cfg = load_config(None, preset="mnli-90")
    assert cfg.method == "mgpp"
    assert cfg.task.n_classes == 3 and cfg.task.n_train == 393000
    assert cfg.total_steps == 98250
    assert cfg.lr == cfg.lr_floor == 8e-5       # constant learning rate
    assert (cfg.t_i, cfg.t_f, cfg.delta_t) == (5500, 75500, 10)
    assert cfg.v_final == 0.9
    assert (cfg.lam, cfg.sigma0_sq, cfg.sigma1_sq) == (1e-7, 1e-10, 0.05)


def test_desk_presets_set_method_only():
    for preset, method in (("desk-90", "mgpp"), ("desk-gmp-90", "gmp"),
                           ("desk-l2-90", "l2"), ("desk-pa-90", "pa")):
        cfg = load_config(None, preset=preset)
        assert cfg.method == method
        assert cfg.task.n_train == 8000
        assert cfg.total_steps == 2000


def test_unknown_preset_rejected():
    with pytest.raises(ConfigError, match="nope"):
        load_config(None, preset="nope")


def test_parse_skips_comments_and_blanks():
    values = parse_config_text("# c\n\n  seed = 9\n   # d\nepochs=3\n")
    assert values == {"seed": 9, "epochs": 3}


def test_parse_rejects_unknown_key_with_location():
    text = "seed = 1\n\nmgp.sigma2_sq = 0.5\n"
    with pytest.raises(ConfigError, match=r"cfg\.txt:3.*sigma2_sq"):
        parse_config_text(text, "cfg.txt")


def test_parse_rejects_missing_equals():
    with pytest.raises(ConfigError, match=r"x:1"):
        parse_config_text("seed 1\n", "x")


def test_parse_rejects_bad_value():
    with pytest.raises(ConfigError, match=r"x:1.*optim\.lr"):
        parse_config_text("optim.lr = fast\n", "x")


def test_file_overrides_preset_and_cli_overrides_file(tmp_path):
    path = tmp_path / "own.cfg"
    path.write_text("seed = 11\noptim.lr = 1e-4\n", encoding="utf-8")
    cfg = load_config(path, preset="mnli-90", overrides={"seed": 22})
    assert cfg.lr == 1e-4            # file beats preset
    assert cfg.seed == 22            # override beats file
    assert cfg.t_i == 5500           # untouched preset key survives


def test_method_validated():
    with pytest.raises(ConfigError, match="mgpp/gmp/l2/pa"):
        build_config({"method": "soft"})


def test_l2_weight_decay_default_and_override():
    assert build_config({"method": "l2"}).weight_decay == 1e-2
    assert build_config({"method": "l2",
                         "optim.weight_decay": 0.0}).weight_decay == 0.0
    assert build_config({"method": "mgpp"}).weight_decay == 0.0


def test_n_max_below_length_rejected():
    with pytest.raises(ConfigError, match="n_max"):
        build_config({"model.n_max": 4, "task.length": 16})


def test_invalid_subconfig_surfaces_as_config_error():
    with pytest.raises(ConfigError):
        build_config({"task.vocab": 1})
    with pytest.raises(ConfigError):
        build_config({"schedule.t_i": -1})
    with pytest.raises(ConfigError):
        build_config({"mgp.lambda": 1.5})
    with pytest.raises(ConfigError):
        build_config({"epochs": 0})


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.cfg")


def test_config_text_round_trips(tmp_path):
    cfg = build_config(parse_config_text(MICRO) |
                       {"method": "pa", "out": "runs/x",
                        "optim.lr": 2.5e-3, "mgp.sigma1_sq": 0.0625})
    text = config_to_text(cfg)
    again = build_config(parse_config_text(text, "roundtrip"))
    assert again == cfg


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def sample_store():
    rng = np.random.default_rng(3)
    store = ParamStore()
    store.add("embed.table", rng.normal(size=(5, 4)), prunable=False)
    w = store.add("block0.ffn.w1", rng.normal(size=(4, 6)), prunable=True)
    w.mask = rng.random((4, 6)) > 0.5
    w.value[~w.mask] = 0.0
    store.add("head.w", rng.normal(size=(4, 3)), prunable=False)
    return store


def test_checkpoint_round_trip(tmp_path):
    store = sample_store()
    path = tmp_path / "ckpt.bin"
    save_checkpoint(store, path)
    loaded = load_checkpoint(path)
    assert loaded.names() == store.names()
    for name in store.names():
        np.testing.assert_array_equal(loaded[name].value, store[name].value)
        np.testing.assert_array_equal(loaded[name].mask, store[name].mask)
        assert loaded[name].prunable == store[name].prunable


def test_checkpoint_resave_is_byte_identical(tmp_path):
    store = sample_store()
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(store, a)
    save_checkpoint(load_checkpoint(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    path = tmp_path / "ckpt.bin"
    save_checkpoint(sample_store(), path)
    (tmp_path / "cut.bin").write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "cut.bin")


def test_checkpoint_rejects_trailing_bytes(tmp_path):
    path = tmp_path / "ckpt.bin"
    save_checkpoint(sample_store(), path)
    (tmp_path / "pad.bin").write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "pad.bin")


def test_checkpoint_rejects_wrong_version(tmp_path):
    blob = json.dumps({"format_version": 2, "tensors": []}).encode()
    path = tmp_path / "v2.bin"
    path.write_bytes(MAGIC + struct.pack("<Q", len(blob)) + blob)
    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(path)


def test_checkpoint_rejects_corrupt_manifest(tmp_path):
    blob = b"{not json"
    path = tmp_path / "junk.bin"
    path.write_bytes(MAGIC + struct.pack("<Q", len(blob)) + blob)
    with pytest.raises(CheckpointError, match="manifest"):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# run artifacts and diagnostics
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def micro_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = build_config(parse_config_text(MICRO) | {"out": str(out)})
    metrics, store = run_experiment(cfg)
    return cfg, out, metrics, store


def test_run_writes_four_artifacts(micro_run):
    _, out, _, _ = micro_run
    for name in ("config.txt", "metrics.jsonl", "checkpoint.bin",
                 "summary.json"):
        assert (out / name).exists(), name


def test_run_summary_extends_final_record(micro_run):
    _, out, metrics, _ = micro_run
    summary = json.loads((out / "summary.json").read_text())
    assert summary["wall_clock_sec"] > 0
    del summary["wall_clock_sec"]
    assert summary == metrics.final
    assert summary["final"] is True
    assert 0.0 <= summary["test_accuracy"] <= 1.0


def test_run_metrics_file_mirrors_memory(micro_run):
    _, out, metrics, _ = micro_run
    records = load_records(out / "metrics.jsonl")
    assert records[:-1] == metrics.records
    assert final_record(records) == metrics.final


def test_run_config_snapshot_reloads(micro_run):
    cfg, out, _, _ = micro_run
    assert load_config(out / "config.txt") == cfg


def test_run_checkpoint_matches_final_sparsity(micro_run):
    _, out, metrics, store = micro_run
    loaded = load_checkpoint(out / "checkpoint.bin")
    assert loaded.sparsity() == metrics.final["sparsity"] == store.sparsity()


def test_run_requires_out_dir():
    cfg = build_config(parse_config_text(MICRO))
    with pytest.raises(ConfigError, match="output directory"):
        run_experiment(cfg)


def test_histogram_counts_nonzero_weights(micro_run, tmp_path):
    _, out, _, store = micro_run
    rows = export_histogram(out / "checkpoint.bin", bins=20)
    assert len(rows) == 20
    nonzero = sum(int(np.count_nonzero(store[n].value))
                  for n in store.prunable_names())
    assert sum(count for _, count in rows) == nonzero


def test_histogram_of_fully_pruned_store(tmp_path):
    store = ParamStore()
    p = store.add("w", np.zeros(7), prunable=True)
    p.mask[:] = False
    save_checkpoint(store, tmp_path / "empty.bin")
    rows = export_histogram(tmp_path / "empty.bin", bins=5)
    assert [count for _, count in rows] == [0] * 5


def test_histogram_rejects_bad_bins(micro_run):
    _, out, _, _ = micro_run
    with pytest.raises(ValueError, match="bins"):
        export_histogram(out / "checkpoint.bin", bins=0)


def test_threshold_trajectory_matches_events(micro_run):
    _, out, metrics, _ = micro_run
    rows = export_threshold_trajectory(out / "metrics.jsonl")
    assert rows == metrics.thresholds()
    steps = [s for s, _ in rows]
    assert steps == sorted(steps) and len(set(steps)) == len(steps)


def test_threshold_trajectory_warns_when_empty(tmp_path, capsys):
    path = tmp_path / "m.jsonl"
    with RunMetrics(path) as m:
        m.log({"step": 1, "loss": 1.0, "sparsity": 0.0, "eta": 0.0})
        m.log_final({"step": 1, "loss": 1.0})
    assert export_threshold_trajectory(path) == []
    assert "no prune events" in capsys.readouterr().err


def _fake_metrics(path, *, method, seed, acc, task=None):
    with RunMetrics(path) as m:
        m.log({"step": 1, "loss": 0.5, "sparsity": 0.0, "eta": 0.0})
        m.log_final({"step": 2, "loss": 0.1, "sparsity": 0.9, "eta": 1.0,
                     "dev_accuracy": acc, "test_accuracy": acc,
                     "method": method, "seed": seed,
                     "task": task or {"kind": "sparse-motif", "seed": 1}})
    return path


def test_compare_aggregates_by_method(tmp_path):
    paths = [
        _fake_metrics(tmp_path / "a.jsonl", method="mgpp", seed=0, acc=0.9),
        _fake_metrics(tmp_path / "b.jsonl", method="mgpp", seed=1, acc=0.7),
        _fake_metrics(tmp_path / "c.jsonl", method="gmp", seed=0, acc=0.6),
    ]
    table = compare_runs(paths)
    assert [row["method"] for row in table] == ["gmp", "mgpp"]
    mgpp = table[1]
    assert mgpp["n_runs"] == 2 and mgpp["seeds"] == [0, 1]
    assert mgpp["test_accuracy_mean"] == pytest.approx(0.8)
    assert mgpp["test_accuracy_sd"] == pytest.approx(0.1)
    assert table[0]["test_accuracy_sd"] == 0.0


def test_compare_refuses_mixed_tasks(tmp_path):
    paths = [
        _fake_metrics(tmp_path / "a.jsonl", method="mgpp", seed=0, acc=0.9),
        _fake_metrics(tmp_path / "b.jsonl", method="mgpp", seed=1, acc=0.7,
                      task={"kind": "token-parity", "seed": 1}),
    ]
    with pytest.raises(ValueError, match="refusing"):
        compare_runs(paths)


def test_compare_needs_final_record(tmp_path):
    path = tmp_path / "open.jsonl"
    with RunMetrics(path) as m:
        m.log({"step": 1, "loss": 1.0, "sparsity": 0.0, "eta": 0.0})
    with pytest.raises(ValueError, match="final"):
        compare_runs([path])


def test_dump_schedule_cubic():
    cfg = build_config(parse_config_text(MICRO))
    header, rows = dump_schedule(cfg)
    assert header == ["step", "sparsity", "eta"]
    assert len(rows) == cfg.total_steps + 1
    sched = cfg.cubic_schedule()
    for t in (0, 5, cfg.total_steps):
        assert rows[t] == (t, *sparsity_and_eta_at(t, sched))


def test_dump_schedule_pa():
    cfg = build_config(parse_config_text(MICRO) | {"method": "pa"})
    header, rows = dump_schedule(cfg)
    assert header == ["step", "sigma0_sq", "eta", "tau"]
    assert rows[0][1] == cfg.pa_sigma0_init_sq
    assert rows[-1][1] == cfg.pa_sigma0_end_sq


# ---------------------------------------------------------------------------
# command-line interface
# ---------------------------------------------------------------------------

def test_cli_no_arguments_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    capsys.readouterr()


def test_cli_needs_config_or_preset(capsys):
    assert main(["dump-schedule"]) == 1
    assert "config error" in capsys.readouterr().err


def test_cli_dump_schedule_preset(capsys):
    assert main(["dump-schedule", "--preset", "desk-90"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "step,sparsity,eta"
    assert len(lines) == 2002            # header + steps 0..2000
    assert lines[1] == "0,0.0,0.0"


def test_cli_run_and_diagnostics(tmp_path, capsys):
    cfg_path = micro_config_file(tmp_path)
    out = tmp_path / "run7"
    code = main(["run", str(cfg_path), "--seed", "7", "--out", str(out)])
    assert code == 0
    line = capsys.readouterr().out.strip()
    assert "method=mgpp" in line and "seed=7" in line

    assert main(["export-thresholds", str(out / "metrics.jsonl")]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "step,threshold" and len(rows) > 1

    assert main(["export-histogram", str(out / "checkpoint.bin"),
                 "--bins", "10"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "center,count" and len(rows) == 11

    assert main(["compare", str(out / "metrics.jsonl")]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0].startswith("method,n_runs,seeds")
    assert rows[1].startswith("mgpp,1,7,")


def test_cli_rejects_bad_config_file(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("mgp.sigma2_sq = 1\n", encoding="utf-8")
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "sigma2_sq" in capsys.readouterr().err


def test_cli_missing_checkpoint_is_runtime_error(tmp_path, capsys):
    assert main(["export-histogram", str(tmp_path / "none.bin")]) == 2
    capsys.readouterr()


def test_cli_corrupt_checkpoint_is_runtime_error(tmp_path, capsys):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"garbage bytes here")
    assert main(["export-histogram", str(path)]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_prior_curve(capsys):
    assert main(["export-prior-curve", "--preset", "desk-90",
                 "--range=-0.2:0.2:0.1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "theta,penalty,penalty_grad"
    assert len(lines) >= 6               # base grid plus zoom points


def test_cli_prior_curve_bad_range(capsys):
    assert main(["export-prior-curve", "--preset", "desk-90",
                 "--range", "0:1"]) == 1
    assert "--range" in capsys.readouterr().err


def test_cli_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    capsys.readouterr()
