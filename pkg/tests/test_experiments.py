import numpy as np
import pytest

import fedsim as fs
from fedsim.errors import NumericError, ParameterError


def _toml(output_dir, **overrides):
    axes = {
        "alpha": [1e9],
        "report_goal": [2],
        "local_epochs": [1.0],
        "eta_eff": [0.1],
        "beta": [0.0],
        "algorithms": ["fedavg"],
    }
    axes.update(overrides)

    def fmt(values):
        items = ", ".join(f'"{v}"' if isinstance(v, str) else repr(v) for v in values)
        return f"[{items}]"

    return f"""
schema_version = 1
seed = 11
output_dir = "{output_dir}"

[dataset]
source = "blobs"
num_classes = 3
per_class = 40
feature_dim = 4
eval_per_class = 10

[partition]
kind = "dirichlet"
num_clients = 6
samples_per_client = 20

[model]
kind = "softmax-linear"

[federated]
rounds = 6
batch_size = 10
eval_interval = 3

[centralized]
lr = 0.1
steps = 60
batch_size = 20

[sweep]
alpha = {fmt(axes["alpha"])}
report_goal = {fmt(axes["report_goal"])}
local_epochs = {fmt(axes["local_epochs"])}
eta_eff = {fmt(axes["eta_eff"])}
beta = {fmt(axes["beta"])}
algorithms = {fmt(axes["algorithms"])}
"""


def _write_config(tmp_path, name="exp.toml", **overrides):
    out_dir = tmp_path / "results"
    path = tmp_path / name
    path.write_text(_toml(out_dir, **overrides))
    return path, out_dir


# ---- config loading ----


def test_load_config_round_trip(tmp_path):
    path, out_dir = _write_config(tmp_path)
    cfg = fs.load_config(path)
    assert cfg.seed == 11
    assert cfg.output_dir == str(out_dir)
    assert cfg.dataset.source == "blobs"
    assert cfg.dataset.num_classes == 3
    assert cfg.partition.kind == "dirichlet"
    assert cfg.federated.rounds == 6
    assert cfg.centralized.steps == 60
    assert cfg.sweep.algorithms == ("fedavg",)
    assert cfg.sweep.alpha == (1e9,)


def test_load_config_rejects_unknown_key(tmp_path):
    path, _ = _write_config(tmp_path)
    path.write_text(path.read_text() + "\nbogus_axis = [1.0]\n")
    with pytest.raises(ParameterError, match="bogus_axis"):
        fs.load_config(path)


def test_load_config_rejects_missing_section(tmp_path):
    path, _ = _write_config(tmp_path)
    text = path.read_text().replace('[centralized]\nlr = 0.1\nsteps = 60\nbatch_size = 20\n', "")
    path.write_text(text)
    with pytest.raises(ParameterError, match="centralized"):
        fs.load_config(path)


def test_load_config_rejects_bad_schema_version(tmp_path):
    path, _ = _write_config(tmp_path)
    path.write_text(path.read_text().replace("schema_version = 1", "schema_version = 99"))
    with pytest.raises(ParameterError, match="schema_version"):
        fs.load_config(path)


def test_load_config_rejects_invalid_toml(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("this is = not [ valid\n")
    with pytest.raises(ParameterError, match="invalid TOML"):
        fs.load_config(path)


def test_load_config_rejects_unknown_algorithm(tmp_path):
    path, _ = _write_config(tmp_path, algorithms=["fedavg", "fedsgd"])
    with pytest.raises(ParameterError, match="fedsgd"):
        fs.load_config(path)


def test_load_config_rejects_beta_out_of_range(tmp_path):
    path, _ = _write_config(tmp_path, beta=[1.0])
    with pytest.raises(ParameterError, match="beta"):
        fs.load_config(path)


def test_load_config_rejects_scalar_axis(tmp_path):
    path, _ = _write_config(tmp_path)
    path.write_text(path.read_text().replace("alpha = [1000000000.0]", "alpha = 1.0"))
    with pytest.raises(ParameterError, match="alpha"):
        fs.load_config(path)


def test_load_config_rejects_bad_source(tmp_path):
    path, _ = _write_config(tmp_path)
    path.write_text(path.read_text().replace('source = "blobs"', 'source = "imagenet"'))
    with pytest.raises(ParameterError, match="source"):
        fs.load_config(path)


# ---- centralized baseline ----


def test_train_centralized_zero_steps_is_initial_model(blob_ds):
    spec = fs.ModelSpec(
        kind="softmax-linear", feature_dim=blob_ds.feature_dim,
        num_classes=blob_ds.num_classes, init_seed=3,
    )
    params, acc = fs.train_centralized(blob_ds, spec, lr=0.1, steps=0, batch_size=50, seed=0)
    assert np.array_equal(params.flat, fs.init_model(spec).flat)
    assert acc == fs.evaluate(fs.init_model(spec), blob_ds)


def test_train_centralized_deterministic(blob_ds):
    spec = fs.ModelSpec(
        kind="softmax-linear", feature_dim=blob_ds.feature_dim,
        num_classes=blob_ds.num_classes, init_seed=3,
    )
    p1, a1 = fs.train_centralized(blob_ds, spec, lr=0.1, steps=100, batch_size=50, seed=4)
    p2, a2 = fs.train_centralized(blob_ds, spec, lr=0.1, steps=100, batch_size=50, seed=4)
    assert np.array_equal(p1.flat, p2.flat)
    assert a1 == a2


def test_train_centralized_learns_blobs(blob_ds):
    spec = fs.ModelSpec(
        kind="softmax-linear", feature_dim=blob_ds.feature_dim,
        num_classes=blob_ds.num_classes, init_seed=3,
    )
    _, acc = fs.train_centralized(blob_ds, spec, lr=0.1, steps=500, batch_size=50, seed=4)
    assert acc >= 0.95


def test_train_centralized_divergence_raises(blob_ds):
    spec = fs.ModelSpec(
        kind="softmax-linear", feature_dim=blob_ds.feature_dim,
        num_classes=blob_ds.num_classes, init_seed=3,
    )
    with pytest.raises(NumericError):
        fs.train_centralized(blob_ds, spec, lr=1e308, steps=5, batch_size=50, seed=4)


def test_train_centralized_rejects_bad_args(blob_ds):
    spec = fs.ModelSpec(
        kind="softmax-linear", feature_dim=blob_ds.feature_dim,
        num_classes=blob_ds.num_classes,
    )
    with pytest.raises(ParameterError):
        fs.train_centralized(blob_ds, spec, lr=0.0, steps=10, batch_size=50, seed=0)
    with pytest.raises(ParameterError):
        fs.train_centralized(blob_ds, spec, lr=0.1, steps=-1, batch_size=50, seed=0)


# ---- milestones ----


def _record(rnd, acc):
    return fs.RoundRecord(
        round=rnd, selected_clients=["a"], mean_train_loss=1.0,
        eval_accuracy=acc, emd_of_selection=0.0,
    )


def test_report_milestones_crossings():
    records = [
        _record(0, None), _record(1, 0.10), _record(2, None),
        _record(3, 0.42), _record(4, None), _record(5, 0.60),
    ]
    out = fs.report_milestones(records, [0.1, 0.5, 0.9], centralized_accuracy=0.8)
    assert out == [(0.1, 1), (0.5, 3), (0.9, None)]


def test_report_milestones_zero_threshold_hits_first_eval():
    records = [_record(0, None), _record(7, 0.01)]
    assert fs.report_milestones(records, [0.0], 0.9) == [(0.0, 7)]


def test_report_milestones_errors():
    with pytest.raises(ParameterError):
        fs.report_milestones([], [0.5], 0.8)
    with pytest.raises(ParameterError):
        fs.report_milestones([_record(0, 0.5)], [0.5], 0.0)


# ---- sweep ----


def test_run_sweep_single_point(tmp_path):
    path, out_dir = _write_config(tmp_path)
    rows = fs.run_sweep(fs.load_config(path))
    assert len(rows) == 1
    row = rows[0]
    assert row["status"] == "ok"
    assert row["algorithm"] == "fedavg"
    assert 0.0 <= float(row["emd"]) <= 2.0
    assert 0.0 <= float(row["best_accuracy"]) <= 1.0
    summary = out_dir / "sweep_results.csv"
    assert summary.exists()
    rounds_files = list(out_dir.glob("rounds_*.csv"))
    assert len(rounds_files) == 1
    loaded = fs.read_round_records(rounds_files[0])
    assert [r.round for r in loaded] == list(range(6))


def test_run_sweep_emd_tracks_concentration(tmp_path):
    path, _ = _write_config(tmp_path, alpha=[0.05, 1.0, 1e9])
    rows = fs.run_sweep(fs.load_config(path))
    assert [float(r["alpha"]) for r in rows] == [0.05, 1.0, 1e9]
    emds = [float(r["emd"]) for r in rows]
    assert emds[0] > emds[1] > emds[2]


def test_run_sweep_beta_axis_only_for_momentum(tmp_path):
    path, _ = _write_config(
        tmp_path, algorithms=["fedavg", "fedavgm"], beta=[0.0, 0.5]
    )
    rows = fs.run_sweep(fs.load_config(path))
    fedavg_rows = [r for r in rows if r["algorithm"] == "fedavg"]
    fedavgm_rows = [r for r in rows if r["algorithm"] == "fedavgm"]
    assert len(fedavg_rows) == 1 and fedavg_rows[0]["beta"] == "0.0"
    assert sorted(r["beta"] for r in fedavgm_rows) == ["0.0", "0.5"]


def test_run_sweep_rerun_is_byte_identical(tmp_path):
    path, out_dir = _write_config(tmp_path, alpha=[1.0, 1e9])
    cfg = fs.load_config(path)
    fs.run_sweep(cfg)
    summary = out_dir / "sweep_results.csv"
    first = summary.read_bytes()
    rows = fs.run_sweep(cfg)
    assert summary.read_bytes() == first
    assert len(rows) == 2


def test_run_sweep_resume_extends_without_duplicates(tmp_path):
    narrow, out_dir = _write_config(tmp_path, name="narrow.toml", alpha=[1e9])
    fs.run_sweep(fs.load_config(narrow))
    before = (out_dir / "sweep_results.csv").read_text().splitlines()

    wide, _ = _write_config(tmp_path, name="wide.toml", alpha=[1.0, 1e9])
    rows = fs.run_sweep(fs.load_config(wide))
    after = (out_dir / "sweep_results.csv").read_text().splitlines()
    assert len(rows) == 2
    assert len(after) == 3  # header + two points
    # the previously computed point is reused verbatim
    assert before[1] in after


def test_run_sweep_records_failures_and_continues(tmp_path):
    path, _ = _write_config(tmp_path, report_goal=[50, 2])
    rows = fs.run_sweep(fs.load_config(path))
    by_k = {r["report_goal"]: r for r in rows}
    assert by_k["2"]["status"] == "ok"
    assert by_k["50"]["status"].startswith("failed: ParameterError")
    assert by_k["50"]["best_accuracy"] == ""
    assert by_k["50"]["rounds_to_90pct"] == ""


def test_run_sweep_fedvc_needs_virtual_size(tmp_path):
    path, _ = _write_config(tmp_path, algorithms=["fedvc"])
    rows = fs.run_sweep(fs.load_config(path))
    assert rows[0]["status"].startswith("failed: ParameterError")
    assert "virtual_size" in rows[0]["status"]
