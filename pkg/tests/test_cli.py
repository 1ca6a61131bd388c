import json

import pytest
from faker import Faker

from wcca.cli import EXIT_DATA_ERROR, EXIT_OK, EXIT_USAGE_ERROR, main
from wcca.cca import Method, fit
from wcca.geometry import ExpMode, GridConfig
from wcca.io import read_quantile_table, write_quantile_table
from wcca.simulation import NoiseScale, SimConfig, generate_dataset, replicate_rng

from .generate import generate_coupled_pair, generate_rng, generate_sample

fake = Faker()
grid = GridConfig(m_levels=16, t_points=4)

SIMULATE = [
    "simulate",
    "--n", "30",
    "--replicates", "2",
    "--grid-m", "16",
    "--grid-t", "4",
    "--k", "2",
    "--noise-scale", "standardized",
    "--exp-mode", "project",
    "--seed", "3",
]


@pytest.fixture
def paired_tables(tmp_path):
    sample_x, sample_y = generate_coupled_pair(generate_rng(1), grid, 40, 0.2)
    subjects = [fake.unique.user_name() for _ in range(40)]
    x = write_quantile_table(tmp_path / "x.csv", sample_x, subjects)
    y = write_quantile_table(tmp_path / "y.csv", sample_y, subjects)
    return x, y


def test_version_and_help_exit_cleanly(capsys):
    assert main(["--version"]) == EXIT_OK
    assert main(["simulate", "--help"]) == EXIT_OK


def test_usage_errors_exit_with_two(tmp_path):
    assert main([]) == EXIT_USAGE_ERROR
    assert main(["simulate", "--sigma", "-1", "--k", "1", "--out-dir", str(tmp_path)]) == (
        EXIT_USAGE_ERROR
    )
    assert main(["simulate", "--out-dir", str(tmp_path)]) == EXIT_USAGE_ERROR
    assert main(["simulate", "--method", "ridge"]) == EXIT_USAGE_ERROR


def test_simulate_writes_report_and_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(SIMULATE + ["--out-dir", str(out), "--export", "--export-samples", "50"]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["replicates"] == 2
    assert summary["method"] == "fpca"
    assert summary["tuning_histogram"] == {"2": 2}
    rows = (out / "replicates.csv").read_text().splitlines()
    assert rows[0] == "replicate,method,n,sigma,case,k_or_eps,abs_rho_err,imse_u,imse_v"
    assert len(rows) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 3
    assert "summary.json" in manifest["outputs"]
    dataset = read_quantile_table(out / "dataset" / "x_quantiles.csv")
    assert dataset.n == 30
    assert (out / "dataset" / "y_samples.jsonl").exists()


def test_simulate_reruns_are_byte_identical(tmp_path):
    out = tmp_path / "run"
    assert main(SIMULATE + ["--out-dir", str(out)]) == EXIT_OK
    first = {path.name: path.read_bytes() for path in out.iterdir()}
    assert main(SIMULATE + ["--out-dir", str(out)]) == EXIT_OK
    second = {path.name: path.read_bytes() for path in out.iterdir()}
    assert first == second


def test_estimate_on_identical_inputs_gives_unit_rho(tmp_path):
    sample = generate_sample(generate_rng(2), grid, 20)
    x = write_quantile_table(tmp_path / "x.csv", sample)
    out = tmp_path / "out"
    assert main(["estimate", str(x), str(x), "--k", "2", "--out-dir", str(out)]) == EXIT_OK
    estimate = json.loads((out / "estimate.json").read_text())
    assert estimate["rho"] == pytest.approx(1.0, abs=1e-8)
    assert estimate["tuning"] == [2, 2]
    for name in ("u_field.csv", "v_field.csv", "eigen_x.csv", "scores_y.csv", "manifest.json"):
        assert (out / name).exists()


def test_estimate_with_cross_validation(paired_tables, tmp_path):
    x, y = paired_tables
    out = tmp_path / "out"
    argv = ["estimate", str(x), str(y), "--method", "tikhonov", "--cv", "--folds", "4"]
    assert main(argv + ["--out-dir", str(out)]) == EXIT_OK
    lines = (out / "cv_scores.csv").read_text().splitlines()
    assert lines[0] == "candidate,score"
    assert len(lines) == 10
    estimate = json.loads((out / "estimate.json").read_text())
    assert estimate["method"] == "tikhonov"
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["inputs"]) == {"x.csv", "y.csv"}


def test_estimate_reports_data_errors(tmp_path, paired_tables):
    x, _ = paired_tables
    other = write_quantile_table(tmp_path / "other.csv", generate_sample(generate_rng(3), grid, 40))
    out = str(tmp_path / "out")
    assert main(["estimate", str(x), str(other), "--k", "1", "--out-dir", out]) == EXIT_DATA_ERROR
    broken = tmp_path / "broken.csv"
    broken.write_text("not a table\n")
    assert main(["estimate", str(broken), str(x), "--k", "1", "--out-dir", out]) == EXIT_DATA_ERROR


def test_cv_command(paired_tables, tmp_path):
    x, y = paired_tables
    out = tmp_path / "out"
    assert main(["cv", str(x), str(y), "--folds", "4", "--out-dir", str(out)]) == EXIT_OK
    choice = json.loads((out / "cv_choice.json").read_text())
    assert choice["method"] == "fpca"
    # the coupled generator varies along two directions only
    assert choice["choice"] in (1, 2)
    assert len((out / "cv_scores.csv").read_text().splitlines()) == 11


def test_ingest_command(tmp_path):
    source = tmp_path / "samples.jsonl"
    rng = generate_rng(4)
    records = []
    for subject in ("a", "b"):
        for t_index in range(3):
            values = rng.uniform(0.0, 1.0, size=50).tolist()
            records.append({"subject": subject, "t_index": t_index, "values": values})
    records[0]["values"].append(1.5)
    source.write_text("\n".join(json.dumps(record) for record in records) + "\n")
    target = tmp_path / "table.csv"
    out = tmp_path / "out"
    argv = ["ingest", str(source), str(target), "--grid-m", "8", "--out-dir", str(out)]
    assert main(argv) == EXIT_DATA_ERROR
    assert main(argv + ["--clip"]) == EXIT_OK
    dataset = read_quantile_table(target)
    assert dataset.subjects == ["a", "b"]
    assert dataset.grid.m_levels == 8
    stats = json.loads((out / "ingest_stats.json").read_text())
    assert stats["clipped_samples"] == 1
    assert stats["frames"] == 6


def test_flags_override_config_file(paired_tables, tmp_path):
    x, y = paired_tables
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"k": 3, "top": 1}))
    out = tmp_path / "out"
    argv = ["estimate", str(x), str(y), "--config", str(config), "--k", "1"]
    assert main(argv + ["--out-dir", str(out)]) == EXIT_OK
    estimate = json.loads((out / "estimate.json").read_text())
    assert estimate["tuning"] == [1, 1]
    assert len(estimate["correlations"]) == 1


def test_config_file_errors(paired_tables, tmp_path):
    x, y = paired_tables
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"kk": 3}))
    out = str(tmp_path / "out")
    argv = ["estimate", str(x), str(y), "--k", "1", "--out-dir", out, "--config"]
    assert main(argv + [str(unknown)]) == EXIT_USAGE_ERROR
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(argv + [str(broken)]) == EXIT_DATA_ERROR


def test_ingest_reports_bad_values_as_data_errors(tmp_path):
    source = tmp_path / "samples.jsonl"
    records = [
        {"subject": "a", "t_index": 0, "values": [0.1, 0.4]},
        {"subject": "a", "t_index": 1, "values": [0.1, float("nan")]},
    ]
    source.write_text("\n".join(json.dumps(record) for record in records) + "\n")
    argv = ["ingest", str(source), str(tmp_path / "table.csv"), "--out-dir", str(tmp_path / "out")]
    assert main(argv) == EXIT_DATA_ERROR


def test_ingest_takes_support_from_config_file(tmp_path):
    source = tmp_path / "samples.jsonl"
    records = [{"subject": "a", "t_index": t, "values": [0.5, 1.5]} for t in range(2)]
    source.write_text("\n".join(json.dumps(record) for record in records) + "\n")
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"support": [0.0, 2.0], "grid_m": 4}))
    target = tmp_path / "table.csv"
    argv = ["ingest", str(source), str(target), "--config", str(config)]
    argv += ["--out-dir", str(tmp_path / "out")]
    assert main(argv) == EXIT_OK
    assert read_quantile_table(target).grid.support == (0.0, 2.0)
    assert main(argv + ["--support", "0,1"]) == EXIT_DATA_ERROR


def test_cv_has_no_tuning_flags(paired_tables, tmp_path):
    x, y = paired_tables
    out = str(tmp_path / "out")
    assert main(["cv", str(x), str(y), "--k", "2", "--out-dir", out]) == EXIT_USAGE_ERROR
    assert main(["cv", str(x), str(y), "--eps", "0.1", "--out-dir", out]) == EXIT_USAGE_ERROR


def test_simulate_sweep_writes_one_row_per_value(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"k_candidates": [1, 2, 3]}))
    out = tmp_path / "sweep"
    argv = SIMULATE + ["--sweep", "--config", str(config), "--out-dir", str(out)]
    assert main(argv) == EXIT_OK
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "k_or_eps,abs_rho_err,imse_u,imse_v"
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "2", "3"]
    assert json.loads((out / "manifest.json").read_text())["outputs"] == ["sweep.csv"]


def test_exported_dataset_reproduces_the_estimate(tmp_path):
    out = tmp_path / "run"
    assert main(SIMULATE + ["--out-dir", str(out), "--export"]) == EXIT_OK
    fitted = tmp_path / "fit"
    x, y = out / "dataset" / "x_quantiles.csv", out / "dataset" / "y_quantiles.csv"
    argv = ["estimate", str(x), str(y), "--k", "2", "--out-dir", str(fitted)]
    assert main(argv) == EXIT_OK
    estimate = json.loads((fitted / "estimate.json").read_text())

    config = SimConfig(
        n=30,
        grid=grid,
        seed=3,
        replicates=2,
        noise_scale=NoiseScale.standardized,
        exp_mode=ExpMode.project,
    )
    sample_x, sample_y, _ = generate_dataset(config, replicate_rng(config.seed, 0))
    assert estimate["rho"] == fit(sample_x, sample_y, Method.fpca, 2).rho
