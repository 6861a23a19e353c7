import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from rcsghmc.cli import main

SMALL_CLASSIFIER = {
    "task": {"kind": "synthetic-classifier", "n": 24, "n_test": 40, "feature_dim": 6, "rep_dim": 4},
    "sampler": {"epochs_per_cycle": 2},
    "repulsion": {"batch_size": 8},
    "diagnostics": {"probe_size": 16},
}


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return str(path)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            path = os.path.join(dirpath, f)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


# validate-config


def test_validate_config_prints_the_effective_config(capsys):
    assert main(["validate-config"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["sampler"]["iters_per_cycle"] == 100 and doc["seeds"] == [1, 2, 3]


def test_validate_config_output_round_trips(tmp_path, capsys):
    path = write_config(tmp_path, SMALL_CLASSIFIER)
    assert main(["validate-config", "--config", path, "--seeds", "4,5"]) == 0
    first = capsys.readouterr().out
    again = tmp_path / "effective.json"
    again.write_text(first)
    assert main(["validate-config", "--config", str(again)]) == 0
    assert capsys.readouterr().out == first


def test_unknown_key_exits_2_with_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "sampler": {\n    "cycels": 3\n  }\n}')
    assert main(["validate-config", "--config", str(path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and "sampler.cycels (line 3)" in err["message"]


def test_malformed_json_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{\n  seeds: [1]\n}")
    assert main(["toy2d", "--config", str(path), "--outdir", str(tmp_path)]) == 2
    assert "line 2" in json.loads(capsys.readouterr().err)["message"]


def test_missing_config_file_exits_2(tmp_path):
    assert main(["toy2d", "--config", str(tmp_path / "nope.json"), "--outdir", str(tmp_path)]) == 2


def test_bad_flags(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["toy2d", "--seeds", "1,x"])
    assert err.value.code == 2
    assert main(["toy2d", "--jobs", "0", "--outdir", str(tmp_path)]) == 2
    assert main(["toy2d", "--seeds", "1,1", "--outdir", str(tmp_path)]) == 2


def test_wrong_task_for_command_exits_2(tmp_path):
    path = write_config(tmp_path, {"task": {"kind": "toy-2d"}})
    assert main(["diversity", "--config", path, "--outdir", str(tmp_path)]) == 2
    path = write_config(tmp_path, SMALL_CLASSIFIER)
    assert main(["toy2d", "--config", path, "--outdir", str(tmp_path)]) == 2


# toy2d


def test_toy2d_layout_and_formats(tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["toy2d", "--outdir", str(out), "--seeds", "1,2"]) == 0
    assert capsys.readouterr().out.strip() == str(out / "toy2d" / "summary.json")
    for seed in ("1", "2"):
        run_dir = out / "toy2d" / seed
        assert sorted(os.listdir(run_dir)) == ["report.json", "samples.csv", "trajectory.csv"]
        report = read_json(run_dir / "report.json")
        assert report["status"] == "ok" and report["files"] == ["trajectory.csv", "samples.csv", "report.json"]
        traj = read_csv(run_dir / "trajectory.csv")
        assert traj[0] == ["cycle", "iter", "chain", "theta_0", "theta_1"]
        assert len(traj) == 1 + 2 * 100
        samples = read_csv(run_dir / "samples.csv")
        assert samples[0] == ["cycle", "chain", "steps", "potential", "theta_0", "theta_1"]
        assert [r[:3] for r in samples[1:]] == [["1", "0", "100"], ["2", "0", "200"]]
        # 17 significant digits survive a float round trip
        for cell in traj[1][3:]:
            assert format(float(cell), ".17g") == cell
    summary = read_json(out / "toy2d" / "summary.json")
    assert summary["seeds"] == [1, 2] and summary["mean_coverage"] == 1.0
    assert "outdir" not in read_json(out / "toy2d" / "config.json")


def test_toy2d_sgld_and_map_algorithms(tmp_path):
    for algorithm in ("sgld", "sghmc", "map"):
        path = write_config(tmp_path, {"sampler": {"algorithm": algorithm}}, f"{algorithm}.json")
        out = tmp_path / algorithm
        assert main(["toy2d", "--config", path, "--outdir", str(out), "--seeds", "1"]) == 0
        assert read_json(out / "toy2d" / "1" / "report.json")["algorithm"] == algorithm
    assert len(read_csv(tmp_path / "map" / "toy2d" / "1" / "trajectory.csv")) == 1


def test_divergence_exits_3_with_structured_report(tmp_path, capsys):
    path = write_config(tmp_path, {"sampler": {"step_size": 1e3}})
    assert main(["toy2d", "--config", path, "--outdir", str(tmp_path), "--seeds", "1"]) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[0])
    assert err["error"] == "chain-divergence" and err["seed"] == 1 and err["chain"] == 0
    report = read_json(tmp_path / "toy2d" / "1" / "report.json")
    assert report["status"] == "diverged" and report["error"]["cycle"] == 1
    assert read_json(tmp_path / "toy2d" / "summary.json")["status"] == "diverged"


def test_huge_xi_ends_farther_from_both_modes(tmp_path):
    recommended = write_config(tmp_path, {"repulsion": {"strength": 2.0}}, "a.json")
    huge = write_config(tmp_path, {"repulsion": {"strength": 2000.0}}, "b.json")
    seeds = "1,2,3,4,5"
    assert main(["toy2d", "--config", recommended, "--outdir", str(tmp_path / "a"), "--seeds", seeds]) == 0
    assert main(["toy2d", "--config", huge, "--outdir", str(tmp_path / "b"), "--seeds", seeds]) == 0
    for seed in seeds.split(","):
        near = read_json(tmp_path / "a" / "toy2d" / seed / "report.json")
        far = read_json(tmp_path / "b" / "toy2d" / seed / "report.json")
        theta = lambda run: np.array(  # noqa: E731
            [float(v) for v in read_csv(tmp_path / run / "toy2d" / seed / "samples.csv")[-1][4:]]
        )
        means = np.array([[-3.0, 0.0], [3.0, 0.0]])
        assert np.all(np.linalg.norm(means - theta("b"), axis=1) > np.linalg.norm(means - theta("a"), axis=1))
        assert far["nearest_mode_distance"][-1] > near["nearest_mode_distance"][-1]


# ablate


def test_ablate_single_value_single_seed_gives_one_row(tmp_path):
    assert main(["ablate", "--outdir", str(tmp_path), "--seeds", "3", "--sweep", "cycles", "--values", "2"]) == 0
    rows = read_csv(tmp_path / "ablate-cycles" / "results.csv")
    assert rows[0] == ["parameter", "value", "seed", "metric", "score"]
    assert rows[1:] == [["cycles", "2", "3", "coverage", "1"]]
    assert os.path.exists(tmp_path / "ablate-cycles" / "2" / "3" / "report.json")


def test_xi_sweep_has_an_interior_optimum(tmp_path):
    args = ["ablate", "--outdir", str(tmp_path), "--seeds", "1,2,3,4,5", "--sweep", "xi"]
    assert main(args + ["--values", "0.002,2,2000"]) == 0
    means = read_json(tmp_path / "ablate-xi" / "summary.json")["mean_score"]
    assert means["2.0"] > means["0.002"] and means["2.0"] > means["2000.0"]


def test_repulsion_batch_sweep_needs_representation_mode(tmp_path):
    args = ["ablate", "--outdir", str(tmp_path), "--sweep", "repulsion_batch", "--values", "4"]
    assert main(args) == 2
    path = write_config(tmp_path, {**SMALL_CLASSIFIER, "sampler": {"epochs_per_cycle": 1, "cycles": 2}})
    assert main(args + ["--config", path, "--seeds", "1"]) == 0
    rows = read_csv(tmp_path / "ablate-repulsion_batch" / "results.csv")
    assert rows[1][:4] == ["repulsion_batch", "4", "1", "ensemble_accuracy"]


# diversity


def test_diversity_reports_both_means(tmp_path):
    path = write_config(tmp_path, SMALL_CLASSIFIER)
    assert main(["diversity", "--config", path, "--outdir", str(tmp_path), "--seeds", "2"]) == 0
    summary = read_json(tmp_path / "diversity" / "summary.json")
    entry = summary["per_seed"][0]
    assert entry["difference"] == entry["with_repulsion"] - entry["without_repulsion"]
    assert summary["mean_with_repulsion"] == entry["with_repulsion"]
    for arm in ("repulsion", "control"):
        rows = read_csv(tmp_path / "diversity" / arm / "2" / "distances.csv")
        assert rows[0] == ["sample", "c1k0", "c2k0", "c3k0"]
        D = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0.0)


def test_diversity_with_a_single_sample_exits_2(tmp_path, capsys):
    doc = {**SMALL_CLASSIFIER, "sampler": {"cycles": 1, "epochs_per_cycle": 1}}
    path = write_config(tmp_path, doc)
    assert main(["diversity", "--config", path, "--outdir", str(tmp_path), "--seeds", "1"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "invalid-input"


# ensemble-eval


def test_ensemble_eval_rows_and_jensen(tmp_path):
    path = write_config(tmp_path, SMALL_CLASSIFIER)
    assert main(["ensemble-eval", "--config", path, "--outdir", str(tmp_path), "--seeds", "1,2"]) == 0
    rows = read_csv(tmp_path / "ensemble-eval" / "results.csv")
    assert [r[:2] for r in rows[1:]] == [["1", "map"], ["1", "ensemble"], ["2", "map"], ["2", "ensemble"]]
    summary = read_json(tmp_path / "ensemble-eval" / "summary.json")
    assert summary["jensen_holds"]
    for seed in ("1", "2"):
        report = read_json(tmp_path / "ensemble-eval" / seed / "report.json")
        assert report["ensemble"]["nll"] <= report["mean_member_nll"] + 1e-10
        assert report["max_normalization_error"] <= 1e-12
        assert np.isfinite(report["map"]["grad_norm"])
        assert "metrics.csv" in report["files"]


def test_single_member_ensemble_equals_the_member(tmp_path):
    doc = {**SMALL_CLASSIFIER, "sampler": {"cycles": 1, "epochs_per_cycle": 1}}
    path = write_config(tmp_path, doc)
    assert main(["ensemble-eval", "--config", path, "--outdir", str(tmp_path), "--seeds", "1"]) == 0
    report = read_json(tmp_path / "ensemble-eval" / "1" / "report.json")
    assert len(report["members"]) == 1
    assert report["ensemble"]["accuracy"] == report["members"][0]["accuracy"]
    assert report["ensemble"]["nll"] == pytest.approx(report["members"][0]["nll"], rel=1e-14)


def test_final_cycle_members(tmp_path):
    doc = {**SMALL_CLASSIFIER, "ensemble": {"members": "final_cycle"}, "sampler": {"chains": 2, "epochs_per_cycle": 1}}
    path = write_config(tmp_path, doc)
    assert main(["ensemble-eval", "--config", path, "--outdir", str(tmp_path), "--seeds", "1"]) == 0
    report = read_json(tmp_path / "ensemble-eval" / "1" / "report.json")
    assert len(report["members"]) == 2
    assert len(read_csv(tmp_path / "ensemble-eval" / "1" / "samples.csv")) == 1 + 6


# determinism


def test_rerun_and_parallel_run_are_byte_identical(tmp_path):
    path = write_config(tmp_path, SMALL_CLASSIFIER)
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
        args = ["ablate", "--config", path, "--outdir", str(tmp_path / name), "--seeds", "1,2"]
        assert main(args + ["--sweep", "xi", "--values", "0,0.001", "--jobs", jobs]) == 0
    a, b, c = (tree_bytes(tmp_path / n) for n in "abc")
    assert len(a) == 1 + 2 + 2 * 2 * 4
    assert a == b == c


def test_effective_config_reproduces_the_run(tmp_path):
    assert main(["toy2d", "--outdir", str(tmp_path / "a"), "--seeds", "4"]) == 0
    saved = str(tmp_path / "a" / "toy2d" / "config.json")
    assert main(["toy2d", "--config", saved, "--outdir", str(tmp_path / "b")]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "rcsghmc", "toy2d", "--outdir", str(tmp_path), "--seeds", "1"],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip().endswith("summary.json")
