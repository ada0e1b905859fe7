"""Command line behavior: artifacts, manifests, determinism, exit codes."""

import json
from pathlib import Path

import pytest
import yaml

from karmalab.cli import (
    EXIT_CONFIG,
    EXIT_CONVERGENCE,
    EXIT_IO,
    EXIT_OK,
    main,
)
from karmalab.core import config_to_dict, preset
from karmalab.equilibrium import Policy


def run_dirs(root: Path, command: str) -> list[Path]:
    return sorted(p for p in root.iterdir() if p.name.startswith(command + "-"))


def latest_csv(root: Path, command: str = "simulate") -> Path:
    return run_dirs(root, command)[-1] / "dataset.csv"


class TestSimulate:
    def test_baseline_dataset_and_manifest(self, tmp_path):
        rc = main([
            "simulate", "low-binary", "--baseline", "random",
            "--games", "5", "--seed", "3", "--out", str(tmp_path),
        ])
        assert rc == EXIT_OK
        run = run_dirs(tmp_path, "simulate")[0]
        csv_path = run / "dataset.csv"
        assert csv_path.exists() and csv_path.with_suffix(".meta.json").exists()
        assert len(csv_path.read_text().splitlines()) == 1 + 5 * 20
        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["config_ref"] == "low-binary"
        assert manifest["seed"] == 3
        assert all(Path(p).exists() for p in manifest["outputs"])
        assert manifest["duration_seconds"] >= 0

    def test_same_seed_gives_byte_identical_csv(self, tmp_path):
        argv = [
            "simulate", "low-full", "--agents", "threshold:12,zero:8",
            "--games", "4", "--seed", "9", "--out", str(tmp_path),
        ]
        assert main(argv) == EXIT_OK
        assert main(argv) == EXIT_OK
        first, second = run_dirs(tmp_path, "simulate")
        assert (first / "dataset.csv").read_bytes() == (second / "dataset.csv").read_bytes()

    def test_yaml_config_with_seed_override(self, tmp_path):
        cfg_path = tmp_path / "custom.yaml"
        cfg_path.write_text(yaml.safe_dump(config_to_dict(preset("high-full"))))
        rc = main([
            "simulate", str(cfg_path), "--agents", "uniform:20",
            "--games", "2", "--seed", "77", "--out", str(tmp_path),
        ])
        assert rc == EXIT_OK
        meta = json.loads(
            latest_csv(tmp_path).with_suffix(".meta.json").read_text()
        )
        assert meta["base_seed"] == 77
        assert meta["config"]["scheme"] == "full-range"

    def test_policy_file_population(self, tmp_path):
        assert main([
            "equilibrium", "low-binary", "--alpha", "0.3", "--out", str(tmp_path),
        ]) == EXIT_OK
        policy_path = run_dirs(tmp_path, "equilibrium")[0] / "policy.json"
        rc = main([
            "simulate", "low-binary", "--agents", "policy:18,zero:2",
            "--games", "2", "--policy-file", str(policy_path),
            "--out", str(tmp_path),
        ])
        assert rc == EXIT_OK
        text = latest_csv(tmp_path).read_text()
        assert text.count("policy") == 2 * 18
        assert text.count("zero") == 2 * 2

    def test_baseline_and_agents_conflict(self, tmp_path):
        rc = main([
            "simulate", "low-binary", "--baseline", "random",
            "--agents", "zero:20", "--out", str(tmp_path),
        ])
        assert rc == EXIT_CONFIG

    def test_unknown_preset(self, tmp_path):
        assert main(["simulate", "nope", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_output_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KARMALAB_OUT", str(tmp_path))
        rc = main([
            "simulate", "low-binary", "--baseline", "random", "--games", "1",
        ])
        assert rc == EXIT_OK
        assert run_dirs(tmp_path, "simulate")


class TestEquilibrium:
    def test_solves_and_serializes(self, tmp_path):
        rc = main([
            "equilibrium", "low-full", "--alpha", "0.0", "--out", str(tmp_path),
        ])
        assert rc == EXIT_OK
        run = run_dirs(tmp_path, "equilibrium")[0]
        policy = Policy.from_json(run / "policy.json")
        policy.validate()
        report = json.loads((run / "report.json").read_text())
        assert report["converged"] is True
        assert report["residual"] < 1e-6
        assert sum(report["karma_dist"]) == pytest.approx(1.0)

    def test_non_convergence_exits_three_with_best_iterate(self, tmp_path, capsys):
        rc = main([
            "equilibrium", "high-binary", "--alpha", "0.9",
            "--max-iters", "1", "--out", str(tmp_path),
        ])
        assert rc == EXIT_CONVERGENCE
        run = run_dirs(tmp_path, "equilibrium")[0]
        # the best iterate is still saved for inspection
        Policy.from_json(run / "policy.json").validate()
        report = json.loads((run / "report.json").read_text())
        assert report["converged"] is False
        assert "did not" in capsys.readouterr().err or report["residual"] > 0

    def test_malformed_alpha_is_an_argument_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["equilibrium", "low-binary", "--alpha", "1.2"])
        assert exc.value.code == 2


class TestAnalyze:
    @pytest.fixture()
    def two_datasets(self, tmp_path):
        main([
            "simulate", "low-binary", "--baseline", "random",
            "--games", "6", "--seed", "3", "--out", str(tmp_path),
        ])
        main([
            "simulate", "low-binary", "--agents", "threshold:12,zero:8",
            "--games", "6", "--seed", "3", "--out", str(tmp_path),
        ])
        return [str(r / "dataset.csv") for r in run_dirs(tmp_path, "simulate")]

    def test_report_and_figures(self, tmp_path, two_datasets):
        rc = main([
            "analyze", *two_datasets, "--n-boot", "200",
            "--split-halves", "--out", str(tmp_path),
        ])
        assert rc == EXIT_OK
        run = run_dirs(tmp_path, "analyze")[0]
        report = json.loads((run / "report.json").read_text())
        assert len(report["reports"]) == 2
        names = {r["treatment"] for r in report["reports"]}
        assert names == {"low-binary:random", "low-binary:karma"}
        assert len(report["pairwise_mww"]) == 1
        assert 0 <= report["pairwise_mww"][0]["p_value"] <= 1
        assert len(report["half_split"]) == 2
        medians = (run / "figure_medians.csv").read_text().splitlines()
        assert medians[0] == "treatment,n,median,ci_lo,ci_hi"
        assert len(medians) == 3
        deciles = (run / "figure_deciles.csv").read_text().splitlines()
        assert len(deciles) == 1 + 10 * 2

    def test_self_comparison_p_value_is_one_side(self, tmp_path, two_datasets):
        # one dataset against itself: U = n^2 / 2 and p near 1
        rc = main([
            "analyze", two_datasets[0], two_datasets[0],
            "--n-boot", "200", "--out", str(tmp_path),
        ])
        assert rc == EXIT_OK
        run = run_dirs(tmp_path, "analyze")[0]
        report = json.loads((run / "report.json").read_text())
        pair = report["pairwise_mww"][0]
        n = report["reports"][0]["n"]
        assert pair["u"] == pytest.approx(n * n / 2)
        assert 0.95 <= pair["p_value"] <= 1.0

    def test_missing_dataset_is_io_error(self, tmp_path):
        assert main([
            "analyze", str(tmp_path / "ghost.csv"), "--out", str(tmp_path),
        ]) == EXIT_IO

    def test_csv_without_sidecar_is_config_error(self, tmp_path):
        lonely = tmp_path / "lonely.csv"
        lonely.write_text("game,participant,agent_kind,S,S_rand,gain,dropped\n")
        assert main([
            "analyze", str(lonely), "--out", str(tmp_path),
        ]) == EXIT_CONFIG


class TestTopLevel:
    def test_version_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0

    def test_command_required(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
