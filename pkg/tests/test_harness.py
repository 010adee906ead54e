import json

import pytest

from nashpricing import cli
from nashpricing.scenarios import SCENARIOS, get_scenario


TINY_CONFIG = dict(
    episodes=2,
    max_steps=5,
    batch_update_frequency=4,
    batch_size=4,
    turbo_max_evals=4,
    turbo_batch=2,
    q_hidden=16,
    policy_hidden=16,
    advantage_hidden=16,
)


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return str(path)


class TestScenarioCatalog:
    def test_four_scenarios(self):
        assert set(SCENARIOS) == {f"scenario{i}" for i in range(1, 5)}

    def test_lookup_by_number_or_name(self):
        assert get_scenario("2") is get_scenario("scenario2")
        assert get_scenario("Scenario3").name == "scenario3"

    def test_unknown_raises(self):
        with pytest.raises(KeyError):
            get_scenario("scenario9")

    def test_with_agents(self):
        s = get_scenario("1").with_agents(5)
        assert s.params.n_agents == 5
        assert get_scenario("1").params.n_agents == 3  # original untouched

    def test_parameter_values(self):
        p = get_scenario("4").params
        assert (p.beta0, p.beta1, p.beta2, p.a) == (27.0, -3.05, -1.1, 0.2)


class TestSurfaceCommand:
    def test_writes_surface_and_bands(self, tmp_path):
        out = tmp_path / "surf"
        rc = cli.main(["surface", "--scenario", "2", "--out", str(out)])
        assert rc == 0
        lines = (out / "surface.csv").read_text().strip().splitlines()
        assert lines[0] == "x_mean,p_ref,epsilon,is_ne"
        assert len(lines) == 101
        bands = json.loads((out / "ne_bands.json").read_text())
        assert len(bands) == 10

    def test_single_cell_resolution(self, tmp_path):
        out = tmp_path / "one"
        cli.main(["surface", "--scenario", "2", "--resolution", "1",
                  "--out", str(out)])
        lines = (out / "surface.csv").read_text().strip().splitlines()
        assert len(lines) == 2

    def test_rerun_byte_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        cli.main(["surface", "--scenario", "3", "--out", str(a)])
        cli.main(["surface", "--scenario", "3", "--out", str(b)])
        assert (a / "surface.csv").read_bytes() == (b / "surface.csv").read_bytes()
        assert (a / "ne_bands.json").read_bytes() == (b / "ne_bands.json").read_bytes()


class TestTrainCommand:
    def test_emits_per_seed_files_and_summary(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        rc = cli.main([
            "train", "--scenario", "2", "--seeds", "1,2",
            "--out", str(out), "--config", tiny_config,
        ])
        assert rc == 0
        for seed in (1, 2):
            assert (out / f"rewards_seed{seed}.csv").exists()
            assert (out / f"losses_seed{seed}.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["seeds"]) == {"1", "2"}
        assert 0.0 <= summary["band_hit_rate"] <= 1.0

    def test_manifest_lists_every_output(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        cli.main([
            "train", "--scenario", "2", "--seeds", "0",
            "--out", str(out), "--config", tiny_config,
        ])
        manifest = json.loads((out / "manifest.json").read_text())
        listed = {name.rsplit("/", 1)[-1] for name in manifest["outputs"]}
        emitted = {p.name for p in out.iterdir()} - {"manifest.json"}
        assert emitted <= listed | {"manifest.json"}
        assert manifest["config_hash"]
        assert manifest["hyperparams"]["episodes"] == 2

    def test_baseline_mode(self, tmp_path, tiny_config):
        out = tmp_path / "base"
        rc = cli.main([
            "train", "--scenario", "2", "--seeds", "0", "--mode", "baseline",
            "--out", str(out), "--config", tiny_config,
        ])
        assert rc == 0
        assert (out / "rewards_seed0.csv").exists()

    def test_replay_reproduces_rewards(self, tmp_path, tiny_config):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            cli.main([
                "train", "--scenario", "2", "--seeds", "7",
                "--out", str(out), "--config", tiny_config,
            ])
        assert (a / "rewards_seed7.csv").read_bytes() == (
            b / "rewards_seed7.csv"
        ).read_bytes()


class TestCompareCommand:
    def test_paired_csv(self, tmp_path, tiny_config):
        out = tmp_path / "cmp"
        rc = cli.main([
            "compare", "--scenario", "2", "--seeds", "0,1",
            "--out", str(out), "--config", tiny_config,
        ])
        assert rc == 0
        lines = (out / "compare.csv").read_text().strip().splitlines()
        assert lines[0] == "seed,nash_final10_market_mean,baseline_final10_market_mean"
        assert len(lines) == 3
        assert (out / "nash" / "rewards_seed0.csv").exists()
        assert (out / "baseline" / "rewards_seed1.csv").exists()


class TestVerifyCommand:
    def test_report_structure_and_pass(self, tmp_path):
        out = tmp_path / "verify"
        rc = cli.main(["verify", "--scenario", "2", "--out", str(out)])
        report = json.loads((out / "verify.json").read_text())
        names = {c["name"] for c in report["checks"]}
        assert names == {
            "gain_cross_module",
            "optimal_deviation_maximality",
            "small_game_delta_bound",
        }
        assert report["all_passed"]
        assert rc == 0

    def test_closed_form_report_always_emitted(self, tmp_path):
        out = tmp_path / "verify"
        cli.main(["verify", "--scenario", "1", "--out", str(out)])
        report = json.loads((out / "verify.json").read_text())
        dstar = next(
            c for c in report["checks"]
            if c["name"] == "optimal_deviation_maximality"
        )
        assert "closed_form_mean_abs_difference" in dstar
        assert dstar["closed_form_samples"] > 0


class TestParser:
    def test_requires_command(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args([])

    def test_rejects_unknown_mode(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(
                ["train", "--scenario", "2", "--out", "x", "--mode", "greedy"]
            )
