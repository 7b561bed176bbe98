import json

import pytest

from fairdiag.cli import main
from fairdiag.pipeline import AuditConfig, ConfigError, config_hash, load_config, run_audit, run_audit_to_dir
from fairdiag.report import format_cell, load_report_json, mitigation_label, render_outputs

FAST_DATA = {"synthetic": {"n_per_class": [120, 40, 40], "n_features": 5,
                           "class_separation": 8.0, "seed": 5}}


def fast_config(**overrides):
    base = {
        "seed": 5,
        "attributes": ["gender"],
        "mitigations": ["none"],
        "data": FAST_DATA,
        "grid": [{"C": 1.0, "kernel": "rbf"}],
        "counterfactual": False,
        "proxy_scan": False,
    }
    base.update(overrides)
    return base


class TestConfigValidation:
    def test_minimal_config_parses(self):
        config = AuditConfig.from_dict(fast_config())
        assert config.attributes == ("gender",)
        assert config.outer_folds == 5

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            AuditConfig.from_dict(fast_config(extra_knob=1))

    def test_unknown_nested_key_rejected(self):
        data = {"synthetic": dict(FAST_DATA["synthetic"], mystery=2)}
        with pytest.raises(ConfigError, match="unknown keys"):
            AuditConfig.from_dict(fast_config(data=data))

    def test_seed_is_mandatory(self):
        config = fast_config()
        del config["seed"]
        with pytest.raises(ConfigError, match="seed"):
            AuditConfig.from_dict(config)

    def test_bad_mitigation_rejected(self):
        with pytest.raises(ConfigError, match="mitigations"):
            AuditConfig.from_dict(fast_config(mitigations=["nonsense"]))

    def test_empty_attributes_rejected(self):
        with pytest.raises(ConfigError, match="attributes"):
            AuditConfig.from_dict(fast_config(attributes=[]))

    def test_data_must_pick_one_source(self):
        with pytest.raises(ConfigError, match="exactly one"):
            AuditConfig.from_dict(fast_config(data={}))
        both = {"synthetic": FAST_DATA["synthetic"], "csv": {"path": "x.csv"}}
        with pytest.raises(ConfigError, match="exactly one"):
            AuditConfig.from_dict(fast_config(data=both))

    def test_bad_grid_entry_rejected(self):
        with pytest.raises(ConfigError, match="grid"):
            AuditConfig.from_dict(fast_config(grid=[{"C": 1.0, "kernel": "cubic"}]))

    def test_config_hash_tracks_content(self):
        a = AuditConfig.from_dict(fast_config())
        b = AuditConfig.from_dict(fast_config(seed=6))
        assert config_hash(a) != config_hash(b)
        assert config_hash(a) == config_hash(AuditConfig.from_dict(fast_config()))

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "missing.json")


class TestFormatting:
    def test_reference_cell_format(self):
        assert format_cell(0.43, 0.04) == "0.43 ±0.04"

    def test_rounding(self):
        assert format_cell(0.955, 0.0449) == "0.95 ±0.04"
        assert format_cell(1.0, 0.0) == "1.00 ±0.00"

    def test_undefined_cell(self):
        assert format_cell(None, None) == "n/a"
        assert format_cell(float("nan"), 0.1) == "n/a"

    def test_mitigation_labels(self):
        assert mitigation_label("none", "race") == "No Mitigation"
        assert mitigation_label("pre", "race") == "Race Correction"
        assert mitigation_label("pre+proxy", "race") == "Race & Total Brain Volume Correction"
        assert mitigation_label("in", "age") == "Adversarial Debiasing"
        assert mitigation_label("post", "gender") == "Reject Option Classification"


class TestRunAudit:
    def test_report_completeness(self):
        config = AuditConfig.from_dict(fast_config(mitigations=["none", "pre"]))
        report = run_audit(config)
        cells = report["cells"]["gender"]
        assert set(cells.keys()) == {"CN/MCI", "MCI/AD", "CN/AD"}
        for task in cells.values():
            assert set(task.keys()) == {"none", "pre"}
            for cell in task.values():
                assert "metrics" in cell and "group_rates" in cell
        assert report["provenance"]["config_hash"] == config_hash(config)

    def test_identical_runs_are_byte_identical(self, tmp_path):
        config = AuditConfig.from_dict(fast_config())
        run_audit_to_dir(config, tmp_path / "a", jobs=1)
        run_audit_to_dir(config, tmp_path / "b", jobs=2)
        a = (tmp_path / "a" / "report.json").read_bytes()
        b = (tmp_path / "b" / "report.json").read_bytes()
        assert a == b

    def test_render_without_recompute(self, tmp_path):
        config = AuditConfig.from_dict(fast_config())
        run_audit_to_dir(config, tmp_path / "run", jobs=1)
        report = load_report_json(tmp_path / "run" / "report.json")
        rerendered = tmp_path / "rerender"
        rerendered.mkdir()
        render_outputs(report, rerendered)
        original = (tmp_path / "run" / "fairness_gender.csv").read_text()
        assert (rerendered / "fairness_gender.csv").read_text() == original

    def test_failure_removes_partial_outputs(self, tmp_path):
        bad = fast_config(data={"csv": {"path": str(tmp_path / "missing.csv")}})
        config = AuditConfig.from_dict(bad)
        with pytest.raises(FileNotFoundError):
            run_audit_to_dir(config, tmp_path / "out", jobs=1)
        assert not (tmp_path / "out" / "report.json").exists()

    def test_csv_round_trip_audit(self, tmp_path):
        from fairdiag.cohort import SyntheticConfig, generate_synthetic, to_csv

        cohort = generate_synthetic(SyntheticConfig(n_per_class=(120, 40, 40), n_features=5,
                                                    class_separation=8.0, seed=5))
        path = tmp_path / "cohort.csv"
        to_csv(cohort, path)
        config = AuditConfig.from_dict(fast_config(data={"csv": {"path": str(path)}}))
        report = run_audit(config)
        assert report["cells"]["gender"]["CN/MCI"]["none"]["metrics"]["weighted_f1"]["mean"] > 0.9


class TestCli:
    def test_missing_config_exits_one(self, capsys, tmp_path):
        code = main(["audit", "--config", str(tmp_path / "missing.json")])
        assert code == 1
        assert "missing.json" in capsys.readouterr().err

    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_generate_writes_csv(self, tmp_path, capsys):
        config_path = tmp_path / "gen.json"
        config_path.write_text(json.dumps({"synthetic": dict(FAST_DATA["synthetic"])}))
        code = main(["generate", "--config", str(config_path), "--out", str(tmp_path / "d")])
        assert code == 0
        assert (tmp_path / "d" / "cohort.csv").exists()
        assert "200 records" in capsys.readouterr().out

    def test_audit_and_report_round_trip(self, tmp_path, capsys):
        config_path = tmp_path / "audit.json"
        config_path.write_text(json.dumps(fast_config()))
        out = tmp_path / "out"
        assert main(["audit", "--config", str(config_path), "--out", str(out), "--jobs", "1"]) == 0
        assert (out / "report.json").exists()
        assert (out / "audit.log").exists()
        assert (out / "fairness_gender.csv").exists()

        rerender = tmp_path / "rer"
        assert main(["report", "--report", str(out / "report.json"), "--out", str(rerender)]) == 0
        assert (rerender / "fairness_gender.csv").read_text() == (out / "fairness_gender.csv").read_text()

    def test_seed_override_changes_provenance(self, tmp_path):
        config_path = tmp_path / "audit.json"
        config_path.write_text(json.dumps(fast_config()))
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["audit", "--config", str(config_path), "--out", str(out_a)]) == 0
        assert main(["audit", "--config", str(config_path), "--out", str(out_b), "--seed", "99"]) == 0
        rep_a = load_report_json(out_a / "report.json")
        rep_b = load_report_json(out_b / "report.json")
        assert rep_a["provenance"]["seed"] == 5
        assert rep_b["provenance"]["seed"] == 99
        assert rep_a["provenance"]["config_hash"] != rep_b["provenance"]["config_hash"]

    def test_env_var_output_dir(self, tmp_path, monkeypatch, capsys):
        config_path = tmp_path / "gen.json"
        config_path.write_text(json.dumps({"synthetic": dict(FAST_DATA["synthetic"])}))
        monkeypatch.setenv("FAIRDIAG_OUT", str(tmp_path / "env_out"))
        assert main(["generate", "--config", str(config_path)]) == 0
        assert (tmp_path / "env_out" / "cohort.csv").exists()
