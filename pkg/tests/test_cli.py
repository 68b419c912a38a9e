import json

import numpy as np
import pytest

from rfslam.cli import (
    ConfigError,
    METRICS_HEADER,
    RunConfig,
    compare,
    deterministic_metrics_view,
    deterministic_report_view,
    load_report,
    main,
    run,
    scenario_hash,
)
from rfslam.sim import default_scenario, save_scenario


def small_config(**kw):
    defaults = dict(filter_kind="ek-pmb", gamma=2, mc_runs=2, seed=11)
    defaults.update(kw)
    return RunConfig(**defaults)


@pytest.fixture(scope="module")
def small_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    report = run(small_config(out_dir=str(out)))
    return out, report


class TestRun:
    def test_writes_all_outputs(self, small_report):
        out, report = small_report
        for name in ("metrics.csv", "report.json", "gospa_vs_step.svg",
                     "mae_vs_step.svg", "gospa_decomposition.csv", "rmse.csv",
                     "scenario.json"):
            assert (out / name).exists()
        assert report["schema"] == "rfslam-report/v1"
        assert len(report["per_step"]["step"]) == 40

    def test_decomposition_csv_consistent(self, small_report):
        out, report = small_report
        lines = (out / "gospa_decomposition.csv").read_text().strip().splitlines()
        assert lines[0] == ("step,sp_localization,sp_missed,sp_false,"
                            "va_localization,va_missed,va_false")
        assert len(lines) == 41
        # Decomposition terms recombine to the reported distance (power 2).
        parts = report["per_step"]["gospa_decomposition"]["va"]
        per_run = np.array([r["gospa_va"] for r in report["runs"]])
        assert len(parts["localization"]) == 40
        rmse_csv = (out / "rmse.csv").read_text().strip().splitlines()
        assert rmse_csv[0] == "quantity,rmse"
        assert len(rmse_csv) == 4

    def test_metrics_header(self, small_report):
        out, _ = small_report
        text = (out / "metrics.csv").read_text()
        assert text.splitlines()[0] == METRICS_HEADER
        assert len(text.strip().splitlines()) == 41

    def test_report_schema_roundtrip_is_byte_stable(self, small_report, tmp_path):
        out, _ = small_report
        original = (out / "report.json").read_bytes()
        report = load_report(out / "report.json")
        from rfslam.cli import write_report
        write_report(tmp_path / "again.json", report)
        assert (tmp_path / "again.json").read_bytes() == original

    def test_deterministic_outputs(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        run(small_config(out_dir=str(a), mc_runs=2))
        run(small_config(out_dir=str(b), mc_runs=2))
        va = deterministic_metrics_view((a / "metrics.csv").read_text())
        vb = deterministic_metrics_view((b / "metrics.csv").read_text())
        assert va == vb
        ra = deterministic_report_view(json.loads((a / "report.json").read_text()))
        rb = deterministic_report_view(json.loads((b / "report.json").read_text()))
        assert json.dumps(ra, sort_keys=True) == json.dumps(rb, sort_keys=True)
        assert (a / "gospa_vs_step.svg").read_bytes() == \
            (b / "gospa_vs_step.svg").read_bytes()

    def test_seed_changes_outputs(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        run(small_config(out_dir=str(a)))
        run(small_config(out_dir=str(b), seed=12))
        assert deterministic_metrics_view((a / "metrics.csv").read_text()) != \
            deterministic_metrics_view((b / "metrics.csv").read_text())

    def test_structural_identity_gamma1(self, tmp_path):
        a = tmp_path / "pmb"
        b = tmp_path / "pmbm"
        run(small_config(out_dir=str(a), filter_kind="ek-pmb", gamma=1,
                         mc_runs=3))
        run(small_config(out_dir=str(b), filter_kind="ek-pmbm", gamma=1,
                         mc_runs=3))
        assert deterministic_metrics_view((a / "metrics.csv").read_text()) == \
            deterministic_metrics_view((b / "metrics.csv").read_text())

    def test_parallel_jobs_match_sequential(self, tmp_path):
        a = tmp_path / "seq"
        b = tmp_path / "par"
        run(small_config(out_dir=str(a), mc_runs=3, jobs=1))
        run(small_config(out_dir=str(b), mc_runs=3, jobs=2))
        assert deterministic_metrics_view((a / "metrics.csv").read_text()) == \
            deterministic_metrics_view((b / "metrics.csv").read_text())

    def test_deterministic_view_strips_timing(self, small_report):
        out, report = small_report
        view = deterministic_metrics_view((out / "metrics.csv").read_text())
        assert "ms_predict" not in view.splitlines()[0]
        assert "timing" not in deterministic_report_view(report)


class TestCompare:
    def test_identical_reports_zero_delta(self, small_report):
        _, report = small_report
        csv_text, table = compare([report, report])
        rows = csv_text.strip().splitlines()
        assert rows[0].startswith("metric,")
        for row in rows[1:]:
            cells = row.split(",")
            assert cells[1] == cells[2]
        assert "position_rmse_m" in table

    def test_refuses_mismatched_scenarios(self, small_report, tmp_path):
        _, report = small_report
        other = dict(report)
        other["scenario_hash"] = "0" * 64
        with pytest.raises(ConfigError):
            compare([report, other])

    def test_needs_two_reports(self, small_report):
        _, report = small_report
        with pytest.raises(ConfigError):
            compare([report])


class TestScenarioHash:
    def test_stable_and_sensitive(self):
        a = default_scenario(seed=1)
        b = default_scenario(seed=1)
        c = default_scenario(seed=2)
        assert scenario_hash(a) == scenario_hash(b)
        assert scenario_hash(a) != scenario_hash(c)


class TestMain:
    def test_run_and_compare_cli(self, tmp_path, capsys):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["run", "--filter", "ek-pmb", "--gamma", "1", "--mc", "2",
                     "--seed", "5", "--out", str(out_a)]) == 0
        assert main(["run", "--filter", "ek-pmb", "--gamma", "2", "--mc", "2",
                     "--seed", "5", "--out", str(out_b)]) == 0
        assert main(["compare", str(out_a / "report.json"),
                     str(out_b / "report.json"),
                     "--out", str(tmp_path / "cmp")]) == 0
        assert (tmp_path / "cmp" / "comparison.csv").exists()
        captured = capsys.readouterr()
        assert "position_rmse_m" in captured.out

    def test_config_file_with_flag_override(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"filter": "ek-pmbm", "gamma": 3,
                                        "mc": 2, "seed": 4}))
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg_path), "--gamma", "1",
                     "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["gamma"] == 1
        assert report["config"]["filter"] == "ek-pmbm"

    def test_bad_config_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["run", "--config", str(bad)]) == 2
        bad.write_text(json.dumps({"unknown_key": 1}))
        assert main(["run", "--config", str(bad)]) == 2
        assert main(["run", "--mc", "0", "--out", str(tmp_path)]) == 2

    def test_missing_scenario_exits_3(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"scenario": str(tmp_path / "missing.json"),
                                   "mc": 1, "out": str(tmp_path / "o")}))
        assert main(["run", "--config", str(cfg)]) == 3

    def test_invalid_scenario_exits_2(self, tmp_path, capsys):
        scen = tmp_path / "scen.json"
        scen.write_text("{\"bs\": [0, 0]}")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"scenario": str(scen), "mc": 1,
                                   "out": str(tmp_path / "o")}))
        assert main(["run", "--config", str(cfg)]) == 2

    def test_scenario_file_accepted(self, tmp_path):
        scen = tmp_path / "scen.json"
        save_scenario(default_scenario(seed=2, steps=5), scen)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"scenario": str(scen), "mc": 1,
                                   "gamma": 1}))
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert len(report["per_step"]["step"]) == 5
