import json
import math
from pathlib import Path

import pytest

from mmv2x import cli
from mmv2x.cli import COLUMNS, SweepSpec, emit, parse_rows, run_sweep, verify_rows
from mmv2x.config import ConfigError, SystemConfig, validate

RECIPES = Path(cli.__file__).parent / "recipes"


@pytest.fixture(scope="module")
def quick_cfg():
    return validate(SystemConfig())


class TestSweepSpec:
    def test_rejects_unknown_param(self):
        with pytest.raises(ConfigError):
            SweepSpec(param="warp_factor", grid=[1, 2])

    def test_rejects_non_monotone_grid(self):
        with pytest.raises(ConfigError):
            SweepSpec(param="speed_kmh", grid=[0, 50, 20])

    def test_rejects_unknown_metric(self):
        with pytest.raises(ConfigError):
            SweepSpec(param="speed_kmh", grid=[0, 10], metrics=("pcx",))

    def test_suffixed_param_allowed(self):
        spec = SweepSpec(param="lambda_bs_per_km2", grid=[1, 10])
        assert spec.engines == ("analytic",)


class TestRunSweep:
    def test_rows_ordered_and_tagged(self, quick_cfg):
        spec = SweepSpec(param="speed_kmh", grid=[0.0, 60.0],
                         metrics=("p_local", "p_v2i"), engine="analytic")
        rows = run_sweep(quick_cfg, spec)
        assert [r["value"] for r in rows] == [0.0, 0.0, 60.0, 60.0]
        assert all(r["sweep_param"] == "speed_kmh" for r in rows)
        assert all(r["tail_mass"] is not None for r in rows)
        assert all(not r["error"] for r in rows)

    def test_point_failure_recorded_in_row(self, quick_cfg):
        spec = SweepSpec(param="cache_size", grid=[10, 1000],
                         metrics=("p_local",), engine="analytic")
        rows = run_sweep(quick_cfg, spec)
        assert not rows[0]["error"]
        assert "cache_size" in rows[1]["error"]
        assert math.isnan(rows[1]["estimate"])

    def test_mc_rows_have_intervals(self, quick_cfg):
        spec = SweepSpec(param=None, metrics=("p_local",), engine="mc",
                         drops=400, seed=3)
        rows = run_sweep(quick_cfg, spec)
        assert rows[0]["ci_lo"] is not None and rows[0]["ci_hi"] is not None

    def test_worker_count_does_not_change_rows(self, quick_cfg, monkeypatch):
        spec = SweepSpec(param="cache_size", grid=[0, 10, 20],
                         metrics=("p_local",), engine="analytic")
        monkeypatch.setenv("MMV2X_THREADS", "1")
        rows1 = run_sweep(quick_cfg, spec, jobs=1)
        monkeypatch.setenv("MMV2X_THREADS", "3")
        rows3 = run_sweep(quick_cfg, spec, jobs=3)
        strip = lambda rows: [(r["value"], r["metric"], r["estimate"]) for r in rows]
        assert strip(rows1) == strip(rows3)


class TestEmit:
    def test_header_only_for_empty(self, tmp_path):
        path = emit([], tmp_path / "empty.csv", "csv")
        lines = path.read_text().splitlines()
        assert lines == [",".join(COLUMNS)]

    def test_round_trip(self, quick_cfg, tmp_path):
        spec = SweepSpec(param="speed_kmh", grid=[0.0, 30.0],
                         metrics=("p_v2v",), engine="analytic")
        rows = run_sweep(quick_cfg, spec)
        path = emit(rows, tmp_path / "out.csv", "csv")
        back = parse_rows(path)
        assert len(back) == len(rows)
        for a, b in zip(rows, back):
            assert b["estimate"] == a["estimate"]
            assert b["value"] == a["value"]
            assert b["metric"] == a["metric"]

    def test_json_carries_config(self, quick_cfg, tmp_path):
        spec = SweepSpec(param=None, metrics=("p_local",), engine="analytic")
        rows = run_sweep(quick_cfg, spec)
        path = emit(rows, tmp_path / "out.json", "json", cfg=quick_cfg)
        doc = json.loads(path.read_text())
        assert doc["config"]["cache_size"] == 10
        assert doc["numerics"]["series_max_steps"] == 30
        assert doc["rows"][0]["metric"] == "p_local"


class TestVerify:
    def test_pairing_and_breach(self):
        rows = [
            dict(metric="pc", value=1.0, engine="analytic", estimate=0.5, error=""),
            dict(metric="pc", value=1.0, engine="mc", estimate=0.52, error=""),
        ]
        assert verify_rows(rows, tol=0.05) == []
        breaches = verify_rows(rows, tol=0.01)
        assert len(breaches) == 1 and breaches[0][0] == "pc"

    def test_scale_metrics_compare_relatively(self):
        rows = [
            dict(metric="throughput", value=0.0, engine="analytic",
                 estimate=2.0e9, error=""),
            dict(metric="throughput", value=0.0, engine="mc",
                 estimate=2.04e9, error=""),
        ]
        assert verify_rows(rows, tol=0.03) == []
        assert len(verify_rows(rows, tol=0.01)) == 1


class TestMain:
    def test_single_point_run_to_stdout(self, capsys):
        rc = cli.main(["--metric", "p_local", "--engine", "analytic"])
        assert rc == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == ",".join(COLUMNS)
        assert "p_local" in out[1]

    def test_sweep_flag_and_output(self, tmp_path, capsys):
        out = tmp_path / "res.csv"
        rc = cli.main([
            "--sweep", "cache_size=0:20:3", "--metric", "p_local,p_v2i",
            "--engine", "analytic", "--out", str(out),
        ])
        assert rc == 0
        rows = parse_rows(out)
        assert len(rows) == 6
        p_local = [r["estimate"] for r in rows if r["metric"] == "p_local"]
        assert p_local == sorted(p_local)

    def test_bad_metric_exit_code(self, capsys):
        assert cli.main(["--metric", "nope"]) == 2
        assert "unknown metric" in capsys.readouterr().err

    def test_missing_config_file(self, capsys):
        assert cli.main(["--config", "/nonexistent/cfg.json"]) == 2

    def test_verify_pass_and_fail(self, tmp_path, capsys):
        args = [
            "--metric", "p_local", "--engine", "both", "--drops", "800",
            "--seed", "5", "--out", str(tmp_path / "v.csv"), "--verify",
        ]
        assert cli.main(args + ["--tol", "0.1"]) == 0
        assert cli.main(args + ["--tol", "1e-9"]) == 1

    def test_trace_files_written(self, tmp_path):
        rc = cli.main([
            "--metric", "p_local", "--engine", "mc", "--drops", "50",
            "--seed", "1", "--out", str(tmp_path / "t.csv"),
            "--trace", str(tmp_path / "drops"),
        ])
        assert rc == 0
        assert (tmp_path / "drops.trace").exists()

    def test_figures_rendered(self, tmp_path):
        rc = cli.main([
            "--sweep", "cache_size=0:20:3", "--metric", "p_local",
            "--engine", "analytic", "--out", str(tmp_path / "fig.csv"),
            "--figures", str(tmp_path / "figs"),
        ])
        assert rc == 0
        assert (tmp_path / "figs" / "fig_p_local.png").exists()

    def test_config_with_embedded_sweep(self, tmp_path):
        doc = {
            "cache_size": 5,
            "sweep": {"param": "speed_kmh", "grid": [0, 60],
                      "metrics": ["p_local"], "engine": "analytic"},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(doc))
        out = tmp_path / "r.csv"
        assert cli.main(["--config", str(cfg_path), "--out", str(out)]) == 0
        rows = parse_rows(out)
        assert len(rows) == 2
        assert all(r["estimate"] == pytest.approx(0.05) for r in rows)


class TestRecipes:
    def test_all_recipes_parse(self):
        paths = sorted(RECIPES.glob("fig*.json"))
        assert len(paths) == 12
        for path in paths:
            doc = json.loads(path.read_text())
            assert "sweep" in doc and "param" in doc["sweep"]

    @pytest.mark.parametrize("name,metric", [
        ("fig4a.json", "pc"), ("fig4b.json", "rc"), ("fig9b.json", "delay"),
    ])
    def test_recipe_column_sets(self, tmp_path, name, metric):
        doc = json.loads((RECIPES / name).read_text())
        # shrink the grid: the documented column set is what matters here
        doc["sweep"]["grid"] = doc["sweep"].get(
            "grid", [doc["sweep"].get("lo", 0), doc["sweep"].get("hi", 1)])[:2]
        doc["sweep"].pop("lo", None); doc["sweep"].pop("hi", None)
        doc["sweep"].pop("steps", None)
        trimmed = tmp_path / name
        trimmed.write_text(json.dumps(doc))
        out = tmp_path / "out.csv"
        assert cli.main(["--config", str(trimmed), "--out", str(out)]) == 0
        rows = parse_rows(out)
        assert {r["metric"] for r in rows} >= {metric}
        with open(out) as fh:
            header = fh.readline().strip().split(",")
        assert header == list(COLUMNS)
