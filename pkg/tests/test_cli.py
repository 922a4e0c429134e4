import csv
import json
from pathlib import Path

import pytest

from voi.cli import main

ALL_METHODS = ["nested", "strong", "menzies", "jalal", "heath"]

TINY_BUDGETS = {
    "psa": 400,
    "nested_outer": 40,
    "nested_inner": 20,
    "menzies_pool": 200,
    "heath_probes": 5,
    "heath_inner": 40,
    "n0_probe": 10,
    "n0_datasets": 10,
    "n0_inner": 30,
}


def base_config(out: Path, **overrides) -> dict:
    cfg = {
        "model": "gaussian_toy",
        "methods": list(ALL_METHODS),
        "n": [0, 4, 16, 64],
        "replicates": 2,
        "seed": 7,
        "budgets": dict(TINY_BUDGETS),
        "out": str(out),
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path: Path, cfg: dict, name: str = "cfg.json") -> str:
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestModelsList:
    def test_lists_registry(self, capsys):
        assert main(["models", "list"]) == 0
        out = capsys.readouterr().out
        for name in ("gaussian-toy", "chemotherapy", "chronic-pain", "crc-screening"):
            assert name in out
        assert "morphine" in out and "focal" in out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    out = tmp / "results"
    code = main(["run", "--config", write_config(tmp, base_config(out))])
    assert code == 0
    return out


class TestRun:
    def test_writes_all_outputs(self, run_dir):
        for name in ("evsi.csv", "summary.json", "evsi_vs_n.svg", "residuals.csv"):
            assert (run_dir / name).is_file()

    def test_evsi_csv_schema(self, run_dir):
        rows = read_rows(run_dir / "evsi.csv")
        assert rows[0].keys() == {"model", "method", "n", "point", "lo95", "hi95", "seconds"}
        assert len(rows) == len(ALL_METHODS) * 4
        for row in rows:
            assert row["model"] == "gaussian-toy"
            assert row["method"] in ALL_METHODS
            assert float(row["lo95"]) <= float(row["point"]) <= float(row["hi95"])
            assert row["seconds"] == ""  # timing defaults to off

    def test_no_data_rows_are_zero(self, run_dir):
        rows = [r for r in read_rows(run_dir / "evsi.csv") if r["n"] == "0"]
        assert len(rows) == len(ALL_METHODS)
        assert all(float(r["point"]) == 0.0 for r in rows)

    def test_summary_json_contents(self, run_dir):
        s = json.loads((run_dir / "summary.json").read_text())
        assert s["model"] == "gaussian-toy"
        assert s["wtp"] == 1.0
        assert s["n_grid"] == [0, 4, 16, 64]
        assert s["methods"] == ALL_METHODS
        assert s["evpi"] > 0
        assert s["evppi"]["parameters"] == ["inb_mean"]
        assert 0 < s["evppi"]["value"] <= s["evpi"] * 1.2
        assert s["budgets"]["psa"] == 400
        assert isinstance(s["warnings"], dict)
        for key in ("python", "numpy", "scipy", "matplotlib", "voi"):
            assert key in s["versions"]

    def test_figure_is_svg(self, run_dir):
        head = (run_dir / "evsi_vs_n.svg").read_bytes()[:200]
        assert head.startswith(b"<?xml")
        assert b"svg" in head

    def test_residuals_schema(self, run_dir):
        rows = read_rows(run_dir / "residuals.csv")
        assert rows[0].keys() == {"model", "method", "n", "index", "fitted", "residual"}
        methods = {r["method"] for r in rows}
        assert methods == {"strong", "jalal"}
        # jalal shares one fit across the grid, so its rows carry no n
        assert all(r["n"] == "" for r in rows if r["method"] == "jalal")
        assert all(r["n"] != "" for r in rows if r["method"] == "strong")

    def test_rerun_is_byte_identical(self, tmp_path):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            cfg = write_config(tmp_path, base_config(out), f"{sub}.json")
            assert main(["run", "--config", cfg]) == 0
            outs.append(out)
        a, b = outs
        for name in ("evsi.csv", "evsi_vs_n.svg", "residuals.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        sa = json.loads((a / "summary.json").read_text())
        sb = json.loads((b / "summary.json").read_text())
        sa.pop("runtime_seconds"), sb.pop("runtime_seconds")
        assert sa == sb

    def test_thread_count_does_not_change_results(self, tmp_path):
        outs = []
        for sub, threads in (("t1", "1"), ("t2", "3")):
            out = tmp_path / sub
            cfg = write_config(tmp_path, base_config(out, methods=["nested"]), f"{sub}.json")
            assert main(["run", "--config", cfg, "--threads", threads]) == 0
            outs.append(out)
        assert (outs[0] / "evsi.csv").read_bytes() == (outs[1] / "evsi.csv").read_bytes()

    def test_seed_override_changes_estimates(self, tmp_path):
        csvs = []
        for sub, seed in (("s1", "7"), ("s2", "8")):
            out = tmp_path / sub
            cfg = write_config(tmp_path, base_config(out, methods=["strong"]), f"{sub}.json")
            assert main(["run", "--config", cfg, "--seed", seed]) == 0
            csvs.append((out / "evsi.csv").read_text())
        assert csvs[0] != csvs[1]

    def test_out_override(self, tmp_path):
        cfg = write_config(tmp_path, base_config(tmp_path / "ignored", methods=["jalal"]))
        alt = tmp_path / "elsewhere"
        assert main(["run", "--config", cfg, "--out", str(alt)]) == 0
        assert (alt / "evsi.csv").is_file()
        assert not (tmp_path / "ignored").exists()

    def test_wall_timing_fills_seconds(self, tmp_path):
        out = tmp_path / "timed"
        cfg = write_config(tmp_path, base_config(out, methods=["menzies"], timing="wall"))
        assert main(["run", "--config", cfg]) == 0
        rows = read_rows(out / "evsi.csv")
        assert all(float(r["seconds"]) >= 0 for r in rows)
        # a menzies-only run fits no regressions, so no residual file
        assert not (out / "residuals.csv").exists()


class TestConfigErrors:
    def test_missing_file(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nope.json")]) == 1
        assert "config error" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["run", "--config", str(p)]) == 1
        assert "config error" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "mutation",
        [
            {"model": None},
            {"model": "leukemia"},
            {"methods": []},
            {"methods": ["strong", "strong"]},
            {"methods": ["galton"]},
            {"n": None},
            {"n": []},
            {"n": [10, -5]},
            {"n": [10, 10]},
            {"n": ["many"]},
            {"wtp": 0},
            {"wtp": -3},
            {"replicates": 0},
            {"seed": -1},
            {"seed": 2**64},
            {"timing": "cpu"},
            {"frobnicate": True},
            {"budgets": {"psa": 0}},
            {"budgets": {"warp": 9}},
            {"budgets": {"psa": 100, "menzies_pool": 200}},
        ],
    )
    def test_rejected_configs(self, tmp_path, capsys, mutation):
        cfg = base_config(tmp_path / "out")
        for k, v in mutation.items():
            if v is None:
                cfg.pop(k, None)
            else:
                cfg[k] = v
        assert main(["run", "--config", write_config(tmp_path, cfg)]) == 1
        assert "config error" in capsys.readouterr().err

    def test_bad_cli_seed(self, tmp_path, capsys):
        cfg = write_config(tmp_path, base_config(tmp_path / "out"))
        assert main(["run", "--config", cfg, "--seed", str(2**64)]) == 1
        assert "config error" in capsys.readouterr().err

    def test_bad_thread_count(self, tmp_path, capsys):
        cfg = write_config(tmp_path, base_config(tmp_path / "out"))
        assert main(["run", "--config", cfg, "--threads", "0"]) == 1
        assert "config error" in capsys.readouterr().err


class TestEstimatorErrors:
    def test_estimator_failure_exits_2(self, tmp_path, capsys, monkeypatch):
        def boom(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr("voi.cli.evsi_strong", boom)
        cfg = write_config(tmp_path, base_config(tmp_path / "out", methods=["strong"]))
        assert main(["run", "--config", cfg]) == 2
        err = capsys.readouterr().err
        assert "estimator error" in err and "boom" in err


class TestBench:
    def test_bench_writes_table_and_csv(self, tmp_path, capsys):
        out = tmp_path / "bench"
        cfg = write_config(
            tmp_path,
            base_config(out, methods=["strong", "jalal", "nested"], n=[4, 16, 64]),
        )
        assert main(["bench", "--config", cfg]) == 0
        printed = capsys.readouterr().out
        assert "method" in printed and "speedup" in printed and "nested scaling" in printed
        rows = read_rows(out / "bench.csv")
        methods = [r["method"] for r in rows]
        assert methods[:3] == ["strong", "jalal", "nested"]
        assert sum(m.startswith("nested[S=") for m in methods) == 3
        nested = next(r for r in rows if r["method"] == "nested")
        assert nested["extrapolated"] == "false"
        assert nested["speedup_vs_nested"] == ""
        for r in rows[:2]:
            assert float(r["seconds"]) > 0
            assert float(r["speedup_vs_nested"]) > 0

    def test_bench_extrapolates_over_ceiling(self, tmp_path, capsys):
        out = tmp_path / "bench"
        budgets = dict(TINY_BUDGETS, nested_outer=5000, nested_inner=5000)
        cfg = write_config(
            tmp_path,
            base_config(
                out,
                methods=["strong", "nested"],
                n=[4, 16],
                budgets=dict(budgets, bench_nested_ceiling=10_000),
            ),
        )
        assert main(["bench", "--config", cfg]) == 0
        nested = next(r for r in read_rows(out / "bench.csv") if r["method"] == "nested")
        assert nested["extrapolated"] == "true"
        assert float(nested["seconds"]) > 0
