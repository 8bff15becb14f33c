import csv
import io
import json
import math

import pytest

import oracles
from rcdlab.suite import (
    CSV_COLUMNS,
    THREADS_ENV,
    ConfigError,
    config_from_mapping,
    default_threads,
    emit_report,
    parse_config,
    preset_config,
    run_suite,
    sharp_lambda,
    summarize,
)

MINIMAL = {"model": "two-point", "checks": [{"id": "be_constant", "lo": 1.9, "hi": 2.1}]}


def rows_of(text):
    return list(csv.reader(io.StringIO(text)))


class TestParse:
    def test_minimal(self):
        cfg = config_from_mapping(MINIMAL)
        assert cfg.row_count() == 1
        rows = run_suite(cfg)
        assert len(rows) == 1 and rows[0].status == "true"

    def test_typo_suggestion(self):
        with pytest.raises(ConfigError, match="harnack"):
            config_from_mapping({"model": "ou", "checks": [{"id": "harnak"}]})

    def test_unknown_axis_suggestion(self):
        with pytest.raises(ConfigError, match=r"checks\[0\].*'t'"):
            config_from_mapping({"model": "ou", "checks": [{"id": "harnack", "tt": [1.0]}]})

    def test_syntax_error_location(self):
        with pytest.raises(ConfigError, match="line 2, column"):
            parse_config('{"model": "ou",\n "checks": [}')

    def test_empty_grid(self):
        with pytest.raises(ConfigError, match="empty grid"):
            config_from_mapping({"model": "ou", "checks": [{"id": "harnack", "t": []}]})

    def test_missing_model(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"checks": [{"id": "harnack"}]})

    def test_bad_model(self):
        with pytest.raises(ConfigError, match="model"):
            config_from_mapping({"model": {"kind": "ou", "N": 1}, "checks": [{"id": "harnack"}]})

    def test_row_count(self):
        cfg = config_from_mapping({
            "model": "ou",
            "checks": [{"id": "harnack", "t": [0.5, 1.0], "p": [2.0, 4.0],
                        "pairs": [[-1, 1], [0, 1], [-2, 2]]}],
        })
        assert cfg.row_count() == 12
        text = emit_report(run_suite(cfg), "csv")
        table = rows_of(text)
        assert len(table) == 13
        assert tuple(table[0]) == CSV_COLUMNS

    def test_hash_ignores_output_and_threads(self):
        a = config_from_mapping(MINIMAL)
        b = config_from_mapping({**MINIMAL, "threads": 3, "output": {"path": "x.csv"}})
        c = config_from_mapping({**MINIMAL, "seed": 5})
        assert a.hash == b.hash != c.hash


class TestRun:
    def test_json_round_trip(self):
        rows = run_suite(config_from_mapping(MINIMAL))
        doc = json.loads(emit_report(rows, "json"))
        assert doc["columns"] == list(CSV_COLUMNS)
        assert doc["rows"][0]["pass"] == "true"
        assert doc["config_hash"] == rows[0].config_hash
        csv_row = rows_of(emit_report(rows, "csv"))[1]
        assert float(csv_row[CSV_COLUMNS.index("lhs")]) == doc["rows"][0]["lhs"]

    def test_report_only_rows(self):
        cfg = config_from_mapping({"model": "ou", "checks": [{"id": "kernel_lower_bound"}]})
        rows = run_suite(cfg)
        assert {r.status for r in rows} == {"n/a"}
        line, code = summarize(rows)
        assert code == 0 and "2 report-only" in line

    def test_failure_exit_code(self):
        cfg = config_from_mapping({"model": "two-point",
                                   "checks": [{"id": "be_constant", "lo": 3.0, "hi": 4.0}]})
        assert summarize(run_suite(cfg))[1] == 1

    def test_errors_become_rows(self):
        cfg = config_from_mapping({"model": "circle", "checks": [{"id": "cd_convexity"}]})
        rows = run_suite(cfg)
        assert rows[0].error and rows[0].status == "false"
        assert "errored" in summarize(rows)[0]

    def test_tolerance_override(self):
        cfg = config_from_mapping({
            "model": "two-point",
            "checks": [{"id": "be_constant", "lo": 2.5, "hi": 3.0}],
            "tolerances": {"be_constant": {"a": 1.0}},
        })
        assert run_suite(cfg)[0].status == "true"

    def test_deterministic_across_threads(self):
        cfg = config_from_mapping({
            "model": "ou",
            "checks": [{"id": "harnack", "t": [0.5, 1.0], "lambda": [0.5, "sharp"]},
                       {"id": "gradient_l2", "t": [0.1, 0.5]},
                       {"id": "w_contraction", "t": [0.25, 0.5]}],
        })
        models = {}
        a = emit_report(run_suite(cfg, threads=1, models=models), "csv")
        b = emit_report(run_suite(cfg, threads=3, models=models), "csv")
        assert a == b

    def test_unwritable_output(self, tmp_path):
        rows = run_suite(config_from_mapping(MINIMAL))
        with pytest.raises(ConfigError):
            emit_report(rows, "csv", str(tmp_path / "missing" / "out.csv"))

    def test_sharp_lambda(self):
        assert sharp_lambda(0.0, 1.0, 1.0, 2.0) == pytest.approx(oracles.sharp_lambda(0.0, 1.0, 1.0, 2.0))
        assert sharp_lambda(0.0, 1.0, 1.0, 2.0) == pytest.approx(-math.e / math.expm1(2))


class TestPresets:
    def test_acceptance_preset_shape(self):
        cfg = preset_config("paper-suite")
        assert cfg.row_count() == 300

    def test_negative_controls_fail(self):
        rows = run_suite(preset_config("negative-controls"))
        assert len(rows) == 5
        assert all(r.status == "false" and not r.error for r in rows)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="paper-suite"):
            preset_config("paper-suit")


class TestThreadsEnv:
    def test_default(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV, raising=False)
        assert default_threads() == 1

    def test_env(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "3")
        assert default_threads() == 3

    @pytest.mark.parametrize("bad", ["0", "x", "-2"])
    def test_bad_env(self, monkeypatch, bad):
        monkeypatch.setenv(THREADS_ENV, bad)
        with pytest.raises(ConfigError):
            default_threads()
