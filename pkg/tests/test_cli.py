"""CLI behaviors: compile/run round trips, flags, exit codes, bench report."""

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from stopkit.cli import main

DEMOS = Path(__file__).resolve().parent.parent / "demos"


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_run_resume_demo_prints_11(capsys):
    code, out, err = run_cli(["run", str(DEMOS / "resume.ms")], capsys)
    assert code == 0
    assert out.splitlines()[0] == "11"


def test_run_discard_demo_result_0(capsys):
    code, out, _ = run_cli(["run", str(DEMOS / "discard.ms")], capsys)
    assert code == 0
    assert "=> 0" in out


def test_compile_output_reparses_and_runs(tmp_path, capsys):
    out_file = tmp_path / "fib_inst.ms"
    code, _, _ = run_cli(["compile", str(DEMOS / "fib.ms"), "-o", str(out_file)],
                         capsys)
    assert code == 0
    code, out, _ = run_cli(["run", str(out_file)], capsys)
    assert code == 0
    assert out.splitlines()[0] == "55"


def test_compile_wrapped_eliminates_new(tmp_path, capsys):
    src = tmp_path / "ctor.ms"
    src.write_text("function P(x) { this.x = x; }\nlet p = new P(1);\nprint(p.x);\n")
    out_file = tmp_path / "ctor_inst.ms"
    code, _, _ = run_cli(["compile", str(src), "--cont", "eager",
                          "--ctor", "wrapped", "-o", str(out_file)], capsys)
    assert code == 0
    text = out_file.read_text()
    assert "new " not in text
    code, out, _ = run_cli(["run", str(out_file)], capsys)
    assert code == 0 and out.splitlines()[0] == "1"


def test_emit_anf(capsys):
    code, out, _ = run_cli(["compile", str(DEMOS / "fib.ms"), "--emit", "anf"],
                           capsys)
    assert code == 0
    assert "$t0" in out and "$rt" not in out


def test_invalid_flag_value_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["compile", "x.ms", "--cont", "bogus"])
    assert exc.value.code == 2


def test_parse_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.ms"
    bad.write_text("let = ;")
    code, _, err = run_cli(["run", str(bad)], capsys)
    assert code == 1
    assert "syntax error" in err


def test_turn_budget_guard(capsys):
    code, out, err = run_cli(
        ["run", str(DEMOS / "spin.ms"), "--max-turns", "25",
         "--delta", "5", "--timer", "exact"], capsys)
    assert code == 1
    assert "turn budget" in err


def test_plain_and_instrumented_output_match(capsys):
    code_p, out_p, _ = run_cli(["run", str(DEMOS / "fib.ms"), "--plain"], capsys)
    code_i, out_i, _ = run_cli(["run", str(DEMOS / "fib.ms")], capsys)
    assert code_p == code_i == 0
    assert out_p == out_i


def test_run_metrics_json(capsys):
    code, out, _ = run_cli(["run", str(DEMOS / "fib.ms"), "--metrics", "json"],
                           capsys)
    assert code == 0
    metrics = json.loads(out.splitlines()[-1])
    assert {"steps", "maxHostDepth", "yieldCount", "intervals",
            "pauseLatencyMs"} <= set(metrics)


def test_console_script_entry():
    proc = subprocess.run(
        [sys.executable, "-m", "stopkit.cli", "run", str(DEMOS / "counter.ms")],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "3"


# ---------------------------------------------------------------------- bench

def test_bench_reports(tmp_path, capsys):
    out_csv = tmp_path / "report.csv"
    out_json = tmp_path / "report.json"
    code, _, _ = run_cli(
        ["bench", str(DEMOS / "bench"), "--csv", str(out_csv),
         "--json", str(out_json), "--timer", "approx,countdown",
         "--max-turns", "200000"], capsys)
    assert code == 0
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    benches = len(list((DEMOS / "bench").glob("*.ms")))
    assert len(rows) == benches * 2
    for row in rows:
        assert float(row["slowdown"]) >= 1.0
    data = json.loads(out_json.read_text())
    assert all(r["error"] is None for r in data)


def test_bench_empty_dir(tmp_path, capsys):
    empty = tmp_path / "none"
    empty.mkdir()
    out_csv = tmp_path / "empty.csv"
    code, _, _ = run_cli(["bench", str(empty), "--csv", str(out_csv)], capsys)
    assert code == 0
    with open(out_csv) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1  # header only


def test_bench_records_failures_and_continues(tmp_path, capsys):
    d = tmp_path / "suite"
    d.mkdir()
    (d / "bad.ms").write_text("boom(")
    (d / "good.ms").write_text("print(1);")
    out_json = tmp_path / "r.json"
    code, _, err = run_cli(["bench", str(d), "--json", str(out_json)], capsys)
    assert code == 0
    data = json.loads(out_json.read_text())
    by_name = {r["benchmark"]: r for r in data}
    assert by_name["bad"]["error"]
    assert by_name["good"]["error"] is None


def test_bench_three_timers_one_benchmark(tmp_path, capsys):
    d = tmp_path / "one"
    d.mkdir()
    (d / "loop.ms").write_text(
        "let i = 0;\nwhile (i < 200000) { i = i + 1; }\nprint(i);\n")
    out_json = tmp_path / "timers.json"
    code, _, _ = run_cli(
        ["bench", str(d), "--json", str(out_json),
         "--timer", "exact,countdown,approx", "--step-cost", "50",
         "--countdown-n", "2000", "--max-turns", "1000000"], capsys)
    assert code == 0
    data = json.loads(out_json.read_text())
    assert len(data) == 3
    rows = {r["timer"]: r for r in data}
    assert rows["approx"]["intervalMeanMs"] == pytest.approx(100.0, rel=0.25)
    assert rows["countdown"]["intervalMeanMs"] is not None


def test_bench_implicits_cost_ordering(tmp_path, capsys):
    out_json = tmp_path / "imp.json"
    code, _, _ = run_cli(
        ["bench", str(DEMOS / "bench"), "--json", str(out_json),
         "--implicits", "true,false"], capsys)
    assert code == 0
    data = json.loads(out_json.read_text())
    arith = {r["implicits"]: r for r in data if r["benchmark"] == "arith"}
    assert arith["true"]["steps"] >= 1.2 * arith["false"]["steps"]
