"""Exporter acceptance: the exported dataset must round-trip through the
consumer's own tooling, end to end."""

import json
import subprocess
import sys


def primary_cli(*argv) -> subprocess.CompletedProcess:
    return subprocess.run([sys.executable, "-m", "vtalign", *argv],
                          capture_output=True, text=True)


def test_export_round_trip(tmp_path):
    from vtalign_exporter import cli

    out = tmp_path / "demo"
    assert cli.run(["demo-export", "--out", str(out), "--encoder", "mock:16",
                    "--seed", "3"]) == 0

    validated = primary_cli("validate", "--data", str(out))
    validate_ok = validated.returncode == 0 and "ok: 2 videos, 2 classes" in validated.stdout

    report_path = tmp_path / "report.json"
    evaluated = primary_cli("eval", "--data", str(out), "--init-seed", "0",
                            "--out", str(report_path))
    eval_ok = evaluated.returncode == 0
    if eval_ok:
        report = json.loads(report_path.read_text())
        eval_ok = 0.0 <= report["top1"] <= 1.0 and report["n_videos"] == 2

    ok = validate_ok and eval_ok
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE export-round-trip: {status}  validate={validate_ok} "
          f"classify={eval_ok}")
    assert ok, (validated.stdout, validated.stderr, evaluated.stdout, evaluated.stderr)
