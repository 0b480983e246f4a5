"""Acceptance run: the twelve criteria at their stated tolerances.

Each criterion 1-11 is a packaged config; a criterion passes when every case
matches its expected verdict and the run finishes inside its time limit.
Criterion 12 reruns 1-11 at another thread count and compares the reports
with the timing block removed.

    pytest -s tests/test_acceptance.py     # or: python3 tests/test_acceptance.py
"""

import json
import sys
import time

import pytest

from ergolab import cli

LIMITS = {1: 1, 2: 30, 3: 30, 4: 5, 5: 300, 6: 120, 7: 60, 8: 60, 9: 60, 10: 600, 11: 900}
THREADS = (1, 8)

_cache = {}


def run_criterion(i, threads=THREADS[0]):
    key = (i, threads)
    if key not in _cache:
        cfg = json.loads((cli.canned_dir() / f"ac{i:02d}.json").read_text())
        t0 = time.perf_counter()
        report, _ = cli.run_config(cfg, threads=threads)
        _cache[key] = (report, time.perf_counter() - t0)
    return _cache[key]


def summarize(i):
    report, secs = run_criterion(i)
    cases = ", ".join(f"{c['label']}={c['verdict']}" for c in report["cases"])
    ok = report["verdict"] == "pass" and secs < LIMITS[i]
    line = f"criterion {i:2d}: {'PASS' if ok else 'FAIL'}  {secs:7.2f}s (limit {LIMITS[i]}s)  {cases}"
    return ok, line


def determinism():
    bad = []
    for i in LIMITS:
        a, _ = run_criterion(i, THREADS[0])
        b, _ = run_criterion(i, THREADS[1])
        if cli.deterministic_part(a) != cli.deterministic_part(b):
            bad.append(i)
    line = f"criterion 12: {'PASS' if not bad else 'FAIL'}  threads {THREADS[0]} vs {THREADS[1]}" + (
        f"  differing: {bad}" if bad else "  reports identical")
    return not bad, line


def emit(line, capsys=None):
    if capsys is None:
        print(line)
        return
    with capsys.disabled():
        print("\n" + line)


@pytest.mark.parametrize("i", sorted(LIMITS))
def test_criterion(i, capsys):
    ok, line = summarize(i)
    emit(line, capsys)
    assert ok, line


def test_criterion_12_determinism(capsys):
    ok, line = determinism()
    emit(line, capsys)
    assert ok, line


def main():
    results = [summarize(i) for i in sorted(LIMITS)] + [determinism()]
    for _, line in results:
        print(line)
    return 0 if all(ok for ok, _ in results) else 1


if __name__ == "__main__":
    sys.exit(main())
