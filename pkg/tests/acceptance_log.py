"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

RESULTS: dict = {}


def record(number: int, ok: bool, detail: str) -> None:
    RESULTS[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {number} failed: {detail}"
