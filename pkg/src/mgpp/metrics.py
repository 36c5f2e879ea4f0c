"""Run metrics: an append-only JSONL stream plus an in-memory mirror.

One JSON object per line. Every record carries step/loss/sparsity/eta; prune
events add threshold/zeroed/kept; epoch boundaries add epoch/dev_accuracy;
the single closing record carries final=true with test accuracy, realized
sparsity, method, seed, and the task fingerprint. Wall-clock time is kept out
of this stream on purpose so reruns are byte-comparable.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(f"not JSON-serializable: {type(obj).__name__}")


class RunMetrics:
    """Collects step records and prune events; optionally streams them to a
    file as they arrive (line-buffered, so a crash leaves a parseable
    prefix)."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self.final: dict | None = None
        self._events: list = []
        self._fh = open(self.path, "w", encoding="utf-8") if self.path else None
        self._last_step = 0

    def log(self, record: dict) -> None:
        step = record["step"]
        if step <= self._last_step:
            raise ValueError(
                f"non-monotone step {step} after {self._last_step}")
        self._last_step = step
        self.records.append(record)
        self._write(record)

    def log_final(self, fields: dict) -> None:
        if self.final is not None:
            raise ValueError("final record already written")
        record = {"step": fields["step"], "final": True}
        record.update((k, v) for k, v in fields.items() if k != "step")
        self.final = record
        self._write(record)

    def note_event(self, event) -> None:
        self._events.append(event)

    def events(self) -> list:
        return list(self._events)

    def thresholds(self) -> list[tuple[int, float]]:
        return [(e.step, e.threshold) for e in self._events]

    def _write(self, record: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(record, default=_json_default) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_records(path) -> list[dict]:
    """Parse a metrics JSONL file back into a list of dicts."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: bad metrics line") from exc
    return records


def final_record(records: list[dict], source="metrics") -> dict:
    finals = [r for r in records if r.get("final")]
    if len(finals) != 1:
        raise ValueError(f"{source}: expected exactly one final record, "
                         f"found {len(finals)}")
    return finals[0]
