"""CSV artifacts: KPM logs, control logs, and collect-campaign datasets.

Eval runs log plain KPM rows (the wire serializer's 8 columns). Collect
campaigns extend each row with the control action in effect while the
window ran (per-slice PRB delta, scheduling policy, and a control
sequence number), which is exactly what offline training needs to
reconstruct (window, action, next window, reward) transitions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .e2_wire import KPM_FIELDS, POLICIES, KpmRecord, parse_kpm_payload

KPM_HEADER = ",".join(KPM_FIELDS)

COLLECT_FIELDS = KPM_FIELDS + ("prb_delta", "policy", "ctrl_seq")
COLLECT_HEADER = ",".join(COLLECT_FIELDS)

CONTROL_HEADER = "time_ms,payload,status"


@dataclass(frozen=True)
class CollectRow:
    record: KpmRecord
    prb_delta: int
    policy: str
    ctrl_seq: int


class KpmCsvWriter:
    def __init__(self, path):
        self.path = str(path)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._fh.write(KPM_HEADER + "\n")

    def append(self, records: list[KpmRecord]) -> None:
        from .e2_wire import serialize_kpm_payload

        text = serialize_kpm_payload(records)
        if text:
            self._fh.write(text + "\n")

    def close(self) -> None:
        self._fh.close()


class CollectCsvWriter:
    def __init__(self, path):
        self.path = str(path)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._fh.write(COLLECT_HEADER + "\n")

    def append(self, records, actions: dict, ctrl_seq: int) -> None:
        """actions: slice_id -> (prb_delta, policy) in effect this window."""
        from .e2_wire import serialize_kpm_payload

        for record in records:
            delta, policy = actions[record.slice_id]
            row = serialize_kpm_payload([record])
            self._fh.write(f"{row},{delta},{policy},{ctrl_seq}\n")

    def close(self) -> None:
        self._fh.close()


class ControlCsvWriter:
    def __init__(self, path):
        self.path = str(path)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._fh.write(CONTROL_HEADER + "\n")

    def append(self, time_ms: int, payload: str, status: str) -> None:
        self._fh.write(f"{time_ms},{payload},{status}\n")

    def close(self) -> None:
        self._fh.close()


def read_kpm_csv(path) -> list[KpmRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        return []
    if lines[0] == KPM_HEADER:
        lines = lines[1:]
    return parse_kpm_payload("\n".join(lines)) if lines else []


def read_collect_csv(path) -> list[CollectRow]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        return []
    if lines[0] == COLLECT_HEADER:
        lines = lines[1:]
    rows = []
    for line_no, line in enumerate(lines, start=2):
        parts = line.split(",")
        if len(parts) != len(COLLECT_FIELDS):
            raise ValueError(
                f"{path}:{line_no}: expected {len(COLLECT_FIELDS)} fields, got {len(parts)}"
            )
        record = parse_kpm_payload(",".join(parts[: len(KPM_FIELDS)]))[0]
        policy = parts[-2]
        if policy not in POLICIES:
            raise ValueError(f"{path}:{line_no}: unknown policy {policy!r}")
        rows.append(
            CollectRow(
                record=record,
                prb_delta=int(parts[-3]),
                policy=policy,
                ctrl_seq=int(parts[-1]),
            )
        )
    return rows


def slice_series(rows: list[CollectRow]) -> dict:
    """Group collect rows into per (bs_id, slice_id) time series."""
    series: dict[tuple[str, str], list[CollectRow]] = {}
    for row in rows:
        key = (row.record.bs_id, row.record.slice_id)
        series.setdefault(key, []).append(row)
    for key in series:
        series[key].sort(key=lambda r: r.record.timestamp_ms)
    return series


def rolling_windows(records: list[KpmRecord], depth: int, ranges) -> np.ndarray:
    """Scaled, flattened T x M window ending at every index; (n, depth*M)."""
    from .xapp_sdk import extract_and_reshape, scale_window

    out = []
    for i in range(len(records)):
        window = extract_and_reshape(records[: i + 1], depth)
        out.append(scale_window(window, ranges).flat())
    if not out:
        return np.zeros((0, depth * 4))
    return np.vstack(out)
