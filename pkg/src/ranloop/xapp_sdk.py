"""xApp SDK: service-model connector plus the data-processing pipeline.

``XAppClient`` handles RIC-facing messaging (registration,
subscriptions, inbound KPM ring buffers, outbound controls). The
processing helpers turn raw KPM records into model inputs: the last T
report windows of M metrics per slice as a T x M matrix, zero-padded
and masked when fewer than T windows exist, then min-max scaled into
[0, 1] with ranges fixed at training time.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .e2_wire import (
    SLICES,
    ControlDirective,
    E2Frame,
    KpmRecord,
    MessageType,
    parse_kpm_payload,
    serialize_control_payload,
)

log = logging.getLogger(__name__)

RIC_ID = "ric"

# metric columns extracted from each KpmRecord, in model input order
METRICS = ("dl_throughput_mbps", "tx_packets", "buffer_bytes", "prb_alloc")

DEFAULT_DEPTH = 4  # T report windows per model input


def record_metrics(record: KpmRecord) -> np.ndarray:
    return np.array(
        [
            record.dl_throughput_mbps,
            record.tx_packets,
            record.buffer_bytes,
            record.prb_alloc,
        ],
        dtype=np.float64,
    )


@dataclass
class KpmWindow:
    """T x M metric matrix, oldest row first; padded rows are zero-filled."""

    values: np.ndarray
    padded: np.ndarray  # bool per row, True where zero-filled

    @property
    def depth(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        return self.values.ravel()


@dataclass
class ScalingRanges:
    """Per-metric (min, max) fixed at training time; values clamp to [0, 1]."""

    mins: np.ndarray
    maxs: np.ndarray
    metrics: tuple = METRICS

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if self.mins.shape != (len(self.metrics),) or self.maxs.shape != self.mins.shape:
            raise ValueError("ranges must provide one (min, max) per metric")
        if np.any(self.maxs <= self.mins):
            raise ValueError("each range needs max > min")

    @classmethod
    def from_samples(cls, samples, lo_pct: float = 1.0, hi_pct: float = 99.0):
        """Robust ranges from raw metric rows (percentiles, then widened
        if a column is degenerate)."""
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        if samples.shape[1] != len(METRICS):
            raise ValueError(f"expected {len(METRICS)} metric columns")
        mins = np.percentile(samples, lo_pct, axis=0)
        maxs = np.percentile(samples, hi_pct, axis=0)
        for i in range(len(METRICS)):
            if maxs[i] <= mins[i]:
                maxs[i] = mins[i] + 1.0
        return cls(mins=mins, maxs=maxs)

    def scale_values(self, raw: np.ndarray) -> np.ndarray:
        scaled = (np.asarray(raw, dtype=np.float64) - self.mins) / (self.maxs - self.mins)
        return np.clip(scaled, 0.0, 1.0)


def fit_slice_ranges(records) -> dict:
    """Per-slice scaling ranges fitted on each slice's own records.

    Slices live on very different scales (an eMBB queue dwarfs a URLLC
    one), so per-slice ranges keep every slice's dynamics visible after
    scaling; pooled ranges would flatten the small slices to ~0.
    """
    by_slice: dict[str, list] = {s: [] for s in SLICES}
    for record in records:
        by_slice[record.slice_id].append(record_metrics(record))
    ranges = {}
    for slice_id in SLICES:
        rows = by_slice[slice_id]
        if not rows:
            raise ValueError(f"no records for slice {slice_id}")
        ranges[slice_id] = ScalingRanges.from_samples(np.vstack(rows))
    return ranges


def extract_and_reshape(records, depth: int = DEFAULT_DEPTH) -> KpmWindow:
    """Build the T x M input for one (bs, slice) stream.

    ``records`` is the ring buffer content, oldest first. With k < T
    records available the top T - k rows are zero-padded and masked;
    with more than T records only the most recent T are used.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    recent = list(records)[-depth:]
    values = np.zeros((depth, len(METRICS)), dtype=np.float64)
    padded = np.ones(depth, dtype=bool)
    offset = depth - len(recent)
    for i, record in enumerate(recent):
        values[offset + i] = record_metrics(record)
        padded[offset + i] = False
    return KpmWindow(values=values, padded=padded)


def scale_window(window: KpmWindow, ranges: ScalingRanges) -> KpmWindow:
    """Scale each metric column into [0, 1]; padded rows stay all-zero."""
    values = ranges.scale_values(window.values)
    values[window.padded] = 0.0
    return KpmWindow(values=values, padded=window.padded.copy())


class XAppClient:
    """SM connector for one xApp instance (single-threaded).

    Inbound indications land in per-(bs, slice) ring buffers holding the
    most recent ``depth`` windows; the data-driven logic reads them via
    :meth:`window`. Controls and xApp-to-xApp messages go out through
    the same transport.
    """

    def __init__(self, xapp_id: str, transport, depth: int = DEFAULT_DEPTH):
        self.xapp_id = xapp_id
        self.transport = transport
        self.depth = depth
        self.registered = False
        self.register_error: str | None = None
        self.subscription_status: dict[str, str] = {}  # bs_id -> ok/err payload
        self.buffers: dict[tuple[str, str], deque] = {}
        self.acks: list[tuple[str, str]] = []  # (bs_id, status)
        self.peer_messages: list[tuple[str, bytes]] = []  # xApp chaining inbox
        self.indications_seen = 0

    # -- outbound ---------------------------------------------------------

    def send_register(self, capabilities: str = "slice-control") -> None:
        self.transport.send(
            E2Frame(
                MessageType.XAppRegister,
                self.xapp_id,
                RIC_ID,
                f"xapp;{capabilities}".encode("utf-8"),
            )
        )

    def subscribe(self, bs_id: str, period_ms: int) -> None:
        self.transport.send(
            E2Frame(
                MessageType.SubscriptionRequest,
                self.xapp_id,
                bs_id,
                f"{bs_id};{period_ms}".encode("utf-8"),
            )
        )

    def send_control(self, directive: ControlDirective) -> None:
        self.transport.send(
            E2Frame(
                MessageType.Control,
                self.xapp_id,
                directive.bs_id,
                serialize_control_payload(directive).encode("utf-8"),
            )
        )

    def send_to_xapp(self, dest_xapp: str, payload: bytes) -> None:
        self.transport.send(
            E2Frame(MessageType.XAppRoute, self.xapp_id, dest_xapp, payload)
        )

    # -- inbound ----------------------------------------------------------

    def process_inbox(self) -> int:
        """Drain the transport; returns the number of frames handled."""
        handled = 0
        for frame in self.transport.poll():
            handled += 1
            if frame.msg_type == MessageType.XAppRegister:
                status = frame.text()
                if status == "ok":
                    self.registered = True
                else:
                    self.register_error = status
            elif frame.msg_type == MessageType.SubscriptionResponse:
                text = frame.text()
                parts = text.split(";")
                if parts[0] == "ok" and len(parts) >= 2:
                    self.subscription_status[parts[1]] = text
                elif parts[0] == "err" and len(parts) >= 3:
                    self.subscription_status[parts[2]] = text
                else:
                    log.warning("unparseable subscription response %r", text)
            elif frame.msg_type == MessageType.Indication:
                for record in parse_kpm_payload(frame.text()):
                    key = (record.bs_id, record.slice_id)
                    if key not in self.buffers:
                        self.buffers[key] = deque(maxlen=self.depth)
                    self.buffers[key].append(record)
                self.indications_seen += 1
            elif frame.msg_type == MessageType.ControlAck:
                self.acks.append((frame.source_id, frame.text()))
            elif frame.msg_type == MessageType.XAppRoute:
                self.peer_messages.append((frame.source_id, frame.payload))
            else:
                log.debug("xapp %s ignoring %s", self.xapp_id, frame.msg_type)
        return handled

    # -- data access -------------------------------------------------------

    def records(self, bs_id: str, slice_id: str) -> list[KpmRecord]:
        return list(self.buffers.get((bs_id, slice_id), ()))

    def latest(self, bs_id: str, slice_id: str) -> KpmRecord | None:
        buf = self.buffers.get((bs_id, slice_id))
        return buf[-1] if buf else None

    def window(self, bs_id: str, slice_id: str, depth: int | None = None) -> KpmWindow:
        return extract_and_reshape(
            self.buffers.get((bs_id, slice_id), ()), depth or self.depth
        )

    def close(self) -> None:
        self.transport.close()
