"""Deterministic discrete-time simulator of slice-aware base stations.

Each base station runs three network slices (eMBB, MTC, URLLC) over a
fixed PRB budget. Per 1 ms TTI: Poisson packet arrivals fill per-UE
queues, a bounded lazy random walk moves each UE's CQI, the slice's
scheduler maps its PRB quota onto backlogged UEs, and served bytes
drain the queues. KPM records are produced per report window; control
directives swap quotas/policies atomically between TTIs.

All randomness comes from a splitmix64 generator implemented with
wrapping uint64 arithmetic, so runs are bit-identical for a given
(seed, bs_index) whether the kernels are numba-compiled or run on the
pure-numpy fallback path (see accel).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .accel import jit_kernel
from .e2_wire import (
    SLICES,
    ControlDirective,
    E2Frame,
    KpmRecord,
    MessageType,
    parse_control_payload,
    serialize_kpm_payload,
)
from .linkmodel import BITS_PER_PRB, capacity_bytes
from .schedulers import (
    PF_ALPHA,
    POLICY_CODES,
    POLICY_NAMES,
    _pf_kernel,
    _rr_kernel,
    _wf_kernel,
    pf_ewma,
)

log = logging.getLogger(__name__)

PACKET_BYTES = {"embb": 1500, "mtc": 125, "urllc": 125}

RIC_ID = "ric"

# ---------------------------------------------------------------------------
# splitmix64: tiny seeded generator usable inside the jitted kernels
# ---------------------------------------------------------------------------

_U64 = np.uint64
_SM_GAMMA = _U64(0x9E3779B97F4A7C15)
_SM_M1 = _U64(0xBF58476D1CE4E5B9)
_SM_M2 = _U64(0x94D049BB133111EB)
_S30 = _U64(30)
_S27 = _U64(27)
_S31 = _U64(31)
_S11 = _U64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@jit_kernel
def rng_next(state):
    state[0] += _SM_GAMMA
    z = state[0]
    z = (z ^ (z >> _S30)) * _SM_M1
    z = (z ^ (z >> _S27)) * _SM_M2
    return z ^ (z >> _S31)


@jit_kernel
def rng_uniform(state):
    return np.float64(rng_next(state) >> _S11) * _INV53


@jit_kernel
def _poisson(state, neg_exp_lam):
    # Knuth multiplication method; neg_exp_lam = exp(-lambda)
    k = 0
    p = rng_uniform(state)
    while p > neg_exp_lam:
        k += 1
        p *= rng_uniform(state)
    return k


def make_rng_state(seed: int, stream: int = 0) -> np.ndarray:
    """Derive an independent generator state from (seed, stream index)."""
    state = np.zeros(1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state[0] = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        out = np.uint64(0)
        for _ in range(stream + 1):
            out = rng_next(state)
        state[0] = out
    return state


# ---------------------------------------------------------------------------
# per-window stepping kernel
# ---------------------------------------------------------------------------


@jit_kernel
def _step_window_kernel(
    n_ttis,
    ues_per_slice,
    queue,
    cqi,
    pf_avg,
    neg_exp_lam,
    pkt_size,
    quota,
    policy,
    rr_cursor,
    bits_table,
    w_arrived,
    w_served,
    w_dropped,
    cum_served,
    rng_state,
    queue_cap,
    walk_prob,
    pf_alpha,
):
    n_ue = queue.shape[0]
    n_slices = quota.shape[0]
    grants = np.zeros(ues_per_slice, dtype=np.int64)
    demand = np.zeros(ues_per_slice, dtype=np.int64)
    bits = np.zeros(ues_per_slice, dtype=np.int64)
    cap1 = np.zeros(ues_per_slice, dtype=np.int64)
    half_walk = walk_prob * 0.5

    for _ in range(n_ttis):
        # 1. traffic arrivals: whole packets, tail drop at the queue cap
        for u in range(n_ue):
            if neg_exp_lam[u] < 1.0:
                k = _poisson(rng_state, neg_exp_lam[u])
                if k > 0:
                    b = k * pkt_size[u]
                    w_arrived[u] += b
                    room = queue_cap - queue[u]
                    if b <= room:
                        queue[u] += b
                    else:
                        fit = (room // pkt_size[u]) * pkt_size[u]
                        queue[u] += fit
                        w_dropped[u] += b - fit

        # 2. channel: bounded lazy +-1 CQI random walk
        if walk_prob > 0.0:
            for u in range(n_ue):
                r = rng_uniform(rng_state)
                if r < half_walk:
                    if cqi[u] > 1:
                        cqi[u] -= 1
                elif r < walk_prob:
                    if cqi[u] < 15:
                        cqi[u] += 1

        # 3. per-slice scheduling, 4. service
        for s in range(n_slices):
            lo = s * ues_per_slice
            hi = lo + ues_per_slice
            q_slice = queue[lo:hi]
            for j in range(ues_per_slice):
                bb = bits_table[cqi[lo + j]]
                bits[j] = bb
                cap1[j] = bb // 8
            pol = policy[s]
            if pol == 0:
                rr_cursor[s] = _rr_kernel(
                    q_slice, cap1, quota[s], rr_cursor[s], grants, demand
                )
            elif pol == 1:
                _wf_kernel(q_slice, bits, cap1, quota[s], grants, demand)
            else:
                _pf_kernel(q_slice, cap1, pf_avg[lo:hi], quota[s], grants, demand)
            for j in range(ues_per_slice):
                u = lo + j
                served = (grants[j] * bits[j]) // 8
                if served > queue[u]:
                    served = queue[u]
                queue[u] -= served
                w_served[u] += served
                cum_served[u] += served
                pf_avg[u] = pf_ewma(pf_avg[u], served * 0.008, pf_alpha)
    return 0


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class TrafficProfile:
    kind: str = "slice_based"  # "slice_based" or "uniform"
    embb_mbps: float = 4.0
    mtc_kbps: float = 44.6
    urllc_kbps: float = 89.3
    uniform_mbps: float = 1.5

    def rate_bytes_per_ms(self, slice_id: str) -> float:
        """Offered load per UE of the given slice, in bytes per millisecond."""
        if self.kind == "uniform":
            return self.uniform_mbps * 1e6 / 8.0 / 1000.0
        if self.kind != "slice_based":
            raise ValueError(f"unknown traffic profile {self.kind!r}")
        if slice_id == "embb":
            return self.embb_mbps * 1e6 / 8.0 / 1000.0
        if slice_id == "mtc":
            return self.mtc_kbps * 1e3 / 8.0 / 1000.0
        if slice_id == "urllc":
            return self.urllc_kbps * 1e3 / 8.0 / 1000.0
        raise ValueError(f"unknown slice {slice_id!r}")


@dataclass
class SimConfig:
    n_bs: int = 7
    ues_per_bs: int = 6
    total_prbs: int = 50
    tti_ms: int = 1
    report_period_ms: int = 250
    control_period_reports: int = 4
    traffic: TrafficProfile = field(default_factory=TrafficProfile)
    rng_seed: int = 1
    queue_cap_bytes: int = 10_000_000
    cqi_walk_prob: float = 0.2
    cqi_init_min: int = 7
    cqi_init_max: int = 14
    init_quotas: tuple = (36, 6, 8)
    init_policies: tuple = ("PF", "PF", "PF")
    ric_host: str = "127.0.0.1"
    ric_port: int = 36422

    def __post_init__(self):
        if self.ues_per_bs % len(SLICES) != 0:
            raise ValueError("ues_per_bs must be divisible by the slice count")
        if sum(self.init_quotas) != self.total_prbs:
            raise ValueError("init_quotas must sum to total_prbs")
        if self.report_period_ms % self.tti_ms != 0:
            raise ValueError("report period must be a whole number of TTIs")

    @property
    def ues_per_slice(self) -> int:
        return self.ues_per_bs // len(SLICES)

    @property
    def report_ttis(self) -> int:
        return self.report_period_ms // self.tti_ms

    def with_traffic(self, kind: str) -> "SimConfig":
        return replace(self, traffic=replace(self.traffic, kind=kind))


_SCENARIO_KEYS = {
    "n_bs": int,
    "ues_per_bs": int,
    "total_prbs": int,
    "tti_ms": int,
    "report_period_ms": int,
    "control_period_reports": int,
    "rng_seed": int,
    "queue_cap_bytes": int,
    "cqi_walk_prob": float,
    "cqi_init_min": int,
    "cqi_init_max": int,
    "ric_host": str,
    "ric_port": int,
}

_TRAFFIC_KEYS = {
    "embb_mbps": float,
    "mtc_kbps": float,
    "urllc_kbps": float,
    "uniform_mbps": float,
}


def parse_scenario_config(path: str) -> SimConfig:
    """Read a key = value scenario file ('#' starts a comment)."""
    values: dict = {}
    traffic: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key = value")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key in _SCENARIO_KEYS:
                values[key] = _SCENARIO_KEYS[key](val)
            elif key in _TRAFFIC_KEYS:
                traffic[key] = _TRAFFIC_KEYS[key](val)
            elif key == "traffic_profile":
                traffic["kind"] = val
            elif key == "init_quotas":
                values["init_quotas"] = tuple(int(x) for x in val.split())
            elif key == "init_policies":
                values["init_policies"] = tuple(val.split())
            else:
                raise ValueError(f"{path}:{line_no}: unknown key {key!r}")
    return SimConfig(traffic=TrafficProfile(**traffic), **values)


def write_scenario_config(path: str, config: SimConfig) -> None:
    lines = []
    for key in _SCENARIO_KEYS:
        lines.append(f"{key} = {getattr(config, key)}")
    lines.append(f"traffic_profile = {config.traffic.kind}")
    for key in _TRAFFIC_KEYS:
        lines.append(f"{key} = {getattr(config.traffic, key)}")
    lines.append("init_quotas = " + " ".join(str(q) for q in config.init_quotas))
    lines.append("init_policies = " + " ".join(config.init_policies))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# base station
# ---------------------------------------------------------------------------


class BaseStation:
    """Single-owner state machine for one simulated cell.

    UEs are laid out slice-contiguously: slice s owns ue indices
    [s*k, (s+1)*k) with k UEs per slice, and ue ordering within a slice
    is the schedulers' ue_id ordering.
    """

    def __init__(self, config: SimConfig, bs_id: str = "bs1", bs_index: int = 0):
        self.config = config
        self.bs_id = bs_id
        self.bs_index = bs_index
        k = config.ues_per_slice
        n_ue = config.ues_per_bs

        self.rng_state = make_rng_state(config.rng_seed, stream=bs_index)

        self.queue = np.zeros(n_ue, dtype=np.int64)
        self.cqi = np.zeros(n_ue, dtype=np.int64)
        self.pf_avg = np.zeros(n_ue, dtype=np.float64)
        self.slice_of_ue = np.repeat(np.arange(len(SLICES), dtype=np.int64), k)

        span = config.cqi_init_max - config.cqi_init_min + 1
        with np.errstate(over="ignore"):
            for u in range(n_ue):
                self.cqi[u] = config.cqi_init_min + int(
                    rng_uniform(self.rng_state) * span
                )

        self.pkt_size = np.zeros(n_ue, dtype=np.int64)
        self.neg_exp_lam = np.ones(n_ue, dtype=np.float64)
        for u in range(n_ue):
            slice_id = SLICES[u // k]
            self.pkt_size[u] = PACKET_BYTES[slice_id]
            lam = (
                config.traffic.rate_bytes_per_ms(slice_id)
                * config.tti_ms
                / self.pkt_size[u]
            )
            self.neg_exp_lam[u] = float(np.exp(-lam))

        self.quota = np.array(config.init_quotas, dtype=np.int64)
        self.policy = np.array(
            [POLICY_CODES[p] for p in config.init_policies], dtype=np.int64
        )
        self.rr_cursor = np.zeros(len(SLICES), dtype=np.int64)

        self.w_arrived = np.zeros(n_ue, dtype=np.int64)
        self.w_served = np.zeros(n_ue, dtype=np.int64)
        self.w_dropped = np.zeros(n_ue, dtype=np.int64)
        self.cum_served = np.zeros(n_ue, dtype=np.int64)
        self._pkt_mark = np.zeros(n_ue, dtype=np.int64)
        self._queue_at_window_start = np.zeros(n_ue, dtype=np.int64)

        self.sim_time_ms = 0
        self._window_ttis = 0
        self.audit_failures = 0
        self.rejected_controls = 0

    # -- stepping ----------------------------------------------------------

    def step_window(self, n_ttis: int | None = None) -> None:
        """Advance the cell by n_ttis (default: one report window)."""
        if n_ttis is None:
            n_ttis = self.config.report_ttis
        if n_ttis <= 0:
            return
        with np.errstate(over="ignore"):
            _step_window_kernel(
                np.int64(n_ttis),
                np.int64(self.config.ues_per_slice),
                self.queue,
                self.cqi,
                self.pf_avg,
                self.neg_exp_lam,
                self.pkt_size,
                self.quota,
                self.policy,
                self.rr_cursor,
                BITS_PER_PRB,
                self.w_arrived,
                self.w_served,
                self.w_dropped,
                self.cum_served,
                self.rng_state,
                np.int64(self.config.queue_cap_bytes),
                np.float64(self.config.cqi_walk_prob),
                np.float64(PF_ALPHA),
            )
        self.sim_time_ms += n_ttis * self.config.tti_ms
        self._window_ttis += n_ttis

    def step_tti(self) -> None:
        self.step_window(1)

    # -- KPM collection ----------------------------------------------------

    def collect_kpms(self) -> list[KpmRecord]:
        """One record per slice for the elapsed window; resets accumulators."""
        window_ms = self._window_ttis * self.config.tti_ms
        if window_ms <= 0:
            raise RuntimeError("collect_kpms called before any TTI elapsed")
        k = self.config.ues_per_slice

        # byte conservation audit: accepted arrivals - served == queue delta
        delta = self.queue - self._queue_at_window_start
        if not np.array_equal(self.w_arrived - self.w_dropped - self.w_served, delta):
            self.audit_failures += 1
        if int(self.quota.sum()) != self.config.total_prbs:
            self.audit_failures += 1

        records = []
        for s, slice_id in enumerate(SLICES):
            lo, hi = s * k, (s + 1) * k
            served = int(self.w_served[lo:hi].sum())
            arrived = int(self.w_arrived[lo:hi].sum())
            packets = 0
            for u in range(lo, hi):
                total_pkts = self.cum_served[u] // self.pkt_size[u]
                packets += int(total_pkts - self._pkt_mark[u])
                self._pkt_mark[u] = total_pkts
            records.append(
                KpmRecord(
                    timestamp_ms=self.sim_time_ms,
                    bs_id=self.bs_id,
                    slice_id=slice_id,
                    dl_throughput_mbps=round(served * 8.0 / (window_ms * 1000.0), 3),
                    tx_packets=packets,
                    buffer_bytes=int(self.queue[lo:hi].sum()),
                    prb_alloc=int(self.quota[s]),
                    offered_load_mbps=round(arrived * 8.0 / (window_ms * 1000.0), 3),
                )
            )

        self.w_arrived[:] = 0
        self.w_served[:] = 0
        self.w_dropped[:] = 0
        self._queue_at_window_start[:] = self.queue
        self._window_ttis = 0
        return records

    # -- control -----------------------------------------------------------

    def apply_control(self, directive: ControlDirective) -> tuple[bool, str]:
        """Swap quotas/policies between TTIs; queued data is preserved."""
        if directive.bs_id != self.bs_id:
            self.rejected_controls += 1
            return False, f"err;wrong-bs;{directive.bs_id}"
        if directive.prb_sum() != self.config.total_prbs:
            self.rejected_controls += 1
            return False, f"err;prb-sum;{directive.prb_sum()}"
        by_slice = directive.as_dict()
        for s, slice_id in enumerate(SLICES):
            prb, policy = by_slice[slice_id]
            self.quota[s] = prb
            self.policy[s] = POLICY_CODES[policy]
        return True, "ok"

    def current_directive(self) -> ControlDirective:
        return ControlDirective(
            bs_id=self.bs_id,
            slices=tuple(
                (slice_id, int(self.quota[s]), POLICY_NAMES[int(self.policy[s])])
                for s, slice_id in enumerate(SLICES)
            ),
        )


# ---------------------------------------------------------------------------
# RAN-side E2 termination
# ---------------------------------------------------------------------------


class E2Agent:
    """Connects one base station to the RIC: registration, periodic KPM
    indications to subscribers, and control-directive application."""

    def __init__(self, bs: BaseStation, transport, kpm_log=None, control_log=None):
        self.bs = bs
        self.transport = transport
        self.subscribers: dict[str, int] = {}  # xapp_id -> period_ms
        self.registered = False
        self.register_error: str | None = None
        self.windows_stepped = 0
        self.kpm_log = kpm_log  # callable(list[KpmRecord]) or None
        self.control_log = control_log  # callable(time_ms, directive_str, status)

    def send_register(self) -> None:
        self.transport.send(
            E2Frame(
                MessageType.XAppRegister,
                self.bs.bs_id,
                RIC_ID,
                b"e2_node;sim-bs",
            )
        )

    def process_inbox(self) -> None:
        for frame in self.transport.poll():
            if frame.msg_type == MessageType.XAppRegister:
                status = frame.text()
                if status == "ok":
                    self.registered = True
                else:
                    self.register_error = status
            elif frame.msg_type == MessageType.SubscriptionRequest:
                xapp_id, _, period_s = frame.text().partition(";")
                try:
                    period = int(period_s)
                except ValueError:
                    continue
                self.subscribers[xapp_id] = period
            elif frame.msg_type == MessageType.Control:
                try:
                    directive = parse_control_payload(frame.text())
                except Exception as exc:
                    self.bs.rejected_controls += 1
                    ok, status = False, f"err;malformed;{exc}"
                else:
                    ok, status = self.bs.apply_control(directive)
                if self.control_log is not None:
                    self.control_log(self.bs.sim_time_ms, frame.text(), status)
                self.transport.send(
                    E2Frame(
                        MessageType.ControlAck,
                        self.bs.bs_id,
                        frame.source_id,
                        status.encode("utf-8"),
                    )
                )

    def advance_window(self) -> list[KpmRecord]:
        """Step one report window, log KPMs, and emit indications."""
        self.bs.step_window()
        self.windows_stepped += 1
        records = self.bs.collect_kpms()
        if self.kpm_log is not None:
            self.kpm_log(records)
        if self.subscribers:
            payload = serialize_kpm_payload(records).encode("utf-8")
            for xapp_id in self.subscribers:
                self.transport.send(
                    E2Frame(MessageType.Indication, self.bs.bs_id, xapp_id, payload)
                )
        return records

    def run(self, duration_s: float, realtime_factor: float = 0.0) -> None:
        """Free-running loop (socket mode): step simulated windows as fast
        as allowed, surviving transport failures by continuing to step."""
        import time

        n_windows = int(duration_s * 1000) // self.bs.config.report_period_ms
        period_s = self.bs.config.report_period_ms / 1000.0
        for _ in range(n_windows):
            try:
                self.process_inbox()
            except OSError:
                self._try_reconnect()
            try:
                # stepping happens before any send, so the simulator keeps
                # advancing with its last configuration on connection loss
                self.advance_window()
            except OSError:
                self._try_reconnect()
            if realtime_factor > 0:
                time.sleep(period_s * realtime_factor)

    def _try_reconnect(self) -> None:
        reconnect = getattr(self.transport, "reconnect", None)
        if reconnect is None:
            return
        # losing the connection cost us our NIB entry, so registration
        # is void whether or not the reconnect below succeeds
        self.registered = False
        try:
            reconnect()
            self.send_register()
        except OSError:
            pass
