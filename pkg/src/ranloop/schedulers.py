"""Per-slice downlink schedulers: round-robin, waterfilling, proportional fair.

Each scheduler maps a slice's PRB quota onto its member UEs for one TTI.
Common conventions:

* UEs are ordered by ue_id; all tie-breaks favor the lowest index.
* A UE's PRB demand is ceil(queue_bytes / capacity_bytes(cqi, 1)) and
  no scheduler grants past it; grants to empty queues are always 0.
* ``cap1`` below is capacity_bytes(cqi, 1) per UE, ``bits`` is the raw
  per-PRB bit rate (serving g PRBs moves floor(g * bits / 8) bytes).

Policy semantics:

* RR cycles one PRB at a time over backlogged UEs, resuming after the
  last UE served in the previous TTI (persistent cursor).
* WF levels bytes served within the TTI: each PRB goes to the eligible
  UE with the least bytes served so far, which compensates weak channels.
* PF grants each PRB to the eligible UE maximizing instantaneous rate
  divided by its EWMA served rate; among metric ties the UE with the
  fewest PRBs granted this TTI wins, so exact ties cycle like RR.

The inner loops are numba kernels (see accel) shared with the simulator.
"""

from __future__ import annotations

import numpy as np

from .accel import jit_kernel
from .linkmodel import BITS_PER_PRB

POLICY_RR = 0
POLICY_WF = 1
POLICY_PF = 2

POLICY_CODES = {"RR": POLICY_RR, "WF": POLICY_WF, "PF": POLICY_PF}
POLICY_NAMES = {v: k for k, v in POLICY_CODES.items()}

PF_MIN_AVG_MBPS = 1e-6
PF_ALPHA = 0.05

# bytes/TTI -> Mbps (x * 8 bits * 1000 TTI/s / 1e6)
_BYTES_TTI_TO_MBPS = 0.008


@jit_kernel
def _demands(queue, cap1, out):
    total = 0
    for i in range(queue.shape[0]):
        if queue[i] > 0:
            d = (queue[i] + cap1[i] - 1) // cap1[i]
        else:
            d = 0
        out[i] = d
        total += d
    return total


@jit_kernel
def _rr_kernel(queue, cap1, quota, cursor, grants, demand):
    n = queue.shape[0]
    for i in range(n):
        grants[i] = 0
    if n == 0 or quota <= 0:
        return cursor
    remaining = _demands(queue, cap1, demand)
    if remaining == 0:
        return cursor
    left = quota
    idx = cursor % n
    last = -1
    while left > 0 and remaining > 0:
        if demand[idx] > 0:
            grants[idx] += 1
            demand[idx] -= 1
            remaining -= 1
            left -= 1
            last = idx
        idx = (idx + 1) % n
    if last >= 0:
        cursor = (last + 1) % n
    return cursor


@jit_kernel
def _wf_kernel(queue, bits, cap1, quota, grants, demand):
    n = queue.shape[0]
    for i in range(n):
        grants[i] = 0
    if n == 0 or quota <= 0:
        return
    _demands(queue, cap1, demand)
    left = quota
    while left > 0:
        best = -1
        best_served = np.int64(0)
        for i in range(n):
            if grants[i] < demand[i]:
                served = (grants[i] * bits[i]) // 8
                if served > queue[i]:
                    served = queue[i]
                if best < 0 or served < best_served:
                    best = i
                    best_served = served
        if best < 0:
            break
        grants[best] += 1
        left -= 1


@jit_kernel
def _pf_kernel(queue, cap1, pf_avg, quota, grants, demand):
    n = queue.shape[0]
    for i in range(n):
        grants[i] = 0
    if n == 0 or quota <= 0:
        return
    _demands(queue, cap1, demand)
    left = quota
    while left > 0:
        best = -1
        best_metric = -1.0
        best_granted = np.int64(0)
        for i in range(n):
            if grants[i] < demand[i]:
                avg = pf_avg[i]
                if avg < PF_MIN_AVG_MBPS:
                    avg = PF_MIN_AVG_MBPS
                metric = (cap1[i] * _BYTES_TTI_TO_MBPS) / avg
                if best < 0 or metric > best_metric or (
                    metric == best_metric and grants[i] < best_granted
                ):
                    best = i
                    best_metric = metric
                    best_granted = grants[i]
        if best < 0:
            break
        grants[best] += 1
        left -= 1


@jit_kernel
def pf_ewma(avg_mbps, served_mbps, alpha):
    """One EWMA step of the PF served-rate average, floored at the PF epsilon."""
    new = (1.0 - alpha) * avg_mbps + alpha * served_mbps
    if new < PF_MIN_AVG_MBPS:
        new = PF_MIN_AVG_MBPS
    return new


def _cap_arrays(cqi):
    cqi = np.asarray(cqi, dtype=np.int64)
    bits = BITS_PER_PRB[cqi]
    return bits, bits // 8


def schedule_rr(queue_bytes, cqi, quota: int, cursor: int = 0):
    """Round-robin grants; returns (grants array, next cursor)."""
    queue = np.asarray(queue_bytes, dtype=np.int64)
    _, cap1 = _cap_arrays(cqi)
    grants = np.zeros(queue.shape[0], dtype=np.int64)
    demand = np.zeros(queue.shape[0], dtype=np.int64)
    new_cursor = _rr_kernel(queue, cap1, np.int64(quota), np.int64(cursor), grants, demand)
    return grants, int(new_cursor)


def schedule_wf(queue_bytes, cqi, quota: int):
    """Waterfilling grants (in-TTI served-bytes leveling)."""
    queue = np.asarray(queue_bytes, dtype=np.int64)
    bits, cap1 = _cap_arrays(cqi)
    grants = np.zeros(queue.shape[0], dtype=np.int64)
    demand = np.zeros(queue.shape[0], dtype=np.int64)
    _wf_kernel(queue, bits, cap1, np.int64(quota), grants, demand)
    return grants


def schedule_pf(queue_bytes, cqi, pf_avg_mbps, quota: int):
    """Proportional-fair grants using the rate/average metric."""
    queue = np.asarray(queue_bytes, dtype=np.int64)
    _, cap1 = _cap_arrays(cqi)
    pf_avg = np.asarray(pf_avg_mbps, dtype=np.float64)
    grants = np.zeros(queue.shape[0], dtype=np.int64)
    demand = np.zeros(queue.shape[0], dtype=np.int64)
    _pf_kernel(queue, cap1, pf_avg, np.int64(quota), grants, demand)
    return grants


def update_pf_average(pf_avg_mbps: float, served_mbps: float, alpha: float = PF_ALPHA) -> float:
    """EWMA update applied to every slice member each TTI (served or not)."""
    return float(pf_ewma(float(pf_avg_mbps), float(served_mbps), float(alpha)))
