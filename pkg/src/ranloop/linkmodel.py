"""CQI-indexed link rate table.

One PRB carries ``BITS_PER_PRB[cqi]`` bits per 1 ms TTI. The table is
monotone in CQI and calibrated so a 50-PRB cell delivers 75 Mbps at
CQI 15 and 18 Mbps at CQI 7.
"""

import numpy as np

CQI_MIN = 1
CQI_MAX = 15

# index 0 unused so the table can be indexed by CQI directly
BITS_PER_PRB = np.array(
    [0, 40, 64, 100, 160, 232, 296, 360, 500, 640, 740, 900, 1060, 1220, 1370, 1500],
    dtype=np.int64,
)


def capacity_bytes(cqi: int, n_prbs: int) -> int:
    """Bytes deliverable to one UE in one TTI over ``n_prbs`` PRBs."""
    if not CQI_MIN <= cqi <= CQI_MAX:
        raise ValueError(f"cqi {cqi} out of range {CQI_MIN}..{CQI_MAX}")
    if n_prbs < 0:
        raise ValueError("n_prbs must be nonnegative")
    return int(n_prbs * BITS_PER_PRB[cqi]) // 8


def rate_mbps(cqi: int, n_prbs: int) -> float:
    """Sustained rate if ``capacity_bytes`` were served every TTI."""
    return capacity_bytes(cqi, n_prbs) * 8_000 / 1e6
