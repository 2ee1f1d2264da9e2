"""ranloop: a desk-scale Open RAN closed-loop control stack.

Components: an E2-like wire protocol, a near-real-time RIC with node
registry and message routing, a deterministic slice-aware base-station
simulator, and an xApp SDK hosting a data-driven (autoencoder +
tabular Q-learning) agent that jointly controls per-slice scheduling
policy and PRB allocation.
"""

__version__ = "0.1.0"
