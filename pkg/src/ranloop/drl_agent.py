"""Per-slice tabular Q-learning over discretized autoencoder latents.

Each xApp instance runs three independent slice agents. An agent's
state is the latent of its slice's scaled KPM window, quantized per
dimension through quantile bin edges fixed at training time. Its
action combines a PRB adjustment in {-2, 0, +2} with one of the three
scheduling policies (9 actions). Slice rewards follow the per-slice
objectives: scaled throughput for eMBB, scaled transmitted packets for
MTC, and one minus scaled buffer occupancy for URLLC.

Because the three agents act independently, their PRB deltas are
reconciled into a feasible directive afterwards: clamp each slice to
at least 2 PRBs, then add/remove 2-PRB units to the slice with the
largest/smallest scaled buffer backlog until the budget is met exactly
(a final 1-PRB step absorbs odd mismatches from arbitrary inputs).

Agents are trained offline by replaying logged transitions from
collection campaigns, then optionally fine-tuned online; a frozen
agent never mutates its table. ``validate_q_machinery`` checks the
update rule against an independent value-iteration oracle on a fixed
5-state MDP and gates bundle export.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .e2_wire import POLICIES, SLICES, ControlDirective, KpmRecord
from .xapp_sdk import ScalingRanges, record_metrics

log = logging.getLogger(__name__)

PRB_DELTA_STEP = 2
# "hold" first: where every action value ties (all-unvisited or washed-out
# table rows), the greedy tie-break (lowest action id) then keeps the
# current allocation instead of churning it
PRB_DELTAS = (0, -PRB_DELTA_STEP, PRB_DELTA_STEP)
N_ACTIONS = len(PRB_DELTAS) * len(POLICIES)  # 9
MIN_SLICE_PRBS = 2

QTABLE_MAGIC = "ranloop-qtable"
QTABLE_VERSION = 1

# metric column indices (see xapp_sdk.METRICS)
_THROUGHPUT, _TX_PACKETS, _BUFFER, _PRB = 0, 1, 2, 3


@dataclass(frozen=True)
class AgentAction:
    prb_delta: int
    policy: str

    def __post_init__(self):
        if self.prb_delta not in PRB_DELTAS:
            raise ValueError(f"prb_delta must be one of {PRB_DELTAS}")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")


def action_id(action: AgentAction) -> int:
    return POLICIES.index(action.policy) * len(PRB_DELTAS) + PRB_DELTAS.index(
        action.prb_delta
    )


def action_from_id(aid: int) -> AgentAction:
    if not 0 <= aid < N_ACTIONS:
        raise ValueError(f"action id {aid} out of range")
    policy_idx, delta_idx = divmod(aid, len(PRB_DELTAS))
    return AgentAction(prb_delta=PRB_DELTAS[delta_idx], policy=POLICIES[policy_idx])


@dataclass
class QHyperparams:
    eta: float = 0.1  # learning rate
    gamma: float = 0.9  # discount
    epsilon_start: float = 0.5  # exploration at the start of training data collection
    epsilon_end: float = 0.05  # residual exploration for online fine-tuning
    bins: int = 4  # quantile bins per latent dimension


@dataclass
class RewardWeights:
    w_embb: float = 1.0
    w_mtc: float = 1.0
    w_urllc: float = 1.0

    def __post_init__(self):
        if min(self.w_embb, self.w_mtc, self.w_urllc) <= 0:
            raise ValueError("reward weights must be positive")

    def for_slice(self, slice_id: str) -> float:
        return {"embb": self.w_embb, "mtc": self.w_mtc, "urllc": self.w_urllc}[slice_id]


class QTable:
    """Dense (states x actions) value table with visit counts."""

    def __init__(
        self,
        slice_id: str,
        bin_edges: np.ndarray,
        hyper: QHyperparams | None = None,
        n_actions: int = N_ACTIONS,
    ):
        if slice_id not in SLICES:
            raise ValueError(f"unknown slice {slice_id!r}")
        self.slice_id = slice_id
        self.hyper = hyper if hyper is not None else QHyperparams()
        self.bin_edges = np.asarray(bin_edges, dtype=np.float64)
        if self.bin_edges.ndim != 2 or self.bin_edges.shape[1] != self.hyper.bins - 1:
            raise ValueError(
                f"bin_edges must be (latent_dim, bins-1), got {self.bin_edges.shape}"
            )
        self.latent_dim = self.bin_edges.shape[0]
        self.n_states = self.hyper.bins**self.latent_dim
        self.n_actions = n_actions
        self.values = np.zeros((self.n_states, n_actions), dtype=np.float64)
        self.visits = np.zeros((self.n_states, n_actions), dtype=np.int64)

    def copy(self) -> "QTable":
        clone = QTable(self.slice_id, self.bin_edges.copy(), self.hyper, self.n_actions)
        clone.values = self.values.copy()
        clone.visits = self.visits.copy()
        return clone

    def save(self, path: str) -> None:
        h = self.hyper
        lines = [
            f"{QTABLE_MAGIC} v{QTABLE_VERSION}",
            f"slice {self.slice_id}",
            f"eta {float(h.eta)!r}",
            f"gamma {float(h.gamma)!r}",
            f"epsilon_start {float(h.epsilon_start)!r}",
            f"epsilon_end {float(h.epsilon_end)!r}",
            f"bins {h.bins}",
            f"latent_dim {self.latent_dim}",
            f"actions {self.n_actions}",
        ]
        for d in range(self.latent_dim):
            edges = " ".join(repr(float(e)) for e in self.bin_edges[d])
            lines.append(f"edges {d} {edges}")
        for s, a in zip(*np.nonzero(self.values)):
            lines.append(f"q {s} {a} {float(self.values[s, a])!r}")
        for s, a in zip(*np.nonzero(self.visits)):
            lines.append(f"visits {s} {a} {int(self.visits[s, a])}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str) -> "QTable":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh if line.strip()]
        if not lines or not lines[0].startswith(QTABLE_MAGIC):
            raise ValueError(f"{path}: not a {QTABLE_MAGIC} file")
        if int(lines[0].split("v")[-1]) != QTABLE_VERSION:
            raise ValueError(f"{path}: unsupported version")
        header: dict[str, str] = {}
        edges: dict[int, np.ndarray] = {}
        q_entries = []
        visit_entries = []
        for line in lines[1:]:
            parts = line.split()
            if parts[0] == "edges":
                edges[int(parts[1])] = np.array(parts[2:], dtype=np.float64)
            elif parts[0] == "q":
                q_entries.append((int(parts[1]), int(parts[2]), float(parts[3])))
            elif parts[0] == "visits":
                visit_entries.append((int(parts[1]), int(parts[2]), int(parts[3])))
            else:
                header[parts[0]] = " ".join(parts[1:])
        hyper = QHyperparams(
            eta=float(header["eta"]),
            gamma=float(header["gamma"]),
            epsilon_start=float(header["epsilon_start"]),
            epsilon_end=float(header["epsilon_end"]),
            bins=int(header["bins"]),
        )
        latent_dim = int(header["latent_dim"])
        bin_edges = np.vstack([edges[d] for d in range(latent_dim)])
        table = cls(header["slice"], bin_edges, hyper, int(header["actions"]))
        for s, a, v in q_entries:
            table.values[s, a] = v
        for s, a, v in visit_entries:
            table.visits[s, a] = v
        return table


# ---------------------------------------------------------------------------
# core operations
# ---------------------------------------------------------------------------


def discretize(latent, bin_edges: np.ndarray) -> int:
    """Quantize a latent vector to a state id.

    Each dimension maps through its fixed edges to a bin in 0..B-1
    (out-of-range values clamp to the edge bins); the state id is the
    mixed-radix index with dimension 0 least significant.
    """
    latent = np.asarray(latent, dtype=np.float64)
    bins = bin_edges.shape[1] + 1
    state = 0
    radix = 1
    for d in range(bin_edges.shape[0]):
        b = int(np.searchsorted(bin_edges[d], latent[d], side="right"))
        state += b * radix
        radix *= bins
    return state


def quantile_bin_edges(latents: np.ndarray, bins: int) -> np.ndarray:
    """Per-dimension interior quantile edges ((dim, bins-1)) from data."""
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if latents.shape[0] == 0:
        raise ValueError("no latents to compute edges from")
    qs = [100.0 * k / bins for k in range(1, bins)]
    if not qs:
        return np.zeros((latents.shape[1], 0))
    return np.percentile(latents, qs, axis=0).T.copy()


def reward(
    slice_id: str,
    record: KpmRecord,
    ranges: ScalingRanges,
    weights: RewardWeights | None = None,
) -> float:
    """Per-slice objective on scaled metrics, in [0, w_slice]."""
    weights = weights if weights is not None else RewardWeights()
    scaled = ranges.scale_values(record_metrics(record))
    w = weights.for_slice(slice_id)
    if slice_id == "embb":
        return w * float(scaled[_THROUGHPUT])
    if slice_id == "mtc":
        return w * float(scaled[_TX_PACKETS])
    return w * (1.0 - float(scaled[_BUFFER]))


def select_action(table: QTable, state: int, epsilon: float, rng) -> int:
    """Epsilon-greedy over the state's action values, ties to lowest id."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(0, table.n_actions))
    return int(np.argmax(table.values[state]))


def q_update(table: QTable, s: int, a: int, r: float, s_next: int) -> float:
    """One tabular Q-learning backup; returns the new Q(s, a)."""
    if not np.isfinite(r):
        raise ValueError("reward must be finite")
    h = table.hyper
    target = r + h.gamma * float(np.max(table.values[s_next]))
    table.values[s, a] += h.eta * (target - table.values[s, a])
    table.visits[s, a] += 1
    return float(table.values[s, a])


def reconcile_prbs(
    deltas,
    quotas,
    total: int,
    scaled_backlogs,
    min_prbs: int = MIN_SLICE_PRBS,
) -> list[int]:
    """Merge per-slice PRB deltas into a feasible allocation.

    Applies the deltas, clamps every slice to >= min_prbs, then repairs
    the budget: remove capacity from the slice with the smallest scaled
    buffer backlog, or add to the one with the largest, in 2-PRB units
    (1-PRB final step when the gap is odd); ties break in slice order.
    """
    n = len(quotas)
    if total < n * min_prbs:
        raise ValueError("total budget below per-slice minimum")
    new = [max(min_prbs, int(q) + int(d)) for q, d in zip(quotas, deltas)]
    backlogs = list(scaled_backlogs)

    while sum(new) > total:
        gap = sum(new) - total
        candidates = [i for i in range(n) if new[i] > min_prbs]
        victim = min(candidates, key=lambda i: (backlogs[i], i))
        step = min(PRB_DELTA_STEP, gap, new[victim] - min_prbs)
        new[victim] -= step
    while sum(new) < total:
        gap = total - sum(new)
        grantee = max(range(n), key=lambda i: (backlogs[i], -i))
        step = min(PRB_DELTA_STEP, gap)
        new[grantee] += step
    return new


# ---------------------------------------------------------------------------
# offline training: replay logged transitions
# ---------------------------------------------------------------------------


@dataclass
class Transition:
    slice_id: str
    state: int
    action: int
    reward: float
    next_state: int


def replay_transitions(
    tables: dict[str, QTable],
    transitions: list[Transition],
    epochs: int,
    seed: int,
) -> None:
    """Shuffled experience replay through q_update, deterministic by seed."""
    rng = np.random.default_rng(seed)
    items = list(transitions)
    for _ in range(epochs):
        order = rng.permutation(len(items))
        for idx in order:
            t = items[idx]
            q_update(tables[t.slice_id], t.state, t.action, t.reward, t.next_state)


def offline_train(
    csv_paths,
    ae_model,
    ranges: dict,
    hyper: QHyperparams | None = None,
    seed: int = 0,
    epochs: int = 10,
    depth: int = 4,
    weights: RewardWeights | None = None,
):
    """Train per-slice Q-tables by replaying collect-campaign logs.

    Builds the scaled rolling window ending at every report (each slice
    scaled by its own ranges), encodes it with the trained autoencoder,
    fixes pooled quantile bin edges, and replays (state, logged action,
    next window's reward, next state) transitions at control-period
    boundaries. Deterministic by seed.

    Returns (tables by slice, bin edges, transition count).
    """
    from .autoencoder import encode_batch
    from .dataset import read_collect_csv, rolling_windows, slice_series

    hyper = hyper if hyper is not None else QHyperparams()
    weights = weights if weights is not None else RewardWeights()

    rows = []
    for path in csv_paths:
        rows.extend(read_collect_csv(path))
    series = slice_series(rows)

    latents_by_key: dict[tuple[str, str], np.ndarray] = {}
    for (bs_id, slice_id), entries in series.items():
        windows = rolling_windows(
            [e.record for e in entries], depth, ranges[slice_id]
        )
        latents_by_key[(bs_id, slice_id)] = encode_batch(ae_model, windows)

    latent_dim = ae_model.latent_dim
    if latents_by_key:
        pooled = np.vstack(list(latents_by_key.values()))
        edges = quantile_bin_edges(pooled, hyper.bins)
    else:
        edges = np.zeros((latent_dim, hyper.bins - 1))

    tables = {s: QTable(s, edges, hyper) for s in SLICES}

    transitions: list[Transition] = []
    for (bs_id, slice_id), entries in series.items():
        latents = latents_by_key[(bs_id, slice_id)]
        # control-period boundaries: the last row of each ctrl_seq run
        boundaries = [
            i
            for i in range(len(entries))
            if i + 1 == len(entries) or entries[i + 1].ctrl_seq != entries[i].ctrl_seq
        ]
        for prev_i, cur_i in zip(boundaries[:-1], boundaries[1:]):
            cur = entries[cur_i]
            if cur.ctrl_seq != entries[prev_i].ctrl_seq + 1:
                continue  # gap in the log; skip the broken transition
            transitions.append(
                Transition(
                    slice_id=slice_id,
                    state=discretize(latents[prev_i], edges),
                    action=action_id(AgentAction(cur.prb_delta, cur.policy)),
                    reward=reward(slice_id, cur.record, ranges[slice_id], weights),
                    next_state=discretize(latents[cur_i], edges),
                )
            )

    replay_transitions(tables, transitions, epochs, seed)
    return tables, edges, len(transitions)


# ---------------------------------------------------------------------------
# online control agent (one per xApp instance / base station)
# ---------------------------------------------------------------------------

MODE_FROZEN = "frozen"
MODE_FINETUNE = "finetune"


@dataclass
class _SliceMemory:
    state: int | None = None
    action: int | None = None


class SliceControlAgent:
    """Trio of per-slice agents emitting joint control directives.

    In ``finetune`` mode every decision also backs up the previous
    (state, action) with the newest window's reward; ``frozen`` mode
    never touches the tables and acts greedily.
    """

    def __init__(
        self,
        bs_id: str,
        ae_model,
        ranges: dict,
        tables: dict[str, QTable],
        total_prbs: int,
        mode: str = MODE_FROZEN,
        seed: int = 0,
        weights: RewardWeights | None = None,
        control_period_reports: int = 4,
        initial_quotas=(36, 6, 8),
        initial_policies=("PF", "PF", "PF"),
        epsilon_online: float | None = None,
        eta_online: float | None = None,
    ):
        if mode not in (MODE_FROZEN, MODE_FINETUNE):
            raise ValueError(f"unknown agent mode {mode!r}")
        self.bs_id = bs_id
        self.ae_model = ae_model
        self.ranges = ranges
        self.tables = tables
        self.total_prbs = total_prbs
        self.mode = mode
        self.weights = weights if weights is not None else RewardWeights()
        self.control_period_reports = control_period_reports
        # fine-tuning keeps exploring at the training schedule's floor
        # unless told otherwise
        if epsilon_online is None:
            epsilon_online = tables[SLICES[0]].hyper.epsilon_end
        self.epsilon_online = epsilon_online
        # fine-tuning nudges a trained table rather than learning from
        # scratch, so it defaults to a fraction of the training rate
        if eta_online is not None and mode == MODE_FINETUNE:
            for table in tables.values():
                table.hyper = QHyperparams(
                    eta=eta_online,
                    gamma=table.hyper.gamma,
                    epsilon_start=table.hyper.epsilon_start,
                    epsilon_end=table.hyper.epsilon_end,
                    bins=table.hyper.bins,
                )
        self.rng = np.random.default_rng(seed)
        self.memory = {s: _SliceMemory() for s in SLICES}
        self.quotas = {s: q for s, q in zip(SLICES, initial_quotas)}
        self.policies = {s: p for s, p in zip(SLICES, initial_policies)}
        self.decisions = 0
        self.reward_trace: list[float] = []

    @property
    def epsilon(self) -> float:
        # the frozen agent is pure greedy; fine-tuning defaults to greedy
        # too (value updates alone steer the policy), with optional
        # residual exploration via epsilon_online
        if self.mode == MODE_FROZEN:
            return 0.0
        return self.epsilon_online

    def slice_state(self, client, slice_id: str) -> int:
        from .autoencoder import ae_forward
        from .xapp_sdk import scale_window

        window = scale_window(
            client.window(self.bs_id, slice_id), self.ranges[slice_id]
        )
        latent, _ = ae_forward(self.ae_model, window.flat())
        return discretize(latent, self.tables[slice_id].bin_edges)

    def decide(self, window_index: int, client) -> ControlDirective | None:
        """Run the pipeline at control-period boundaries; emit a directive."""
        if (window_index + 1) % self.control_period_reports != 0:
            return None
        deltas = {}
        backlogs = {}
        window_reward = 0.0
        for slice_id in SLICES:
            table = self.tables[slice_id]
            state = self.slice_state(client, slice_id)
            latest = client.latest(self.bs_id, slice_id)
            if latest is not None:
                slice_ranges = self.ranges[slice_id]
                r = reward(slice_id, latest, slice_ranges, self.weights)
                scaled = slice_ranges.scale_values(record_metrics(latest))
                backlogs[slice_id] = float(scaled[_BUFFER])
                # trust the RAN's reported allocation over our own bookkeeping
                self.quotas[slice_id] = latest.prb_alloc
            else:
                r = 0.0
                backlogs[slice_id] = 0.0
            window_reward += r

            memory = self.memory[slice_id]
            if (
                self.mode == MODE_FINETUNE
                and memory.state is not None
                and memory.action is not None
            ):
                q_update(table, memory.state, memory.action, r, state)

            aid = select_action(table, state, self.epsilon, self.rng)
            action = action_from_id(aid)
            memory.state = state
            memory.action = aid
            deltas[slice_id] = action.prb_delta
            self.policies[slice_id] = action.policy

        self.reward_trace.append(window_reward)
        quotas = reconcile_prbs(
            [deltas[s] for s in SLICES],
            [self.quotas[s] for s in SLICES],
            self.total_prbs,
            [backlogs[s] for s in SLICES],
        )
        for slice_id, q in zip(SLICES, quotas):
            self.quotas[slice_id] = q
        self.decisions += 1
        return ControlDirective(
            bs_id=self.bs_id,
            slices=tuple(
                (s, self.quotas[s], self.policies[s]) for s in SLICES
            ),
        )


class RandomSweepAgent:
    """Collection-campaign behavior: uniformly random actions per slice,
    pushed through the same reconciliation as the learning agent."""

    def __init__(
        self,
        bs_id: str,
        total_prbs: int,
        seed: int = 0,
        control_period_reports: int = 4,
        initial_quotas=(36, 6, 8),
        initial_policies=("PF", "PF", "PF"),
    ):
        self.bs_id = bs_id
        self.total_prbs = total_prbs
        self.control_period_reports = control_period_reports
        self.rng = np.random.default_rng(seed)
        self.quotas = {s: q for s, q in zip(SLICES, initial_quotas)}
        self.policies = {s: p for s, p in zip(SLICES, initial_policies)}
        # action log for the collect dataset: slice -> (delta, policy)
        self.current_action = {s: (0, p) for s, p in self.policies.items()}
        self.ctrl_seq = 0
        self.decisions = 0

    def decide(self, window_index: int, client) -> ControlDirective | None:
        if (window_index + 1) % self.control_period_reports != 0:
            return None
        deltas = {}
        backlogs = {}
        for slice_id in SLICES:
            aid = int(self.rng.integers(0, N_ACTIONS))
            action = action_from_id(aid)
            deltas[slice_id] = action.prb_delta
            self.policies[slice_id] = action.policy
            latest = client.latest(self.bs_id, slice_id)
            backlogs[slice_id] = float(latest.buffer_bytes) if latest else 0.0
            if latest is not None:
                self.quotas[slice_id] = latest.prb_alloc
        quotas = reconcile_prbs(
            [deltas[s] for s in SLICES],
            [self.quotas[s] for s in SLICES],
            self.total_prbs,
            [backlogs[s] for s in SLICES],
        )
        for slice_id, q in zip(SLICES, quotas):
            self.quotas[slice_id] = q
        self.current_action = {
            s: (deltas[s], self.policies[s]) for s in SLICES
        }
        self.ctrl_seq += 1
        self.decisions += 1
        return ControlDirective(
            bs_id=self.bs_id,
            slices=tuple((s, self.quotas[s], self.policies[s]) for s in SLICES),
        )


# ---------------------------------------------------------------------------
# validation oracle: fixed 5-state MDP, value iteration vs q_update
# ---------------------------------------------------------------------------


def toy_mdp() -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 5-state, 2-action chain whose optimal policy mixes
    both actions: action 0 steps left (reward 0.35 when entering/holding
    state 0), action 1 steps right (reward 1.0 on the 4 -> 0 wraparound).

    Returns (next_state[s, a], reward[s, a]).
    """
    n = 5
    nxt = np.zeros((n, 2), dtype=np.int64)
    rew = np.zeros((n, 2), dtype=np.float64)
    for s in range(n):
        nxt[s, 0] = max(s - 1, 0)
        rew[s, 0] = 0.35 if nxt[s, 0] == 0 else 0.0
        nxt[s, 1] = (s + 1) % n
        rew[s, 1] = 1.0 if s == n - 1 else 0.0
    return nxt, rew


def value_iteration(
    nxt: np.ndarray, rew: np.ndarray, gamma: float, sweeps: int = 10_000, tol: float = 1e-12
) -> tuple[np.ndarray, np.ndarray]:
    """Independent dynamic-programming oracle; returns (V, greedy policy)."""
    n_states, n_actions = nxt.shape
    values = np.zeros(n_states)
    for _ in range(sweeps):
        q = rew + gamma * values[nxt]
        new_values = q.max(axis=1)
        if np.max(np.abs(new_values - values)) < tol:
            values = new_values
            break
        values = new_values
    q = rew + gamma * values[nxt]
    return values, q.argmax(axis=1)


def q_learning_policy_on_toy_mdp(
    hyper: QHyperparams | None = None, steps: int = 100_000, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Run the package's q_update on the toy MDP with uniform exploration;
    returns (greedy policy, oracle policy)."""
    hyper = hyper if hyper is not None else QHyperparams()
    nxt, rew = toy_mdp()
    _, oracle_policy = value_iteration(nxt, rew, hyper.gamma)

    # 5 states fit a 1-dim latent with 5 bins
    edges = np.arange(1, 5, dtype=np.float64)[None, :] - 0.5
    table = QTable(
        "embb",
        edges,
        QHyperparams(
            eta=hyper.eta,
            gamma=hyper.gamma,
            epsilon_start=1.0,
            epsilon_end=1.0,
            bins=5,
        ),
        n_actions=2,
    )
    rng = np.random.default_rng(seed)
    s = 0
    for _ in range(steps):
        a = int(rng.integers(0, 2))
        s_next = int(nxt[s, a])
        q_update(table, s, a, float(rew[s, a]), s_next)
        s = s_next
    greedy = table.values[:5].argmax(axis=1)
    return greedy, oracle_policy


def validate_q_machinery(steps: int = 100_000, seed: int = 0) -> dict:
    greedy, oracle = q_learning_policy_on_toy_mdp(steps=steps, seed=seed)
    return {
        "greedy_policy": greedy.tolist(),
        "oracle_policy": oracle.tolist(),
        "match": bool(np.array_equal(greedy, oracle)),
    }
