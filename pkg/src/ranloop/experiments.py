"""Experiment workflow: collect campaigns, offline training, the 2x2
evaluation matrix, and report generation.

The evaluation matrix crosses agent mode {frozen, finetune} with
traffic class {slice_based, uniform} over a seed list, all in lockstep
mode. Every artifact (dataset, model bundle, summary) is a pure
function of (config, seeds, code), so reruns are byte-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .autoencoder import ae_train, load_autoencoder, save_autoencoder
from .dataset import read_collect_csv, read_kpm_csv, rolling_windows, slice_series
from .drl_agent import (
    MODE_FINETUNE,
    MODE_FROZEN,
    QHyperparams,
    QTable,
    RandomSweepAgent,
    RewardWeights,
    SliceControlAgent,
    offline_train,
    reward,
    validate_q_machinery,
)
from .e2_wire import SLICES
from .orchestrator import run_lockstep
from .ran_sim import SimConfig

log = logging.getLogger(__name__)

MODES = (MODE_FROZEN, MODE_FINETUNE)
TRAFFIC_KEYS = {"slice": "slice_based", "uniform": "uniform"}

DEFAULT_AE_SIZES = (16, 8, 3, 8, 16)
DEFAULT_DEPTH = 4
DEFAULT_AE_EPOCHS = 300
DEFAULT_AE_LR = 0.1
DEFAULT_Q_EPOCHS = 20


class BundleValidationError(RuntimeError):
    """The trained bundle failed validation and was not exported."""


@dataclass
class ExperimentSpec:
    config: SimConfig
    seeds: list[int]
    duration_s: float
    out_dir: str
    modes: tuple = MODES
    traffics: tuple = ("slice_based", "uniform")

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if not self.seeds:
            raise ValueError("at least one seed is required")


@dataclass
class Bundle:
    ae: object
    ranges: dict  # slice_id -> ScalingRanges
    tables: dict  # slice_id -> QTable

    def fresh_tables(self) -> dict:
        return {s: t.copy() for s, t in self.tables.items()}


def save_bundle(out_dir, bundle: Bundle, validation_text: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_autoencoder(str(out / "autoencoder.txt"), bundle.ae, bundle.ranges)
    for slice_id, table in bundle.tables.items():
        table.save(str(out / f"qtable_{slice_id}.txt"))
    (out / "validation.txt").write_text(validation_text, encoding="utf-8")


def load_bundle(bundle_dir) -> Bundle:
    out = Path(bundle_dir)
    ae, ranges = load_autoencoder(str(out / "autoencoder.txt"))
    tables = {s: QTable.load(str(out / f"qtable_{s}.txt")) for s in SLICES}
    return Bundle(ae=ae, ranges=ranges, tables=tables)


# ---------------------------------------------------------------------------
# collect
# ---------------------------------------------------------------------------


# canonical campaign: collect on neighboring deployment variants (3 and 1
# UEs per slice around the reference 2) so the offline agent is trained on
# heterogeneous deployments rather than the exact evaluation cell, mirroring
# how production datasets come from other environments
CAMPAIGN_VARIANTS = ((9, (101, 102)), (3, (103, 104)))
CAMPAIGN_DURATION_S = 240.0
DEFAULT_TRAIN_SEED = 7


def run_reference_campaign(config: SimConfig, out_dir) -> list[str]:
    """Collect the canonical heterogeneous training campaign."""
    paths = []
    for ues_per_bs, seeds in CAMPAIGN_VARIANTS:
        variant = replace(config, ues_per_bs=ues_per_bs)
        paths.extend(
            run_collect(
                variant,
                list(seeds),
                CAMPAIGN_DURATION_S,
                Path(out_dir) / f"ues{ues_per_bs}",
            )
        )
    return paths


def run_collect(config: SimConfig, seeds, duration_s: float, out_dir) -> list[str]:
    """Random-sweep campaigns; one collect CSV per (seed, base station)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for seed in seeds:
        cfg = replace(config, rng_seed=seed)

        def factory(bs_id, bs_index, seed=seed):
            return RandomSweepAgent(
                bs_id,
                cfg.total_prbs,
                seed=(seed, bs_index),
                control_period_reports=cfg.control_period_reports,
                initial_quotas=cfg.init_quotas,
                initial_policies=cfg.init_policies,
            )

        artifacts = run_lockstep(
            cfg,
            duration_s,
            factory,
            out_dir=out / f"seed_{seed:04d}",
            write_kpm=False,
            write_controls=False,
            write_collect=True,
        )
        if artifacts.ric_stats.get("dropped", 0):
            raise RuntimeError("collect campaign dropped frames in lockstep mode")
        paths.extend(sorted(artifacts.collect_paths.values()))
        log.info("collect seed %d: %d files", seed, len(artifacts.collect_paths))
    return paths


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def run_train(
    csv_paths,
    out_dir,
    seed: int = 0,
    ae_sizes=DEFAULT_AE_SIZES,
    ae_epochs: int = DEFAULT_AE_EPOCHS,
    ae_lr: float = DEFAULT_AE_LR,
    q_epochs: int = DEFAULT_Q_EPOCHS,
    hyper: QHyperparams | None = None,
    depth: int = DEFAULT_DEPTH,
) -> Bundle:
    """Full offline pipeline: scaling ranges, autoencoder, Q replay.

    Validates before exporting (autoencoder compression quality and the
    q_update-vs-value-iteration oracle); a failing bundle is not
    written and raises BundleValidationError.
    """
    hyper = hyper if hyper is not None else QHyperparams()
    rows = []
    for path in csv_paths:
        rows.extend(read_collect_csv(path))
    if not rows:
        raise ValueError("no training rows found")

    from .xapp_sdk import fit_slice_ranges

    ranges = fit_slice_ranges([r.record for r in rows])

    windows = []
    for (_bs, slice_id), entries in sorted(slice_series(rows).items()):
        windows.append(
            rolling_windows([e.record for e in entries], depth, ranges[slice_id])
        )
    data = np.vstack(windows)
    ae, history = ae_train(
        data, list(ae_sizes), epochs=ae_epochs, lr=ae_lr, seed=seed
    )
    ae_mse = history[-1]
    data_variance = float(np.var(data))

    tables, edges, n_transitions = offline_train(
        csv_paths, ae, ranges, hyper=hyper, seed=seed, epochs=q_epochs, depth=depth
    )

    oracle = validate_q_machinery(seed=seed)
    checks = {
        "ae_mse_finite": bool(np.isfinite(ae_mse)),
        "ae_mse_below_half_variance": bool(ae_mse < 0.5 * data_variance),
        "bin_edges_monotone": bool(np.all(np.diff(edges, axis=1) >= 0)),
        "toy_mdp_oracle_match": bool(oracle["match"]),
        "has_transitions": n_transitions > 0,
    }
    lines = [
        "bundle validation",
        f"training_rows {len(rows)}",
        f"windows {data.shape[0]}",
        f"transitions {n_transitions}",
        f"ae_mse {ae_mse:.8f}",
        f"data_variance {data_variance:.8f}",
        f"oracle_policy {oracle['oracle_policy']}",
        f"greedy_policy {oracle['greedy_policy']}",
    ]
    lines += [f"check {name} {'PASS' if ok else 'FAIL'}" for name, ok in checks.items()]
    validation_text = "\n".join(lines) + "\n"
    if not all(checks.values()):
        failed = [name for name, ok in checks.items() if not ok]
        raise BundleValidationError(
            f"bundle failed validation: {', '.join(failed)}\n{validation_text}"
        )

    bundle = Bundle(ae=ae, ranges=ranges, tables=tables)
    save_bundle(out_dir, bundle, validation_text)
    return bundle


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@dataclass
class RunSummary:
    """Per-run statistics recomputable from the KPM logs alone."""

    slice_stats: dict  # slice_id -> dict of floats
    aggregate_reward: float
    pairs: dict  # slice_id -> list[(throughput_mbps, buffer_bytes)]
    windows: int


def summarize_kpm_logs(paths, ranges: dict, weights=None) -> RunSummary:
    weights = weights if weights is not None else RewardWeights()
    records = []
    for path in paths:
        records.extend(read_kpm_csv(path))
    by_slice = {s: [] for s in SLICES}
    for r in records:
        by_slice[r.slice_id].append(r)

    slice_stats = {}
    pairs = {}
    reward_total = 0.0
    for slice_id in SLICES:
        rs = by_slice[slice_id]
        thr = np.array([r.dl_throughput_mbps for r in rs])
        buf = np.array([r.buffer_bytes for r in rs], dtype=np.float64)
        pkts = np.array([r.tx_packets for r in rs], dtype=np.float64)
        offered = np.array([r.offered_load_mbps for r in rs])
        slice_stats[slice_id] = {
            "mean_throughput_mbps": float(thr.mean()) if len(rs) else 0.0,
            "p95_throughput_mbps": float(np.percentile(thr, 95)) if len(rs) else 0.0,
            "tx_packets_per_window": float(pkts.mean()) if len(rs) else 0.0,
            "mean_buffer_bytes": float(buf.mean()) if len(rs) else 0.0,
            "median_buffer_bytes": float(np.median(buf)) if len(rs) else 0.0,
            "p95_buffer_bytes": float(np.percentile(buf, 95)) if len(rs) else 0.0,
            "mean_offered_mbps": float(offered.mean()) if len(rs) else 0.0,
        }
        pairs[slice_id] = [(r.dl_throughput_mbps, r.buffer_bytes) for r in rs]
        reward_total += sum(reward(slice_id, r, ranges[slice_id], weights) for r in rs)

    n_windows = max((len(v) for v in by_slice.values()), default=0)
    aggregate = reward_total / n_windows if n_windows else 0.0
    return RunSummary(
        slice_stats=slice_stats,
        aggregate_reward=aggregate,
        pairs=pairs,
        windows=n_windows,
    )


def cell_dir_name(mode: str, traffic: str) -> str:
    key = {v: k for k, v in TRAFFIC_KEYS.items()}[traffic]
    return f"cell_{mode}_{key}"


def run_eval(spec: ExperimentSpec, bundle: Bundle) -> dict:
    """Run the mode x traffic matrix over all seeds in lockstep.

    Returns {(mode, traffic): {seed: {"summary": RunSummary, ...}}} and
    writes per-cell summary/scatter CSVs plus per-run logs under
    spec.out_dir.
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_autoencoder(str(out / "model_used.txt"), bundle.ae, bundle.ranges)
    (out / "run_meta.txt").write_text(
        "\n".join(
            [
                f"seeds {' '.join(str(s) for s in spec.seeds)}",
                f"duration_s {spec.duration_s}",
                f"modes {' '.join(spec.modes)}",
                f"traffics {' '.join(spec.traffics)}",
                f"n_bs {spec.config.n_bs}",
            ]
        )
        + "\n",
        encoding="utf-8",
    )

    results = {}
    for mode in spec.modes:
        for traffic in spec.traffics:
            cell = cell_dir_name(mode, traffic)
            cell_out = out / cell
            cell_results = {}
            for seed in spec.seeds:
                cfg = replace(spec.config, rng_seed=seed).with_traffic(traffic)

                def factory(bs_id, bs_index, seed=seed, mode=mode):
                    return SliceControlAgent(
                        bs_id,
                        bundle.ae,
                        bundle.ranges,
                        bundle.fresh_tables(),
                        cfg.total_prbs,
                        mode=mode,
                        seed=(seed, bs_index),
                        control_period_reports=cfg.control_period_reports,
                        initial_quotas=cfg.init_quotas,
                        initial_policies=cfg.init_policies,
                    )

                artifacts = run_lockstep(
                    cfg, spec.duration_s, factory, out_dir=cell_out / f"seed_{seed:04d}"
                )
                summary = summarize_kpm_logs(
                    sorted(artifacts.kpm_paths.values()), bundle.ranges
                )
                cell_results[seed] = {
                    "summary": summary,
                    "dropped": artifacts.ric_stats.get("dropped", 0),
                    "audit_failures": artifacts.audit_failures,
                    "rejected_controls": artifacts.rejected_controls,
                    "kpm_paths": sorted(artifacts.kpm_paths.values()),
                    "control_paths": sorted(artifacts.control_paths.values()),
                }
                log.info(
                    "eval %s traffic=%s seed=%d reward=%.4f drops=%d",
                    mode,
                    traffic,
                    seed,
                    summary.aggregate_reward,
                    cell_results[seed]["dropped"],
                )
            _write_cell_outputs(cell_out, cell_results)
            results[(mode, traffic)] = cell_results
    return results


def _write_cell_outputs(cell_out: Path, cell_results: dict) -> None:
    cell_out.mkdir(parents=True, exist_ok=True)
    slice_lines = [
        "seed,slice,mean_throughput_mbps,p95_throughput_mbps,tx_packets_per_window,"
        "mean_buffer_bytes,p95_buffer_bytes,mean_offered_mbps"
    ]
    run_lines = ["seed,aggregate_reward,windows,dropped,audit_failures,rejected_controls"]
    scatter_lines = ["seed,slice,throughput_mbps,buffer_bytes"]
    for seed in sorted(cell_results):
        entry = cell_results[seed]
        summary = entry["summary"]
        for slice_id in SLICES:
            stats = summary.slice_stats[slice_id]
            slice_lines.append(
                f"{seed},{slice_id},{stats['mean_throughput_mbps']:.6f},"
                f"{stats['p95_throughput_mbps']:.6f},{stats['tx_packets_per_window']:.6f},"
                f"{stats['mean_buffer_bytes']:.6f},{stats['p95_buffer_bytes']:.6f},"
                f"{stats['mean_offered_mbps']:.6f}"
            )
            for thr, buf in summary.pairs[slice_id]:
                scatter_lines.append(f"{seed},{slice_id},{thr:.3f},{buf}")
        run_lines.append(
            f"{seed},{summary.aggregate_reward:.6f},{summary.windows},"
            f"{entry['dropped']},{entry['audit_failures']},{entry['rejected_controls']}"
        )
    (cell_out / "summary_slices.csv").write_text(
        "\n".join(slice_lines) + "\n", encoding="utf-8"
    )
    (cell_out / "summary_runs.csv").write_text(
        "\n".join(run_lines) + "\n", encoding="utf-8"
    )
    (cell_out / "scatter.csv").write_text(
        "\n".join(scatter_lines) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def pearson(x, y) -> float | None:
    """Pearson correlation; None when undefined (fewer than two points
    or a zero-variance column)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return None
    sx = x.std()
    sy = y.std()
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


def emit_summary(run_dir) -> dict:
    """Recompute per-cell summaries from the raw KPM logs and write the
    report: per-slice (throughput, buffer) scatter CSVs, Pearson
    correlations, and a plain-text comparison table."""
    run = Path(run_dir)
    model_path = run / "model_used.txt"
    if not model_path.exists():
        raise FileNotFoundError(f"{model_path} missing; run eval first")
    _, ranges = load_autoencoder(str(model_path))

    report_dir = run / "report"
    report_dir.mkdir(exist_ok=True)

    cells = sorted(p for p in run.glob("cell_*") if p.is_dir())
    if not cells:
        raise FileNotFoundError(f"no cell_* directories under {run}")

    correlations = ["cell,slice,pearson_r,samples"]
    table_rows = []
    summaries = {}
    for cell in cells:
        seed_dirs = sorted(p for p in cell.glob("seed_*") if p.is_dir())
        per_seed = []
        scatter_lines = ["slice,throughput_mbps,buffer_bytes"]
        pooled = {s: ([], []) for s in SLICES}
        for seed_dir in seed_dirs:
            kpm_paths = sorted(str(p) for p in seed_dir.glob("kpm_*.csv"))
            summary = summarize_kpm_logs(kpm_paths, ranges)
            per_seed.append(summary)
            for slice_id in SLICES:
                for thr, buf in summary.pairs[slice_id]:
                    scatter_lines.append(f"{slice_id},{thr:.3f},{buf}")
                    pooled[slice_id][0].append(thr)
                    pooled[slice_id][1].append(buf)
        (report_dir / f"scatter_{cell.name}.csv").write_text(
            "\n".join(scatter_lines) + "\n", encoding="utf-8"
        )
        for slice_id in SLICES:
            thr, buf = pooled[slice_id]
            r = pearson(thr, buf)
            r_text = "undefined" if r is None else f"{r:.9f}"
            correlations.append(f"{cell.name},{slice_id},{r_text},{len(thr)}")
        summaries[cell.name] = per_seed
        rewards = [s.aggregate_reward for s in per_seed]
        row = {
            "cell": cell.name,
            "median_reward": float(np.median(rewards)) if rewards else 0.0,
        }
        for slice_id in SLICES:
            row[f"{slice_id}_thr"] = float(
                np.median([s.slice_stats[slice_id]["mean_throughput_mbps"] for s in per_seed])
            )
            row[f"{slice_id}_buf"] = float(
                np.median([s.slice_stats[slice_id]["mean_buffer_bytes"] for s in per_seed])
            )
        table_rows.append(row)

    (report_dir / "correlations.csv").write_text(
        "\n".join(correlations) + "\n", encoding="utf-8"
    )

    header = (
        f"{'cell':<24} {'median_reward':>13} "
        + " ".join(f"{s + '_thr':>10}" for s in SLICES)
        + " "
        + " ".join(f"{s + '_buf':>12}" for s in SLICES)
    )
    lines = [header, "-" * len(header)]
    for row in table_rows:
        lines.append(
            f"{row['cell']:<24} {row['median_reward']:>13.4f} "
            + " ".join(f"{row[s + '_thr']:>10.3f}" for s in SLICES)
            + " "
            + " ".join(f"{row[s + '_buf']:>12.1f}" for s in SLICES)
        )
    (report_dir / "comparison.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {
        "report_dir": str(report_dir),
        "cells": [row["cell"] for row in table_rows],
        "summaries": summaries,
    }
