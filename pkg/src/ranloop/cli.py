"""Command-line entry point: collect, train, eval, report.

Typical workflow:

    ranloop collect --seed 1 --seed 2 --duration 240 --out data/
    ranloop train --data data/ --out bundle/ --seed 7
    ranloop eval --bundle bundle/ --seed 1 --seed 2 --seed 3 \\
                 --duration 120 --out results/
    ranloop report --run results/

``--config`` points at a key = value scenario file; without it the
reference scenario is used (7 base stations, 6 UEs each, 50 PRBs).
Set RANLOOP_LOG=debug|info|warning for log verbosity and
RANLOOP_NUMBA=0 to run the simulator kernels on the pure-numpy path.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .drl_agent import MODE_FINETUNE, MODE_FROZEN
from .experiments import (
    DEFAULT_TRAIN_SEED,
    TRAFFIC_KEYS,
    BundleValidationError,
    ExperimentSpec,
    emit_summary,
    load_bundle,
    run_collect,
    run_eval,
    run_reference_campaign,
    run_train,
)
from .orchestrator import run_socket_demo
from .ran_sim import SimConfig, parse_scenario_config, write_scenario_config

log = logging.getLogger(__name__)


def _setup_logging() -> None:
    level_name = os.environ.get("RANLOOP_LOG", "warning").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> SimConfig:
    if args.config:
        return parse_scenario_config(args.config)
    return SimConfig()


def _seeds(args) -> list[int]:
    return args.seed if args.seed else [1]


def _add_common(parser, with_mode_traffic=False):
    parser.add_argument("--config", help="scenario config file (key = value)")
    parser.add_argument(
        "--seed", type=int, action="append", help="seed (repeatable); default 1"
    )
    parser.add_argument("--out", required=True, help="output directory")
    if with_mode_traffic:
        parser.add_argument(
            "--mode",
            choices=[MODE_FROZEN, MODE_FINETUNE],
            action="append",
            help="agent mode(s) to run; default both",
        )
        parser.add_argument(
            "--traffic",
            choices=sorted(TRAFFIC_KEYS),
            action="append",
            help="traffic class(es) to run; default both",
        )


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="ranloop", description="Open RAN closed-loop control experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_collect = sub.add_parser("collect", help="run data collection campaigns")
    _add_common(p_collect)
    p_collect.add_argument(
        "--duration", type=float, default=240.0, help="simulated seconds per seed"
    )
    p_collect.add_argument(
        "--campaign",
        action="store_true",
        help="run the canonical heterogeneous campaign (deployment variants; "
        "ignores --seed/--duration)",
    )

    p_train = sub.add_parser("train", help="train and validate a model bundle")
    p_train.add_argument(
        "--data", required=True, help="collect output directory or CSV file"
    )
    p_train.add_argument("--out", required=True, help="bundle output directory")
    p_train.add_argument("--seed", type=int, default=DEFAULT_TRAIN_SEED)
    p_train.add_argument("--ae-epochs", type=int, default=300)
    p_train.add_argument("--q-epochs", type=int, default=20)

    p_eval = sub.add_parser("eval", help="run the mode x traffic evaluation matrix")
    _add_common(p_eval, with_mode_traffic=True)
    p_eval.add_argument("--bundle", required=True, help="trained bundle directory")
    p_eval.add_argument("--duration", type=float, default=120.0)
    p_eval.add_argument(
        "--transport",
        choices=["lockstep", "socket"],
        default="lockstep",
        help="lockstep is deterministic; socket is a live-wire demonstration",
    )

    p_report = sub.add_parser("report", help="summaries and correlations from a run")
    p_report.add_argument("--run", required=True, help="eval output directory")

    p_scenario = sub.add_parser("scenario", help="write the reference scenario file")
    p_scenario.add_argument("--out", required=True)

    args = parser.parse_args(argv)

    if args.command == "collect":
        config = _load_config(args)
        if args.campaign:
            paths = run_reference_campaign(config, args.out)
        else:
            paths = run_collect(config, _seeds(args), args.duration, args.out)
        print(f"wrote {len(paths)} collect files under {args.out}")
        return 0

    if args.command == "train":
        data = Path(args.data)
        if data.is_dir():
            csv_paths = sorted(str(p) for p in data.rglob("collect_*.csv"))
        else:
            csv_paths = [str(data)]
        if not csv_paths:
            print(f"no collect_*.csv files under {data}", file=sys.stderr)
            return 1
        try:
            run_train(
                csv_paths,
                args.out,
                seed=args.seed,
                ae_epochs=args.ae_epochs,
                q_epochs=args.q_epochs,
            )
        except BundleValidationError as exc:
            print(f"validation failed: {exc}", file=sys.stderr)
            return 1
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"bundle written to {args.out}")
        return 0

    if args.command == "eval":
        config = _load_config(args)
        bundle = load_bundle(args.bundle)
        modes = tuple(args.mode) if args.mode else (MODE_FROZEN, MODE_FINETUNE)
        traffics = tuple(
            TRAFFIC_KEYS[t] for t in (args.traffic if args.traffic else sorted(TRAFFIC_KEYS))
        )
        if args.transport == "socket":
            # live-wire demonstration: one cell per (mode, traffic), first seed
            from .drl_agent import SliceControlAgent

            seed = _seeds(args)[0]
            for mode in modes:
                for traffic in traffics:
                    cfg = config.with_traffic(traffic)

                    def factory(bs_id, bs_index, mode=mode):
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

                    out = Path(args.out) / f"socket_{mode}_{traffic}"
                    artifacts = run_socket_demo(
                        cfg, args.duration, factory, out_dir=out
                    )
                    print(
                        f"socket {mode}/{traffic}: {artifacts.n_windows} windows, "
                        f"stats {artifacts.ric_stats}"
                    )
            return 0
        spec = ExperimentSpec(
            config=config,
            seeds=_seeds(args),
            duration_s=args.duration,
            out_dir=args.out,
            modes=modes,
            traffics=traffics,
        )
        results = run_eval(spec, bundle)
        for (mode, traffic), cell in sorted(results.items()):
            rewards = [entry["summary"].aggregate_reward for entry in cell.values()]
            drops = sum(entry["dropped"] for entry in cell.values())
            print(
                f"{mode:>8} {traffic:<12} seeds={len(cell)} "
                f"median_reward={sorted(rewards)[len(rewards) // 2]:.4f} drops={drops}"
            )
        return 0

    if args.command == "report":
        result = emit_summary(args.run)
        print(f"report written to {result['report_dir']}")
        with open(Path(result["report_dir"]) / "comparison.txt", encoding="utf-8") as fh:
            print(fh.read())
        return 0

    if args.command == "scenario":
        write_scenario_config(args.out, SimConfig())
        print(f"reference scenario written to {args.out}")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
