"""Closed-loop runners: deterministic lockstep and free-running sockets.

Lockstep mode drives the RIC core, every base station, and every xApp
from one thread on a simulated clock. Per report window the sequence
is fixed: base stations apply pending controls, step one window, and
emit indications; the hub routes; xApps ingest, decide at
control-period boundaries, and send directives that take effect at the
next window's first TTI. Identical configs and seeds therefore produce
byte-identical logs.

Socket mode wires the same components over TCP with one thread per
base station and per xApp. It demonstrates the wire path end to end
but offers no determinism guarantees (thread timing decides when
controls land), so evaluations use lockstep.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import CollectCsvWriter, ControlCsvWriter, KpmCsvWriter
from .e2_wire import SLICES
from .ran_sim import BaseStation, E2Agent, SimConfig
from .ric import LocalHub, RicServer
from .transport import SocketTransport
from .xapp_sdk import XAppClient

log = logging.getLogger(__name__)


@dataclass
class RunArtifacts:
    out_dir: str | None
    n_windows: int
    kpm_paths: dict = field(default_factory=dict)
    control_paths: dict = field(default_factory=dict)
    collect_paths: dict = field(default_factory=dict)
    ric_stats: dict = field(default_factory=dict)
    audit_failures: int = 0
    rejected_controls: int = 0
    controllers: dict = field(default_factory=dict)


def bs_name(i: int) -> str:
    return f"bs{i + 1}"


def xapp_name(i: int) -> str:
    return f"xapp{i + 1}"


def run_lockstep(
    config: SimConfig,
    duration_s: float,
    controller_factory,
    out_dir=None,
    write_kpm: bool = True,
    write_controls: bool = True,
    write_collect: bool = False,
) -> RunArtifacts:
    """Run the full closed loop for ``duration_s`` simulated seconds.

    ``controller_factory(bs_id, bs_index)`` builds the per-xApp decision
    logic (e.g. drl_agent.SliceControlAgent or RandomSweepAgent); it may
    be None for a monitoring-only run. Collect mode additionally logs
    each window with the controller's action-in-effect.
    """
    n_windows = int(duration_s * 1000) // config.report_period_ms
    sim_clock_ms = [0]
    hub = LocalHub(clock=lambda: sim_clock_ms[0])

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    artifacts = RunArtifacts(out_dir=str(out) if out else None, n_windows=n_windows)

    stations = []
    agents = []
    clients = []
    controllers = []
    writers = []
    collect_writers = {}

    try:
        for i in range(config.n_bs):
            bs = BaseStation(config, bs_name(i), i)
            kpm_log = None
            control_log = None
            if out is not None and write_kpm:
                writer = KpmCsvWriter(out / f"kpm_{bs.bs_id}.csv")
                writers.append(writer)
                artifacts.kpm_paths[bs.bs_id] = writer.path
                kpm_log = writer.append
            if out is not None and write_controls:
                writer = ControlCsvWriter(out / f"controls_{bs.bs_id}.csv")
                writers.append(writer)
                artifacts.control_paths[bs.bs_id] = writer.path
                control_log = writer.append
            agent = E2Agent(bs, hub.connect(), kpm_log=kpm_log, control_log=control_log)
            stations.append(bs)
            agents.append(agent)

            client = XAppClient(xapp_name(i), hub.connect())
            clients.append(client)
            controller = (
                controller_factory(bs.bs_id, i) if controller_factory is not None else None
            )
            controllers.append(controller)
            artifacts.controllers[bs.bs_id] = controller
            if out is not None and write_collect:
                writer = CollectCsvWriter(out / f"collect_{bs.bs_id}.csv")
                writers.append(writer)
                collect_writers[i] = writer
                artifacts.collect_paths[bs.bs_id] = writer.path

        # registration handshake
        for agent in agents:
            agent.send_register()
        for client in clients:
            client.send_register()
        hub.pump()
        for agent in agents:
            agent.process_inbox()
            if not agent.registered:
                raise RuntimeError(
                    f"{agent.bs.bs_id} failed to register: {agent.register_error}"
                )
        for client in clients:
            client.process_inbox()
            if not client.registered:
                raise RuntimeError(
                    f"{client.xapp_id} failed to register: {client.register_error}"
                )

        # one xApp instance per base station
        for i, client in enumerate(clients):
            client.subscribe(bs_name(i), config.report_period_ms)
        hub.pump()
        for i, client in enumerate(clients):
            client.process_inbox()
            status = client.subscription_status.get(bs_name(i), "")
            if not status.startswith("ok"):
                raise RuntimeError(f"{client.xapp_id} subscription failed: {status}")
        for agent in agents:
            agent.process_inbox()
            if not agent.subscribers:
                raise RuntimeError(f"{agent.bs.bs_id} saw no subscription")

        # main loop
        for w in range(n_windows):
            for agent in agents:
                agent.process_inbox()  # controls decided after window w-1
            hub.pump()  # control acks to the xApps
            for agent in agents:
                agent.advance_window()
            sim_clock_ms[0] = stations[0].sim_time_ms
            hub.pump()  # indications to the xApps
            for i, client in enumerate(clients):
                client.process_inbox()
                controller = controllers[i]
                if controller is None:
                    continue
                if i in collect_writers:
                    records = [client.latest(bs_name(i), s) for s in SLICES]
                    collect_writers[i].append(
                        [r for r in records if r is not None],
                        controller.current_action,
                        controller.ctrl_seq,
                    )
                directive = controller.decide(w, client)
                if directive is not None:
                    client.send_control(directive)
            hub.pump()  # controls to the base stations

        # drain the last round of controls so they are consumed, then stop
        for agent in agents:
            agent.process_inbox()
        hub.pump()
        for client in clients:
            client.process_inbox()

        artifacts.ric_stats = hub.core.stats()
        artifacts.audit_failures = sum(bs.audit_failures for bs in stations)
        artifacts.rejected_controls = sum(bs.rejected_controls for bs in stations)
    finally:
        for client in clients:
            try:
                client.close()
            except Exception:
                pass
        for agent in agents:
            try:
                agent.transport.close()
            except Exception:
                pass
        for writer in writers:
            writer.close()
    return artifacts


# ---------------------------------------------------------------------------
# free-running socket mode (demonstration; excluded from acceptance runs)
# ---------------------------------------------------------------------------


def run_socket_demo(
    config: SimConfig,
    duration_s: float,
    controller_factory,
    out_dir=None,
    realtime_factor: float = 0.01,
) -> RunArtifacts:
    """Same loop over real TCP: RIC server plus one thread per component."""
    n_windows = int(duration_s * 1000) // config.report_period_ms
    server = RicServer(host=config.ric_host, port=0).start()
    host, port = server.address

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    artifacts = RunArtifacts(out_dir=str(out) if out else None, n_windows=n_windows)

    stations = []
    writers = []
    threads = []
    stop_flags = []

    try:
        for i in range(config.n_bs):
            bs = BaseStation(config, bs_name(i), i)
            stations.append(bs)
            kpm_log = None
            if out is not None:
                writer = KpmCsvWriter(out / f"kpm_{bs.bs_id}.csv")
                writers.append(writer)
                artifacts.kpm_paths[bs.bs_id] = writer.path
                kpm_log = writer.append
            agent = E2Agent(bs, SocketTransport(host, port), kpm_log=kpm_log)
            agent.send_register()

            client = XAppClient(xapp_name(i), SocketTransport(host, port))
            client.send_register()
            controller = (
                controller_factory(bs.bs_id, i) if controller_factory is not None else None
            )
            artifacts.controllers[bs.bs_id] = controller

            def run_bs(agent=agent):
                agent.run(duration_s, realtime_factor=realtime_factor)
                agent.transport.close()

            stop = threading.Event()
            stop_flags.append(stop)

            def run_xapp(client=client, controller=controller, i=i, stop=stop):
                client.subscribe(bs_name(i), config.report_period_ms)
                windows_seen = 0
                while not stop.is_set():
                    client.process_inbox()
                    while windows_seen < client.indications_seen:
                        if controller is not None:
                            directive = controller.decide(windows_seen, client)
                            if directive is not None:
                                try:
                                    client.send_control(directive)
                                except OSError:
                                    return
                        windows_seen += 1
                    stop.wait(0.001)
                client.close()

            bs_thread = threading.Thread(target=run_bs, daemon=True)
            xapp_thread = threading.Thread(target=run_xapp, daemon=True)
            threads.append((bs_thread, xapp_thread))

        for bs_thread, xapp_thread in threads:
            bs_thread.start()
            xapp_thread.start()
        for bs_thread, _ in threads:
            bs_thread.join(timeout=duration_s * max(realtime_factor, 0.001) * 20 + 30)
        for stop in stop_flags:
            stop.set()
        for _, xapp_thread in threads:
            xapp_thread.join(timeout=5)

        artifacts.ric_stats = server.core.stats()
        artifacts.audit_failures = sum(bs.audit_failures for bs in stations)
        artifacts.rejected_controls = sum(bs.rejected_controls for bs in stations)
    finally:
        server.stop()
        for writer in writers:
            writer.close()
    return artifacts
