"""Command-line front end.

Modes: single-fault injection (`inject <fault> ...`), scenario campaigns
(`scenario run <path>`), a pure plan printer (`plan <fault> ...`), and an
iperf peer helper for the bandwidth fault. The original switch style
(`--stressmem <loops> <size> user@host -no <key>`) is accepted as a
compatibility form and maps onto `inject stress-mem`; `-no <path>` is an
alias for `--key <path>`.

Environment: FIT_KEY supplies a default key path, FIT_ESCALATION
overrides the privilege-escalation prefix.
"""
from __future__ import annotations

import argparse
import os
import signal
import sys
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import campaign, faults, osprobe, report
from .campaign import CampaignOptions
from .errors import (
    EmptyPool,
    FitError,
    InvalidParameter,
    PreflightFailed,
    ScenarioError,
    ScopeMismatch,
    UnknownFault,
    UnknownLabel,
    UsageError,
    WhitelistUnreadable,
)
from .osprobe import OSProfile
from .plans import DEFAULT_ESCALATION
from .report import RunReport
from .transport import Auth, Endpoint, SshTransport

EX_PREFLIGHT = 3
EX_USAGE = 64
EX_INTERNAL = 70

MODE_SINGLE = "single-fault"
MODE_SCENARIO = "scenario"
MODE_PEER = "serve-iperf-peer"
MODE_PLAN = "print-plan"

# fault parameter field -> CLI flag
_PARAM_FLAGS = {
    "size": "--size",
    "loops": "--loops",
    "workers": "--workers",
    "duration": "--duration",
    "bytes_per_worker": "--bytes-per-worker",
    "peer": "--peer",
    "rate": "--rate",
    "delay": "--delay",
    "service_name": "--service-name",
    "install_root": "--install-root",
    "workload_name": "--workload-name",
    "record_count": "--record-count",
    "operation_count": "--operation-count",
    "plan": "--plan",
    "whitelist_path": "--whitelist",
    "seed": "--seed",
}


@dataclass
class Invocation:
    mode: str
    fault: faults.FaultSpec | None = None
    target: Endpoint | None = None
    scenario_path: str | None = None
    inventory_path: str | None = None
    dry_run: bool = False
    output: str | None = None  # None -> text on a terminal, json otherwise
    escalation_prefix: str = DEFAULT_ESCALATION
    hold: float | None = None
    assume_family: str = osprobe.UBUNTU
    key: str | None = None
    peer_duration: int = 86400


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_target(text: str, *, port: int, target_class: str,
                  key: str | None) -> Endpoint:
    username, _, host = text.partition("@")
    if not username or not host:
        raise UsageError(f"target must be user@host, got {text!r}")
    auth = Auth.key(key) if key else Auth.agent()
    try:
        return Endpoint(host=host, username=username, auth=auth,
                        port=port, target_class=target_class)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _parse_compat(argv: list[str], env) -> Invocation:
    """`--stressmem <loops> <size> <user@host> [-no <key>] [flags]`."""
    rest = argv[1:]
    if len(rest) < 3:
        raise UsageError("--stressmem needs <loops> <size> <user@host>")
    loops_raw, size_raw, target_raw = rest[0], rest[1], rest[2]
    key = env.get("FIT_KEY") or None
    escalation = env.get("FIT_ESCALATION", DEFAULT_ESCALATION)
    dry_run = False
    output = None
    i = 3
    while i < len(rest):
        token = rest[i]
        if token in ("-no", "--key"):
            if i + 1 >= len(rest):
                raise UsageError(f"{token} needs a key-file path")
            key = rest[i + 1]
            i += 2
        elif token == "--dry-run":
            dry_run = True
            i += 1
        elif token.startswith("--output="):
            output = token.partition("=")[2]
            i += 1
        elif token == "--output":
            if i + 1 >= len(rest):
                raise UsageError("--output needs a value")
            output = rest[i + 1]
            i += 2
        else:
            raise UsageError(f"unknown token {token!r}")
    if output not in (None, "text", "json"):
        raise UsageError(f"--output must be text or json, got {output!r}")
    try:
        loops = int(loops_raw)
    except ValueError:
        raise UsageError(f"loop count {loops_raw!r} is not an integer") from None
    try:
        fault = faults.StressMem(size=faults.parse_size(size_raw), loops=loops)
        fault.check()
    except InvalidParameter as exc:
        raise UsageError(str(exc)) from None
    target = _parse_target(target_raw, port=22, target_class="vm", key=key)
    return Invocation(MODE_SINGLE, fault=fault, target=target, dry_run=dry_run,
                      output=output, escalation_prefix=escalation, key=key)


def _add_common(parser) -> None:
    parser.add_argument("--output", choices=["text", "json"])
    parser.add_argument("--escalation")
    parser.add_argument("--key")


def _add_param_flags(parser) -> None:
    for flag in ("--size", "--peer", "--service-name", "--install-root",
                 "--workload-name", "--plan", "--whitelist"):
        parser.add_argument(flag)
    for flag in ("--loops", "--workers", "--duration", "--rate", "--delay",
                 "--record-count", "--operation-count", "--seed"):
        parser.add_argument(flag)
    parser.add_argument("--bytes-per-worker", dest="bytes_per_worker")


def _build_parser() -> _Parser:
    parser = _Parser(prog="fit", allow_abbrev=False,
                     description="Inject resource stress and outage faults on remote targets.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    inject = sub.add_parser("inject", allow_abbrev=False,
                            help="run one fault against one target")
    inject.add_argument("fault_name")
    inject.add_argument("--target")
    inject.add_argument("--port", type=int, default=22)
    inject.add_argument("--class", dest="target_class",
                        choices=["vm", "node"], default="vm")
    inject.add_argument("--inventory")
    inject.add_argument("--pool")
    inject.add_argument("--hold", type=float)
    inject.add_argument("--dry-run", action="store_true")
    inject.add_argument("--assume-family", choices=[osprobe.UBUNTU, osprobe.CENTOS],
                        default=osprobe.UBUNTU)
    _add_param_flags(inject)
    _add_common(inject)

    scenario = sub.add_parser("scenario", allow_abbrev=False,
                              help="run a multi-step campaign from a file")
    scenario.add_argument("action", choices=["run"])
    scenario.add_argument("path")
    scenario.add_argument("--inventory", required=True)
    scenario.add_argument("--dry-run", action="store_true")
    scenario.add_argument("--assume-family", choices=[osprobe.UBUNTU, osprobe.CENTOS],
                          default=osprobe.UBUNTU)
    _add_common(scenario)

    plan = sub.add_parser("plan", allow_abbrev=False,
                          help="print a fault's command plan without connecting")
    plan.add_argument("fault_name")
    plan.add_argument("--family", choices=[osprobe.UBUNTU, osprobe.CENTOS],
                      default=osprobe.UBUNTU)
    _add_param_flags(plan)
    _add_common(plan)

    peer = sub.add_parser("serve-iperf-peer", allow_abbrev=False,
                          help="run an iperf server on a peer for stress-net")
    peer.add_argument("--target", required=True)
    peer.add_argument("--port", type=int, default=22)
    peer.add_argument("--duration", type=int, default=86400)
    _add_common(peer)
    return parser


def _collect_params(namespace) -> dict[str, str]:
    params: dict[str, str] = {}
    for field in _PARAM_FLAGS:
        attr = "whitelist" if field == "whitelist_path" else field
        value = getattr(namespace, attr, None)
        if value is not None:
            params[field] = str(value)
    return params


def _build_cli_fault(namespace) -> faults.FaultSpec:
    name = namespace.fault_name
    if name == "kill-random-vm":
        if not namespace.inventory:
            raise UsageError("kill-random-vm needs --inventory")
        inventory = _load_inventory(namespace.inventory)
        if namespace.pool:
            labels = [part.strip() for part in namespace.pool.split(",") if part.strip()]
        else:
            labels = [label for label, ep in inventory.items()
                      if ep.target_class == "vm"]
        pool = []
        for label in labels:
            if label not in inventory:
                raise UsageError(f"--pool label {label!r} is not in the inventory")
            pool.append(inventory[label])
        seed = int(namespace.seed) if namespace.seed is not None else None
        fault = faults.KillRandomVM(pool=tuple(pool), seed=seed)
        try:
            fault.check()
        except InvalidParameter as exc:
            raise UsageError(str(exc)) from None
        return fault
    try:
        return faults.build_fault(name, _collect_params(namespace))
    except (UnknownFault, InvalidParameter) as exc:
        raise UsageError(str(exc)) from None


def parse_args(argv: list[str], env=None) -> Invocation:
    env = os.environ if env is None else env
    if argv and argv[0] == "--stressmem":
        return _parse_compat(argv, env)
    namespace = _build_parser().parse_args(argv)
    if not namespace.command:
        raise UsageError("a command is required: inject, scenario, plan, serve-iperf-peer")

    key = getattr(namespace, "key", None) or env.get("FIT_KEY") or None
    escalation = getattr(namespace, "escalation", None) \
        or env.get("FIT_ESCALATION", DEFAULT_ESCALATION)

    if namespace.command == "inject":
        fault = _build_cli_fault(namespace)
        if namespace.hold is not None and not fault.has_revert:
            raise UsageError(f"--hold is invalid for {fault.name} (no revert phase)")
        target = None
        if isinstance(fault, (faults.KillRandomVM, faults.KillRandomFromWhitelist)):
            pass  # target comes from selection at run time
        elif namespace.target:
            target = _parse_target(namespace.target, port=namespace.port,
                                   target_class=namespace.target_class, key=key)
        else:
            raise UsageError(f"inject {fault.name} needs --target user@host")
        return Invocation(
            MODE_SINGLE, fault=fault, target=target,
            inventory_path=namespace.inventory, dry_run=namespace.dry_run,
            output=namespace.output, escalation_prefix=escalation,
            hold=namespace.hold, assume_family=namespace.assume_family, key=key)

    if namespace.command == "scenario":
        return Invocation(
            MODE_SCENARIO, scenario_path=namespace.path,
            inventory_path=namespace.inventory, dry_run=namespace.dry_run,
            output=namespace.output, escalation_prefix=escalation,
            assume_family=namespace.assume_family, key=key)

    if namespace.command == "plan":
        if namespace.fault_name in ("kill-random-vm", "kill-random-whitelist"):
            raise UsageError(
                f"{namespace.fault_name} selects a target first; use inject --dry-run")
        try:
            fault = faults.build_fault(namespace.fault_name,
                                       _collect_params(namespace))
        except (UnknownFault, InvalidParameter) as exc:
            raise UsageError(str(exc)) from None
        return Invocation(MODE_PLAN, fault=fault, output=namespace.output,
                          escalation_prefix=escalation,
                          assume_family=namespace.family, key=key)

    target = _parse_target(namespace.target, port=namespace.port,
                           target_class="vm", key=key)
    return Invocation(MODE_PEER, target=target, output=namespace.output,
                      escalation_prefix=escalation, key=key,
                      peer_duration=namespace.duration)


def render_flags(fault: faults.FaultSpec, *, target: str = "user@host",
                 key: str | None = None) -> list[str]:
    """Modern-form argv for a fault; inverse of parse_args for every
    variant constructible from flags."""
    if isinstance(fault, faults.KillRandomVM):
        raise ValueError("kill-random-vm pools come from an inventory, not flags")
    argv = ["inject", fault.name]
    for field, value in fault.params().items():
        if value != "":
            argv.append(f"{_PARAM_FLAGS[field]}={value}")
    argv += ["--target", target]
    if key:
        argv += ["--key", key]
    return argv


# --- execution helpers ----------------------------------------------------


def _load_inventory(path: str) -> dict[str, Endpoint]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read inventory {path}: {exc}") from exc
    return campaign.parse_inventory(data)


def _output_mode(invocation: Invocation, out) -> str:
    if invocation.output:
        return invocation.output
    return "text" if getattr(out, "isatty", lambda: False)() else "json"


def _render(run: RunReport, invocation: Invocation, out) -> None:
    if _output_mode(invocation, out) == "json":
        out.write(report.render_json(run).decode())
    else:
        out.write(report.render_text(run))


def _wire_sigint(abort_event, force_event):
    def handler(signum, frame):
        if abort_event.is_set():
            force_event.set()
        else:
            abort_event.set()
    try:
        previous = signal.signal(signal.SIGINT, handler)
    except ValueError:  # not on the main thread (e.g. under a test runner)
        return lambda: None
    return lambda: signal.signal(signal.SIGINT, previous)


def _default_factory():
    return SshTransport()


def _run_single(invocation: Invocation, transport_factory, out, err) -> int:
    factory = transport_factory or _default_factory
    fault, target = invocation.fault, invocation.target
    if isinstance(fault, (faults.KillRandomVM, faults.KillRandomFromWhitelist)):
        inventory = (_load_inventory(invocation.inventory_path)
                     if invocation.inventory_path else {})
        default_auth = Auth.key(invocation.key) if invocation.key else None
        target, fault = campaign.resolve_kill_random(
            fault, inventory, default_auth=default_auth)
        print(f"selected {target.label}", file=err)

    abort_event, force_event = threading.Event(), threading.Event()
    restore = _wire_sigint(abort_event, force_event)
    options = CampaignOptions(escalation_prefix=invocation.escalation_prefix,
                              abort_event=abort_event, force_event=force_event,
                              hold=invocation.hold)
    started_at = datetime.now(timezone.utc)
    start = time.monotonic()
    try:
        step = campaign.inject_single(target, fault, factory(), options)
    finally:
        restore()
    run = RunReport(f"inject {invocation.fault.name}", started_at,
                    time.monotonic() - start, [step])
    _render(run, invocation, out)
    return report.exit_code(run)


def _run_scenario(invocation: Invocation, transport_factory, out, err) -> int:
    factory = transport_factory or _default_factory
    try:
        scenario_data = Path(invocation.scenario_path).read_bytes()
    except OSError as exc:
        raise PreflightFailed(f"cannot read scenario {invocation.scenario_path}: {exc}") from exc
    scenario = campaign.parse_scenario(scenario_data)
    try:
        inventory_data = Path(invocation.inventory_path).read_bytes()
    except OSError as exc:
        raise PreflightFailed(f"cannot read inventory {invocation.inventory_path}: {exc}") from exc
    inventory = campaign.parse_inventory(inventory_data)

    abort_event, force_event = threading.Event(), threading.Event()
    restore = _wire_sigint(abort_event, force_event)
    options = CampaignOptions(
        escalation_prefix=invocation.escalation_prefix,
        abort_event=abort_event, force_event=force_event,
        default_auth=Auth.key(invocation.key) if invocation.key else None)
    try:
        run = campaign.run_campaign(scenario, inventory, factory, options)
    finally:
        restore()
    _render(run, invocation, out)
    return report.exit_code(run)


def _plan_rows(invocation: Invocation, err):
    """(index, endpoint label, fault name, rows) per planned step."""
    profile = OSProfile(invocation.assume_family)
    if invocation.mode == MODE_SCENARIO:
        try:
            scenario = campaign.parse_scenario(Path(invocation.scenario_path).read_bytes())
            inventory = campaign.parse_inventory(Path(invocation.inventory_path).read_bytes())
        except OSError as exc:
            raise PreflightFailed(str(exc)) from exc
        rng = campaign.SplitMix64(scenario.seed if scenario.seed is not None else 0)
        default_auth = Auth.key(invocation.key) if invocation.key else None
        plans = []
        try:
            for i, step in enumerate(scenario.steps):
                endpoint = campaign.select_target(step.selector, inventory, rng,
                                                  default_auth=default_auth)
                faults.validate(step.fault, endpoint)
                rows = campaign.dry_run_plan(
                    step.fault, profile, escalation_prefix=invocation.escalation_prefix)
                plans.append((i, endpoint.label, step.fault.name, rows))
        except FitError as exc:
            raise PreflightFailed(str(exc)) from exc
        return plans

    fault, target = invocation.fault, invocation.target
    if isinstance(fault, (faults.KillRandomVM, faults.KillRandomFromWhitelist)):
        inventory = (_load_inventory(invocation.inventory_path)
                     if invocation.inventory_path else {})
        default_auth = Auth.key(invocation.key) if invocation.key else None
        target, fault = campaign.resolve_kill_random(
            fault, inventory, default_auth=default_auth)
    label = target.label if target is not None else f"<{invocation.assume_family}>"
    rows = campaign.dry_run_plan(fault, profile,
                                 escalation_prefix=invocation.escalation_prefix)
    return [(0, label, fault.name, rows)]


def _print_plan(invocation: Invocation, out, err) -> int:
    plans = _plan_rows(invocation, err)
    if _output_mode(invocation, out) == "json":
        import json
        document = {
            "schema_version": report.SCHEMA_VERSION,
            "mode": "dry-run",
            "assumed_family": invocation.assume_family,
            "plans": [
                {"index": i, "endpoint": label, "fault": name,
                 "steps": [{"phase": phase, "command": command}
                           for phase, command in rows]}
                for i, label, name, rows in plans
            ],
        }
        out.write(json.dumps(document, sort_keys=True, indent=2) + "\n")
    else:
        for i, label, name, rows in plans:
            out.write(f"plan: {name} on {invocation.assume_family} -> {label} (dry run)\n")
            for phase, command in rows:
                out.write(f"  {phase:<10} {command}\n")
    return 0


def _serve_peer(invocation: Invocation, transport_factory, out, err) -> int:
    factory = transport_factory or _default_factory
    transport = factory()
    session = transport.connect(invocation.target, 10.0)
    with session:
        profile = osprobe.detect_os(session)
        osprobe.ensure_tool(session, profile, osprobe.TOOLS["iperf"],
                            escalation_prefix=invocation.escalation_prefix)
        print(f"serving iperf on {invocation.target.label}"
              f" for {invocation.peer_duration}s", file=err)
        result = session.exec("iperf -s", float(invocation.peer_duration))
    return 0 if (result.ok or result.timed_out) else 1


def main(argv=None, *, transport_factory=None, out=None, err=None, env=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        invocation = parse_args(argv, env=env)
    except UsageError as exc:
        print(f"fit: {exc}", file=err)
        return EX_USAGE
    try:
        if invocation.mode == MODE_PEER:
            return _serve_peer(invocation, transport_factory, out, err)
        if invocation.mode == MODE_PLAN or invocation.dry_run:
            return _print_plan(invocation, out, err)
        if invocation.mode == MODE_SINGLE:
            return _run_single(invocation, transport_factory, out, err)
        return _run_scenario(invocation, transport_factory, out, err)
    except UsageError as exc:
        print(f"fit: {exc}", file=err)
        return EX_USAGE
    except (InvalidParameter, ScopeMismatch) as exc:
        print(f"fit: {exc}", file=err)
        return EX_USAGE
    except (PreflightFailed, ScenarioError, UnknownFault, UnknownLabel,
            EmptyPool, WhitelistUnreadable) as exc:
        print(f"fit: preflight: {exc}", file=err)
        return EX_PREFLIGHT
    except FitError as exc:
        print(f"fit: {exc}", file=err)
        return 1
    except Exception as exc:  # never a stack trace to the user
        print(f"fit: internal error: {exc!r}", file=err)
        return EX_INTERNAL


def entry() -> None:
    sys.exit(main())
