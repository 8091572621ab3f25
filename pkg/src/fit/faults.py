"""The fault catalog.

Each variant is a frozen dataclass carrying its parameters, the target
classes it applies to, the tools it needs, and a generator for its phased
command plan. Plans are pure functions of (fault, OS profile): identical
inputs produce identical step lists, and every stressor bakes its own
bound (duration or loop count) into the command it emits.

Termination per variant: the stress family self-terminates (memtester by
loop count, stress/iperf by --timeout); cpu/disk/net additionally carry a
pkill revert as a safety net. Shutdown, stop-service and the traffic
block are stateful and revert explicitly. Workload launchers run to
completion and have nothing to revert.
"""
from __future__ import annotations

import math
import posixpath
import re
from dataclasses import MISSING, dataclass, fields as dataclass_fields
from typing import ClassVar

from . import osprobe
from .errors import (
    InvalidParameter,
    ScopeMismatch,
    SelectionRequired,
    UnknownFault,
    UnsupportedOS,
)
from .osprobe import OSProfile, ToolId
from .plans import PHASE_INJECT, PHASE_PROBE, PHASE_REVERT, CommandPlan, PlanStep
from .transport import NODE, VM, Endpoint

MIB = 1 << 20

PROBE_TIMEOUT = 10.0
SHORT_TIMEOUT = 60.0
REVERT_TIMEOUT = 60.0
LONG_TIMEOUT = 3600.0
DURATION_GRACE = 30.0

BLOCK_CHAIN = "FIT-BLOCK"  # dedicated iptables chain tagging every rule we add
SSH_PORT = 22

# shutdown delay handed to targets chosen by the kill-random variants
KILL_RANDOM_DELAY_SECONDS = 60

_IDENTIFIER = re.compile(r"^[A-Za-z0-9_.@:-]+$")
_SIZE = re.compile(r"^(\d+)\s*([kKmMgG]?)$")
_UNITS = {"": 1, "k": 1 << 10, "m": MIB, "g": 1 << 30}


def parse_size(text: str | int, field: str = "size") -> int:
    """Byte count from '2048m', '2g', '512k' or a bare byte integer."""
    if isinstance(text, int):
        return text
    match = _SIZE.match(text.strip())
    if not match:
        raise InvalidParameter(f"{field}: cannot parse size {text!r}")
    return int(match.group(1)) * _UNITS[match.group(2).lower()]


def _positive(value, name: str) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
        raise InvalidParameter(f"{name} must be a positive integer")


def _identifier(value: str, name: str) -> None:
    if not isinstance(value, str) or not _IDENTIFIER.match(value or ""):
        raise InvalidParameter(f"{name} {value!r} is not a plain identifier")


def _remote_path(value: str, name: str) -> None:
    if not isinstance(value, str) or not value.startswith("/") or any(c.isspace() for c in value):
        raise InvalidParameter(f"{name} must be an absolute remote path without whitespace")


class FaultSpec:
    """Base for all variants. Subclasses set name/scope and implement
    check() plus build_plan()."""

    name: ClassVar[str]
    scope: ClassVar[frozenset[str]]
    has_revert: ClassVar[bool] = False

    def check(self) -> None:
        raise NotImplementedError

    def tools(self) -> list[ToolId]:
        return []

    def build_plan(self, profile: OSProfile) -> CommandPlan:
        raise NotImplementedError

    def uploads(self) -> list[tuple[str, str]]:
        """(local path, remote path) files to ship before injecting."""
        return []

    def params(self) -> dict[str, str]:
        """Flag-ready parameter strings; inverse of build_fault."""
        return {f.name: str(getattr(self, f.name)) for f in dataclass_fields(self)}


@dataclass(frozen=True)
class StressMem(FaultSpec):
    """Lock and exercise `size` bytes of RAM for `loops` passes."""

    size: int   # bytes, whole mebibytes
    loops: int

    name = "stress-mem"
    scope = frozenset({VM, NODE})

    def check(self):
        _positive(self.size, "size")
        _positive(self.loops, "loops")
        if self.size % MIB:
            raise InvalidParameter("size must be a whole number of mebibytes")

    def tools(self):
        return [osprobe.TOOLS["memtester"]]

    def build_plan(self, profile):
        command = f"memtester {self.size // MIB}M {self.loops}"
        return CommandPlan((PlanStep(command, PHASE_INJECT, LONG_TIMEOUT),))

    def params(self):
        return {"size": f"{self.size // MIB}m", "loops": str(self.loops)}


@dataclass(frozen=True)
class StressCpu(FaultSpec):
    """Spin `workers` CPU hogs for `duration` seconds."""

    workers: int
    duration: int  # seconds

    name = "stress-cpu"
    scope = frozenset({VM, NODE})
    has_revert = True

    def check(self):
        _positive(self.workers, "workers")
        _positive(self.duration, "duration")

    def tools(self):
        return [osprobe.TOOLS["stress"]]

    def build_plan(self, profile):
        return CommandPlan((
            PlanStep(f"stress --cpu {self.workers} --timeout {self.duration}s",
                     PHASE_INJECT, self.duration + DURATION_GRACE),
            PlanStep("pkill -f stress", PHASE_REVERT, REVERT_TIMEOUT,
                     ok_exit_codes=frozenset({0, 1})),
        ))


@dataclass(frozen=True)
class StressDiskIO(FaultSpec):
    """Hammer the disk with `workers` write/unlink loops for `duration` seconds."""

    workers: int
    bytes_per_worker: int
    duration: int

    name = "stress-disk-io"
    scope = frozenset({VM})
    has_revert = True

    def check(self):
        _positive(self.workers, "workers")
        _positive(self.bytes_per_worker, "bytes_per_worker")
        _positive(self.duration, "duration")

    def tools(self):
        return [osprobe.TOOLS["stress"]]

    def build_plan(self, profile):
        command = (f"stress --hdd {self.workers} --hdd-bytes {self.bytes_per_worker}"
                   f" --timeout {self.duration}s")
        return CommandPlan((
            PlanStep(command, PHASE_INJECT, self.duration + DURATION_GRACE),
            PlanStep("pkill -f stress", PHASE_REVERT, REVERT_TIMEOUT,
                     ok_exit_codes=frozenset({0, 1})),
        ))

    def params(self):
        return {"workers": str(self.workers),
                "bytes_per_worker": str(self.bytes_per_worker),
                "duration": str(self.duration)}


@dataclass(frozen=True)
class StressNet(FaultSpec):
    """Saturate bandwidth toward `peer` at `rate` bits/s for `duration` seconds.

    Needs a counterpart listening on the peer; `fit serve-iperf-peer`
    starts one.
    """

    peer: str   # traffic counterpart host
    rate: int   # bits per second
    duration: int

    name = "stress-net"
    scope = frozenset({VM, NODE})
    has_revert = True

    def check(self):
        _identifier(self.peer, "peer")
        _positive(self.rate, "rate")
        _positive(self.duration, "duration")

    def tools(self):
        return [osprobe.TOOLS["iperf"]]

    def build_plan(self, profile):
        command = f"iperf -c {self.peer} -t {self.duration} -b {self.rate}"
        return CommandPlan((
            PlanStep(command, PHASE_INJECT, self.duration + DURATION_GRACE),
            PlanStep("pkill -f iperf", PHASE_REVERT, REVERT_TIMEOUT,
                     ok_exit_codes=frozenset({0, 1})),
        ))


@dataclass(frozen=True)
class Shutdown(FaultSpec):
    """Power the target off after `delay` seconds; revert cancels while pending."""

    delay: int  # seconds; rounded up to whole minutes for shutdown(8)

    name = "shutdown"
    scope = frozenset({VM, NODE})
    has_revert = True

    def check(self):
        _positive(self.delay, "delay")

    def build_plan(self, profile):
        minutes = math.ceil(self.delay / 60)
        return CommandPlan((
            PlanStep(f"shutdown -h +{minutes}", PHASE_INJECT, SHORT_TIMEOUT,
                     privileged=True),
            PlanStep("shutdown -c", PHASE_REVERT, REVERT_TIMEOUT, privileged=True,
                     ok_exit_codes=frozenset({0, 1})),
        ))


@dataclass(frozen=True)
class StopService(FaultSpec):
    """Stop a named service; revert starts it again.

    The plan works on both init families: a probe asserts some service
    manager exists, and the inject/revert commands branch on systemctl at
    run time so the plan itself stays identical across profiles.
    """

    service_name: str

    name = "stop-service"
    scope = frozenset({VM})
    has_revert = True

    def check(self):
        _identifier(self.service_name, "service_name")

    def tools(self):
        return [osprobe.TOOLS["service-manager"]]

    def build_plan(self, profile):
        name = self.service_name
        stop = (f"if command -v systemctl >/dev/null 2>&1; "
                f"then systemctl stop {name}; else service {name} stop; fi")
        start = (f"if command -v systemctl >/dev/null 2>&1; "
                 f"then systemctl start {name}; else service {name} start; fi")
        return CommandPlan((
            PlanStep("command -v systemctl || command -v service", PHASE_PROBE,
                     PROBE_TIMEOUT),
            PlanStep(stop, PHASE_INJECT, SHORT_TIMEOUT, privileged=True),
            PlanStep(start, PHASE_REVERT, REVERT_TIMEOUT, privileged=True),
        ))


@dataclass(frozen=True)
class BlockExternalAccess(FaultSpec):
    """Drop all traffic except SSH and established connections.

    Every rule lives in a dedicated chain so the revert removes exactly
    what the inject added; established connections stay exempt so the
    control channel survives its own fault.
    """

    name = "block-external-access"
    scope = frozenset({VM})
    has_revert = True

    def check(self):
        pass

    def tools(self):
        return [osprobe.TOOLS["iptables"]]

    def build_plan(self, profile):
        chain = BLOCK_CHAIN
        inject = [
            f"iptables -N {chain}",
            f"iptables -A {chain} -m state --state ESTABLISHED,RELATED -j ACCEPT",
            f"iptables -A {chain} -p tcp --dport {SSH_PORT} -j ACCEPT",
            f"iptables -A {chain} -p tcp --sport {SSH_PORT} -j ACCEPT",
            f"iptables -A {chain} -j DROP",
            f"iptables -I INPUT 1 -j {chain}",
            f"iptables -I OUTPUT 1 -j {chain}",
        ]
        revert = [
            f"iptables -D INPUT -j {chain}",
            f"iptables -D OUTPUT -j {chain}",
            f"iptables -F {chain}",
            f"iptables -X {chain}",
        ]
        steps = [PlanStep(c, PHASE_INJECT, SHORT_TIMEOUT, privileged=True)
                 for c in inject]
        steps += [PlanStep(c, PHASE_REVERT, REVERT_TIMEOUT, privileged=True)
                  for c in revert]
        return CommandPlan(tuple(steps))

    def params(self):
        return {}


@dataclass(frozen=True)
class KillRandomVM(FaultSpec):
    """Shut down one VM drawn uniformly from an endpoint pool.

    Selection happens in the campaign layer; asking this variant for a
    command plan raises SelectionRequired, and the chosen target then
    receives a plain Shutdown plan.
    """

    pool: tuple[Endpoint, ...]
    seed: int | None = None

    name = "kill-random-vm"
    scope = frozenset({VM})
    has_revert = True  # resolves to Shutdown

    def check(self):
        if not self.pool:
            raise InvalidParameter("pool must not be empty")
        for member in self.pool:
            if not isinstance(member, Endpoint):
                raise InvalidParameter("pool entries must be endpoints")

    def build_plan(self, profile):
        raise SelectionRequired(
            f"{self.name} picks its target at campaign time; no per-target plan")

    def params(self):
        return {"pool": ",".join(e.label for e in self.pool),
                "seed": "" if self.seed is None else str(self.seed)}


@dataclass(frozen=True)
class KillRandomFromWhitelist(FaultSpec):
    """Shut down one VM drawn from an operator-provided whitelist file."""

    whitelist_path: str
    seed: int | None = None

    name = "kill-random-whitelist"
    scope = frozenset({VM})
    has_revert = True

    def check(self):
        if not isinstance(self.whitelist_path, str) or not self.whitelist_path:
            raise InvalidParameter("whitelist_path must be a file path")

    def build_plan(self, profile):
        raise SelectionRequired(
            f"{self.name} picks its target at campaign time; no per-target plan")

    def params(self):
        return {"whitelist_path": self.whitelist_path,
                "seed": "" if self.seed is None else str(self.seed)}


@dataclass(frozen=True)
class WorkloadYCSB(FaultSpec):
    """Load and run a YCSB workload against the MongoDB on the target.

    The binaries are never package-installed; the operator stages them
    under `install_root`.
    """

    install_root: str
    workload_name: str = "workloada"
    record_count: int = 1000
    operation_count: int = 1000

    name = "workload-ycsb"
    scope = frozenset({VM})

    def check(self):
        _remote_path(self.install_root, "install_root")
        _identifier(self.workload_name, "workload_name")
        _positive(self.record_count, "record_count")
        _positive(self.operation_count, "operation_count")

    def tools(self):
        tool = osprobe.TOOLS["ycsb"]
        probe = f"test -x {self.install_root}/bin/ycsb"
        return [ToolId(tool.name, tool.package_name_by_family, probe)]

    def build_plan(self, profile):
        base = (f"{self.install_root}/bin/ycsb {{verb}} mongodb"
                f" -P {self.install_root}/workloads/{self.workload_name}"
                f" -p recordcount={self.record_count}"
                f" -p operationcount={self.operation_count}")
        return CommandPlan((
            PlanStep(base.format(verb="load"), PHASE_INJECT, LONG_TIMEOUT),
            PlanStep(base.format(verb="run"), PHASE_INJECT, LONG_TIMEOUT),
        ))


@dataclass(frozen=True)
class WorkloadJMeter(FaultSpec):
    """Ship a local JMeter plan to the target and run it non-interactively."""

    install_root: str
    plan: str  # local plan file; treated as opaque bytes

    name = "workload-jmeter"
    scope = frozenset({VM})

    def check(self):
        _remote_path(self.install_root, "install_root")
        if not isinstance(self.plan, str) or not self.plan:
            raise InvalidParameter("plan must be a local file path")
        if any(c.isspace() for c in posixpath.basename(self.plan)) \
                or not posixpath.basename(self.plan):
            raise InvalidParameter("plan file name must be non-empty without whitespace")

    def tools(self):
        tool = osprobe.TOOLS["jmeter"]
        probe = f"test -x {self.install_root}/bin/jmeter"
        return [ToolId(tool.name, tool.package_name_by_family, probe)]

    def remote_plan_path(self) -> str:
        return f"/tmp/{posixpath.basename(self.plan)}"

    def uploads(self):
        return [(self.plan, self.remote_plan_path())]

    def build_plan(self, profile):
        command = f"{self.install_root}/bin/jmeter -n -t {self.remote_plan_path()}"
        return CommandPlan((PlanStep(command, PHASE_INJECT, LONG_TIMEOUT),))


FAULT_TYPES: dict[str, type] = {cls.name: cls for cls in (
    StressMem, StressCpu, StressDiskIO, StressNet, Shutdown, StopService,
    BlockExternalAccess, KillRandomVM, KillRandomFromWhitelist,
    WorkloadYCSB, WorkloadJMeter,
)}

_PARSERS = {
    "size": lambda v: parse_size(v, "size"),
    "loops": int,
    "workers": int,
    "duration": int,
    "bytes_per_worker": lambda v: parse_size(v, "bytes_per_worker"),
    "peer": str,
    "rate": int,
    "delay": int,
    "service_name": str,
    "install_root": str,
    "workload_name": str,
    "record_count": int,
    "operation_count": int,
    "plan": str,
    "whitelist_path": str,
    "seed": int,
}


def build_fault(name: str, params: dict[str, str]) -> FaultSpec:
    """Construct and check a fault from string parameters (CLI/scenario).

    kill-random-vm is excluded: its pool is endpoint objects resolved from
    an inventory, which the caller owns.
    """
    cls = FAULT_TYPES.get(name)
    if cls is None:
        raise UnknownFault(f"unknown fault {name!r}")
    if cls is KillRandomVM:
        raise InvalidParameter(
            "kill-random-vm is built from an inventory pool, not key=value parameters")
    allowed = {f.name for f in dataclass_fields(cls)}
    kwargs = {}
    for key, raw in params.items():
        if key not in allowed:
            raise InvalidParameter(f"unknown parameter {key!r} for {name}")
        try:
            kwargs[key] = _PARSERS[key](raw)
        except InvalidParameter:
            raise
        except (TypeError, ValueError):
            raise InvalidParameter(f"{key}: cannot parse {raw!r}") from None
    required = {f.name for f in dataclass_fields(cls) if f.default is MISSING}
    missing = sorted(required - set(kwargs))
    if missing:
        raise InvalidParameter(f"{name} is missing parameters: {', '.join(missing)}")
    spec = cls(**kwargs)
    spec.check()
    return spec


def validate(spec: FaultSpec, target: Endpoint) -> None:
    """Parameter invariants plus the variant's target-class scope."""
    spec.check()
    if target.target_class not in spec.scope:
        raise ScopeMismatch(
            f"{spec.name} applies to {'/'.join(sorted(spec.scope))} targets,"
            f" not {target.target_class}")


def required_tools(spec: FaultSpec) -> list[ToolId]:
    spec.check()
    return spec.tools()


def command_plan(spec: FaultSpec, profile: OSProfile) -> CommandPlan:
    spec.check()
    if profile.family == osprobe.UNKNOWN:
        raise UnsupportedOS(f"cannot plan {spec.name} for an unknown OS family")
    plan = spec.build_plan(profile)
    if not plan.phase_steps(PHASE_INJECT):
        raise ValueError(f"{spec.name} produced a plan without inject steps")
    return plan


def revert_plan(spec: FaultSpec, profile: OSProfile) -> CommandPlan:
    """The independently runnable cleanup subset of the full plan."""
    return CommandPlan(command_plan(spec, profile).phase_steps(PHASE_REVERT))


def uploads_for(spec: FaultSpec) -> list[tuple[str, str]]:
    return spec.uploads()
