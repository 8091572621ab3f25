"""OS detection and check-before-install tool provisioning.

The probe reads /etc/os-release (falling back to /etc/redhat-release) and
binds the detected family to its package manager. Tools are installed
only when a presence check says they are missing, and every install ends
with a re-check, so a target never accumulates packages it already had.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .errors import InstallFailed, NotInstallable, UnsupportedOS
from .plans import (
    DEFAULT_ESCALATION,
    PHASE_PROBE,
    PHASE_PROVISION,
    CommandPlan,
    PlanStep,
    realized_command,
)
from .transport import ExecResult, Session

UBUNTU = "ubuntu"
CENTOS = "centos"
UNKNOWN = "unknown"

PACKAGE_MANAGERS = {UBUNTU: "apt", CENTOS: "yum", UNKNOWN: "none"}

OS_RELEASE_PROBE = "cat /etc/os-release"
REDHAT_RELEASE_PROBE = "cat /etc/redhat-release"
PROBE_TIMEOUT = 10.0
INSTALL_TIMEOUT = 600.0

# observer(phase, issued_command, result) lets the orchestrator collect
# per-command outcomes without the probe layer knowing about reports.
Observer = Callable[[str, str, ExecResult], None]


@dataclass(frozen=True)
class OSProfile:
    family: str
    version: str = ""
    package_manager: str = ""

    def __post_init__(self):
        if self.family not in PACKAGE_MANAGERS:
            raise ValueError(f"unknown OS family {self.family!r}")
        expected = PACKAGE_MANAGERS[self.family]
        if not self.package_manager:
            object.__setattr__(self, "package_manager", expected)
        elif self.package_manager != expected:
            raise ValueError(
                f"{self.family} binds to {expected}, not {self.package_manager}")


@dataclass(frozen=True)
class ToolId:
    """A stress/fault tool and how to find and install it per OS family.

    An empty package map means the tool cannot be installed from distro
    repositories and must be preinstalled or staged by the operator.
    """

    name: str
    package_name_by_family: Mapping[str, str] = field(default_factory=dict)
    probe_command: str = ""

    def __post_init__(self):
        if not self.probe_command:
            object.__setattr__(self, "probe_command", f"command -v {self.name}")


TOOLS: dict[str, ToolId] = {
    "memtester": ToolId("memtester", {UBUNTU: "memtester", CENTOS: "memtester"}),
    "stress": ToolId("stress", {UBUNTU: "stress", CENTOS: "stress"}),
    # centos package assumes the target's repos (EPEL) are already configured
    "iperf": ToolId("iperf", {UBUNTU: "iperf", CENTOS: "iperf"}),
    "iptables": ToolId("iptables", {UBUNTU: "iptables", CENTOS: "iptables"}),
    "service-manager": ToolId(
        "service-manager", {}, probe_command="command -v systemctl || command -v service"),
    "ycsb": ToolId("ycsb", {}),
    "jmeter": ToolId("jmeter", {}),
}

ALREADY_PRESENT = "already-present"
INSTALLED = "installed"
FAILED = "failed"


@dataclass(frozen=True)
class ProvisionOutcome:
    tool: ToolId
    action: str  # already-present | installed | failed
    detail: str = ""


def _parse_os_release(text: str) -> tuple[str, str]:
    fields: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip().strip('"').strip("'")
    distro = fields.get("ID", "").lower()
    version = fields.get("VERSION_ID", "")
    if distro in (UBUNTU, CENTOS):
        return distro, version
    return UNKNOWN, ""


def _parse_redhat_release(text: str) -> tuple[str, str]:
    first = text.strip().splitlines()[0] if text.strip() else ""
    if "centos" not in first.lower():
        return UNKNOWN, ""
    match = re.search(r"release\s+(\d+(?:\.\d+)*)", first, re.IGNORECASE)
    return CENTOS, match.group(1) if match else ""


def detect_os(session: Session, *, observer: Observer | None = None) -> OSProfile:
    """Probe the target's OS; unparseable targets come back as unknown.

    Only transport failures propagate; a failed or garbled probe yields
    the unknown profile so callers can reject it at validation time.
    """
    result = session.exec(OS_RELEASE_PROBE, PROBE_TIMEOUT)
    if observer:
        observer(PHASE_PROBE, OS_RELEASE_PROBE, result)
    if result.ok:
        family, version = _parse_os_release(result.stdout.decode(errors="replace"))
        if family != UNKNOWN:
            return OSProfile(family, version)

    result = session.exec(REDHAT_RELEASE_PROBE, PROBE_TIMEOUT)
    if observer:
        observer(PHASE_PROBE, REDHAT_RELEASE_PROBE, result)
    if result.ok:
        family, version = _parse_redhat_release(result.stdout.decode(errors="replace"))
        if family != UNKNOWN:
            return OSProfile(family, version)
    return OSProfile(UNKNOWN)


def tool_installed(session: Session, tool: ToolId,
                   *, observer: Observer | None = None) -> bool:
    result = session.exec(tool.probe_command, PROBE_TIMEOUT)
    if observer:
        observer(PHASE_PROBE, tool.probe_command, result)
    return result.ok


def install_plan(profile: OSProfile, tool: ToolId) -> CommandPlan:
    """Non-interactive install commands for the profile's package manager,
    ending with a presence re-check."""
    if profile.family == UNKNOWN:
        raise UnsupportedOS("cannot install on an unknown OS family")
    package = tool.package_name_by_family.get(profile.family, "")
    if not package:
        raise NotInstallable(
            f"{tool.name} has no {profile.family} package; it must be staged on the target")
    if profile.package_manager == "apt":
        installs = [
            PlanStep("apt-get update", PHASE_PROVISION, INSTALL_TIMEOUT, privileged=True),
            PlanStep(f"apt-get install -y {package}", PHASE_PROVISION,
                     INSTALL_TIMEOUT, privileged=True),
        ]
    else:
        installs = [
            PlanStep(f"yum install -y {package}", PHASE_PROVISION,
                     INSTALL_TIMEOUT, privileged=True),
        ]
    recheck = PlanStep(tool.probe_command, PHASE_PROVISION, PROBE_TIMEOUT)
    return CommandPlan(tuple(installs) + (recheck,))


def ensure_tool(session: Session, profile: OSProfile, tool: ToolId, *,
                escalation_prefix: str = DEFAULT_ESCALATION,
                observer: Observer | None = None) -> ProvisionOutcome:
    """Install a tool only if its presence check fails; idempotent.

    Returns already-present without issuing a single install command when
    the probe finds the tool. Otherwise runs the install plan and trusts
    the final re-check: if the tool is still absent, raises InstallFailed
    with the failed outcome attached.
    """
    if tool_installed(session, tool, observer=observer):
        return ProvisionOutcome(tool, ALREADY_PRESENT)

    plan = install_plan(profile, tool)
    last: ExecResult | None = None
    detail = ""
    for step in plan.steps:
        command = realized_command(step, escalation_prefix)
        last = session.exec(command, step.timeout)
        if observer:
            observer(step.phase, command, last)
        if last.stderr:
            detail = last.stderr.decode(errors="replace").strip()
    if last is not None and last.ok:
        return ProvisionOutcome(tool, INSTALLED, detail)
    raise InstallFailed(
        f"{tool.name} still absent after install",
        outcome=ProvisionOutcome(tool, FAILED, detail),
    )
