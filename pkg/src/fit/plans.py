"""Phased remote-command plans.

A plan is an ordered list of shell commands, each tagged with a phase
(probe, provision, inject, revert), a timeout, a privilege flag and the
exit codes that count as success. Plans are pure data: privilege
escalation is applied at execution time so the same plan is valid on any
target.
"""
from __future__ import annotations

import shlex
from dataclasses import dataclass

PHASE_PROBE = "probe"
PHASE_PROVISION = "provision"
PHASE_INJECT = "inject"
PHASE_REVERT = "revert"
PHASES = (PHASE_PROBE, PHASE_PROVISION, PHASE_INJECT, PHASE_REVERT)

DEFAULT_ESCALATION = "sudo -n"

# Characters that force a privileged command through `sh -c`: the
# escalation binary cannot run compound statements or shell builtins.
_SHELL_CHARS = set(";|&<>$`(){}\n'\"*?[]#~\\")


@dataclass(frozen=True)
class PlanStep:
    command: str
    phase: str
    timeout: float = 60.0
    privileged: bool = False
    ok_exit_codes: frozenset[int] = frozenset({0})

    def __post_init__(self):
        if not self.command:
            raise ValueError("plan step command must be non-empty")
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.timeout <= 0:
            raise ValueError("plan step timeout must be positive")

    def accepts(self, exit_code: int) -> bool:
        return exit_code in self.ok_exit_codes


@dataclass(frozen=True)
class CommandPlan:
    """Steps whose phases appear in probe, provision, inject, revert order."""

    steps: tuple[PlanStep, ...] = ()

    def __post_init__(self):
        order = [PHASES.index(s.phase) for s in self.steps]
        if order != sorted(order):
            raise ValueError("plan phases out of order (probe, provision, inject, revert)")

    @property
    def has_revert(self) -> bool:
        return any(s.phase == PHASE_REVERT for s in self.steps)

    def phase_steps(self, phase: str) -> tuple[PlanStep, ...]:
        return tuple(s for s in self.steps if s.phase == phase)


def realized_command(step: PlanStep, escalation_prefix: str = DEFAULT_ESCALATION) -> str:
    """The command string actually issued for a step.

    Unprivileged steps run verbatim. Privileged ones get the escalation
    prefix; compound commands are additionally wrapped in `sh -c` because
    sudo and friends only accept a single program.
    """
    if not step.privileged or not escalation_prefix:
        return step.command
    if _SHELL_CHARS & set(step.command):
        return f"{escalation_prefix} sh -c {shlex.quote(step.command)}"
    return f"{escalation_prefix} {step.command}"
