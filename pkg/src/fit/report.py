"""Structured campaign results: JSON/text rendering and exit-code policy.

The JSON document (schema version "1") is the machine interface: stable
key order, RFC 3339 UTC timestamps, verbatim command transcripts. The
text rendering is for humans and deliberately not a stable format.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone

SCHEMA_VERSION = "1"

STATUS_SUCCESS = "success"
STATUS_FAILED = "failed"
STATUS_SKIPPED = "skipped"
STATUS_REVERTED = "reverted"
STATUS_REVERT_FAILED = "revert-failed"
STATUSES = (STATUS_SUCCESS, STATUS_FAILED, STATUS_SKIPPED,
            STATUS_REVERTED, STATUS_REVERT_FAILED)

OUTCOME_OK = "ok"
OUTCOME_FAILED = "failed"
OUTCOME_TIMEOUT = "timeout"
OUTCOME_ERROR = "error"

# per-command transcript cap; runaway stressors must not balloon reports
OUTPUT_CAP_BYTES = 64 * 1024
TRUNCATION_MARKER = "\n[truncated]"
STDERR_EXCERPT_BYTES = 500


def cap_output(data: bytes) -> str:
    if len(data) > OUTPUT_CAP_BYTES:
        return data[:OUTPUT_CAP_BYTES].decode(errors="replace") + TRUNCATION_MARKER
    return data.decode(errors="replace")


@dataclass
class PhaseOutcome:
    phase: str
    command: str
    exit_code: int
    duration_ms: int
    status: str  # ok | failed | timeout | error
    stdout: str = ""
    stderr: str = ""


@dataclass
class StepReport:
    index: int
    endpoint: str
    fault: str
    status: str
    outcomes: list[PhaseOutcome] = field(default_factory=list)
    error: str = ""
    duration_ms: int = 0


@dataclass
class RunReport:
    scenario: str
    started_at: datetime
    wall_clock_seconds: float
    steps: list[StepReport]

    def summary(self) -> dict[str, int]:
        counts = {status: 0 for status in STATUSES}
        for step in self.steps:
            counts[step.status] += 1
        return counts


def _rfc3339(moment: datetime) -> str:
    return moment.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def render_json(report: RunReport) -> bytes:
    document = {
        "schema_version": SCHEMA_VERSION,
        "scenario": report.scenario,
        "started_at": _rfc3339(report.started_at),
        "wall_clock_seconds": round(report.wall_clock_seconds, 3),
        "summary": report.summary(),
        "steps": [
            {
                "index": step.index,
                "endpoint": step.endpoint,
                "fault": step.fault,
                "status": step.status,
                "error": step.error,
                "duration_ms": step.duration_ms,
                "phases": [
                    {
                        "phase": outcome.phase,
                        "command": outcome.command,
                        "exit_code": outcome.exit_code,
                        "duration_ms": outcome.duration_ms,
                        "status": outcome.status,
                        "stdout": outcome.stdout,
                        "stderr": outcome.stderr,
                    }
                    for outcome in step.outcomes
                ],
            }
            for step in report.steps
        ],
    }
    return (json.dumps(document, sort_keys=True, indent=2) + "\n").encode()


_TEXT_LABELS = {
    STATUS_SUCCESS: "OK",
    STATUS_FAILED: "FAILED",
    STATUS_SKIPPED: "SKIPPED",
    STATUS_REVERTED: "REVERTED",
    STATUS_REVERT_FAILED: "REVERT-FAILED",
}


def _last_stderr(step: StepReport) -> str:
    for outcome in reversed(step.outcomes):
        if outcome.stderr.strip():
            return outcome.stderr.strip()
    return step.error


def render_text(report: RunReport) -> str:
    lines = []
    for step in report.steps:
        seconds = step.duration_ms / 1000.0
        lines.append(f"{_TEXT_LABELS[step.status]:<13} {step.endpoint:<24}"
                     f" {step.fault:<22} {seconds:.1f}s")
        if step.status in (STATUS_FAILED, STATUS_REVERT_FAILED):
            excerpt = _last_stderr(step).encode()[:STDERR_EXCERPT_BYTES]
            lines.append(f"    {excerpt.decode(errors='replace')}")
    counts = report.summary()
    lines.append(f"{len(report.steps)} steps: {counts[STATUS_SUCCESS]} ok,"
                 f" {counts[STATUS_REVERTED]} reverted,"
                 f" {counts[STATUS_FAILED]} failed,"
                 f" {counts[STATUS_SKIPPED]} skipped,"
                 f" {counts[STATUS_REVERT_FAILED]} revert-failed"
                 f" ({report.wall_clock_seconds:.1f}s)")
    return "\n".join(lines) + "\n"


def exit_code(report: RunReport) -> int:
    """0 when every step succeeded or reverted cleanly; 1 on failures;
    2 when any revert failed (dominates). 3 is reserved for preflight
    failures, which happen before a report exists."""
    statuses = [step.status for step in report.steps]
    if STATUS_REVERT_FAILED in statuses:
        return 2
    if all(s in (STATUS_SUCCESS, STATUS_REVERTED) for s in statuses):
        return 0
    return 1
