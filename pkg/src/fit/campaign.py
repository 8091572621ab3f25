"""Scenario parsing, target selection and campaign orchestration.

A campaign resolves every selector up front (failing fast before any
command is issued), then runs steps with bounded parallelism. Each step
walks the same pipeline the single-fault mode uses: connect, detect the
OS, provision missing tools, inject, optionally hold, then revert. In
campaign mode every stateful fault is reverted before the run ends, on
the success path and on abort/failure paths alike.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from . import faults, osprobe
from .errors import (
    EmptyPool,
    FitError,
    InvalidField,
    NotInstallable,
    PreflightFailed,
    ScenarioSyntaxError,
    TransportError,
    UnknownFault,
    UnknownLabel,
    WhitelistUnreadable,
)
from .osprobe import OSProfile
from .plans import (
    DEFAULT_ESCALATION,
    PHASE_INJECT,
    PHASE_PROBE,
    PHASE_PROVISION,
    PHASE_REVERT,
    realized_command,
)
from .report import (
    OUTCOME_ERROR,
    OUTCOME_FAILED,
    OUTCOME_OK,
    OUTCOME_TIMEOUT,
    STATUS_FAILED,
    STATUS_REVERT_FAILED,
    STATUS_REVERTED,
    STATUS_SKIPPED,
    STATUS_SUCCESS,
    PhaseOutcome,
    RunReport,
    StepReport,
    cap_output,
)
from .rng import SplitMix64
from .transport import Auth, Endpoint, ExecResult

SCHEDULER_GRANULARITY = 0.1  # seconds


# --- selectors and scenario model ---------------------------------------


@dataclass(frozen=True)
class NamedSelector:
    label: str


@dataclass(frozen=True)
class RandomFromSelector:
    labels: tuple[str, ...]


@dataclass(frozen=True)
class WhitelistSelector:
    path: str


Selector = NamedSelector | RandomFromSelector | WhitelistSelector


@dataclass(frozen=True)
class Step:
    selector: Selector
    fault: faults.FaultSpec
    start_offset: float = 0.0
    hold: float | None = None

    def __post_init__(self):
        if self.start_offset < 0:
            raise ValueError("start_offset must be >= 0")
        if self.hold is not None and self.hold <= 0:
            raise ValueError("hold must be > 0 when present")


@dataclass(frozen=True)
class Scenario:
    name: str
    steps: tuple[Step, ...]
    parallelism: int = 1
    seed: int | None = None

    def __post_init__(self):
        if not self.steps:
            raise ValueError("scenario needs at least one step")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


@dataclass
class CampaignOptions:
    escalation_prefix: str = DEFAULT_ESCALATION
    connect_timeout: float = 10.0
    abort_event: threading.Event | None = None
    force_event: threading.Event | None = None
    default_auth: Auth | None = None  # for whitelist user@host entries
    hold: float | None = None
    always_revert: bool = False  # campaign mode reverts every stateful fault


# --- strict line-oriented parsing ----------------------------------------


def _decode(data: bytes | str) -> str:
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ScenarioSyntaxError(f"not valid UTF-8: {exc}") from exc


def _parse_blocks(text: str, block_token: str,
                  header_keys: frozenset[str], block_keys: frozenset[str]):
    """(headers, blocks) from `key = value` lines and [token] sections.

    Unknown keys, duplicate keys and stray lines are errors naming the line.
    """
    headers: dict[str, tuple[str, int]] = {}
    blocks: list[dict[str, tuple[str, int]]] = []
    current: dict[str, tuple[str, int]] | None = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == block_token:
            current = {}
            blocks.append(current)
            continue
        if line.startswith("["):
            raise ScenarioSyntaxError(f"line {number}: unknown section {line!r}")
        if "=" not in line:
            raise ScenarioSyntaxError(f"line {number}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        target, allowed, where = (
            (current, block_keys, block_token) if current is not None
            else (headers, header_keys, "header"))
        if key not in allowed:
            raise InvalidField(f"line {number}: unknown {where} field {key!r}")
        if key in target:
            raise InvalidField(f"line {number}: duplicate field {key!r}")
        target[key] = (value, number)
    return headers, blocks


def _int_field(fields, key: str, default: int, *, minimum: int | None = None) -> int:
    if key not in fields:
        return default
    value, line = fields[key]
    try:
        parsed = int(value)
    except ValueError:
        raise InvalidField(f"line {line}: {key} must be an integer") from None
    if minimum is not None and parsed < minimum:
        raise InvalidField(f"line {line}: {key} must be >= {minimum}")
    return parsed


def parse_selector(text: str) -> Selector:
    text = text.strip()
    if text.startswith("random-from-whitelist(") and text.endswith(")"):
        path = text[len("random-from-whitelist("):-1].strip()
        if not path:
            raise InvalidField("random-from-whitelist needs a file path")
        return WhitelistSelector(path)
    if text.startswith("random-from(") and text.endswith(")"):
        inner = text[len("random-from("):-1]
        labels = tuple(part.strip() for part in inner.split(","))
        if not labels or any(not label for label in labels):
            raise InvalidField("random-from needs a non-empty label list")
        return RandomFromSelector(labels)
    if not text or "(" in text or ")" in text:
        raise InvalidField(f"cannot parse selector {text!r}")
    return NamedSelector(text)


def _parse_params(value: str, line: int) -> dict[str, str]:
    params: dict[str, str] = {}
    if not value:
        return params
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise InvalidField(f"line {line}: params entry {part!r} is not key=value")
        key, _, raw = part.partition("=")
        params[key.strip()] = raw.strip()
    return params


_SCENARIO_HEADERS = frozenset({"name", "parallelism", "seed"})
_STEP_KEYS = frozenset({"selector", "fault", "params", "start_offset", "hold"})


def parse_scenario(data: bytes | str) -> Scenario:
    """Strict scenario parser; every error names the offending line/field."""
    text = _decode(data)
    headers, blocks = _parse_blocks(text, "[step]", _SCENARIO_HEADERS, _STEP_KEYS)
    if not blocks:
        raise ScenarioSyntaxError("scenario has no [step] blocks")

    name = headers.get("name", ("scenario", 0))[0]
    parallelism = _int_field(headers, "parallelism", 1, minimum=1)
    seed = _int_field(headers, "seed", None) if "seed" in headers else None

    steps = []
    for block in blocks:
        for required in ("selector", "fault"):
            if required not in block:
                raise InvalidField(f"[step] block is missing {required!r}")
        selector_value, selector_line = block["selector"]
        try:
            selector = parse_selector(selector_value)
        except InvalidField as exc:
            raise InvalidField(f"line {selector_line}: {exc}") from None

        fault_name, fault_line = block["fault"]
        if fault_name in ("kill-random-vm", "kill-random-whitelist"):
            raise InvalidField(
                f"line {fault_line}: use a random selector with fault = shutdown"
                f" instead of {fault_name}")
        params_value, params_line = block.get("params", ("", fault_line))
        params = _parse_params(params_value, params_line)
        try:
            fault = faults.build_fault(fault_name, params)
        except UnknownFault:
            raise UnknownFault(f"line {fault_line}: unknown fault {fault_name!r}") from None
        except FitError as exc:
            raise InvalidField(f"line {params_line}: {exc}") from None

        start_offset = 0.0
        if "start_offset" in block:
            value, line = block["start_offset"]
            try:
                start_offset = float(value)
            except ValueError:
                raise InvalidField(f"line {line}: start_offset must be a number") from None
            if start_offset < 0:
                raise InvalidField(f"line {line}: start_offset must be >= 0")

        hold = None
        if "hold" in block:
            value, line = block["hold"]
            try:
                hold = float(value)
            except ValueError:
                raise InvalidField(f"line {line}: hold must be a number") from None
            if hold <= 0:
                raise InvalidField(f"line {line}: hold must be > 0")
            if not fault.has_revert:
                raise InvalidField(
                    f"line {line}: hold is invalid for {fault_name} (no revert phase)")

        steps.append(Step(selector, fault, start_offset, hold))
    return Scenario(name, tuple(steps), parallelism, seed)


_ENDPOINT_KEYS = frozenset({"label", "host", "port", "username", "key", "class"})


def parse_inventory(data: bytes | str) -> dict[str, Endpoint]:
    """[endpoint] blocks with label/host/port/username/key/class fields."""
    text = _decode(data)
    headers, blocks = _parse_blocks(text, "[endpoint]", frozenset(), _ENDPOINT_KEYS)
    if headers:
        raise ScenarioSyntaxError("inventory fields must live in [endpoint] blocks")
    inventory: dict[str, Endpoint] = {}
    for block in blocks:
        for required in ("label", "host", "username"):
            if required not in block:
                raise InvalidField(f"[endpoint] block is missing {required!r}")
        label, label_line = block["label"]
        if label in inventory:
            raise InvalidField(f"line {label_line}: duplicate endpoint label {label!r}")
        port = _int_field(block, "port", 22)
        target_class = block.get("class", ("vm", 0))[0]
        auth = Auth.key(block["key"][0]) if "key" in block else Auth.agent()
        try:
            endpoint = Endpoint(
                host=block["host"][0], username=block["username"][0],
                auth=auth, port=port, label=label, target_class=target_class)
        except ValueError as exc:
            raise InvalidField(f"endpoint {label!r}: {exc}") from None
        inventory[label] = endpoint
    return inventory


def parse_whitelist(text: str) -> list[str]:
    entries = []
    for raw in text.splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            entries.append(line)
    return entries


def _read_whitelist(path: str) -> list[str]:
    try:
        return parse_whitelist(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise WhitelistUnreadable(f"cannot read whitelist {path}: {exc}") from exc


def resolve_whitelist_entry(entry: str, inventory: dict[str, Endpoint],
                            default_auth: Auth | None = None) -> Endpoint:
    if entry in inventory:
        return inventory[entry]
    if "@" in entry:
        username, _, host = entry.partition("@")
        if username and host:
            return Endpoint(host=host, username=username,
                            auth=default_auth or Auth.agent(), label=entry)
    raise UnknownLabel(
        f"whitelist entry {entry!r} is neither an inventory label nor user@host")


def select_target(selector: Selector, inventory: dict[str, Endpoint],
                  rng: SplitMix64, *, default_auth: Auth | None = None) -> Endpoint:
    """Resolve a selector; random forms draw exactly once from the rng."""
    if isinstance(selector, NamedSelector):
        try:
            return inventory[selector.label]
        except KeyError:
            raise UnknownLabel(f"no endpoint labelled {selector.label!r}") from None
    if isinstance(selector, RandomFromSelector):
        pool = []
        for label in selector.labels:
            if label not in inventory:
                raise UnknownLabel(f"no endpoint labelled {label!r}")
            pool.append(inventory[label])
        if not pool:
            raise EmptyPool("random-from pool is empty")
        return rng.choice(pool)
    if isinstance(selector, WhitelistSelector):
        entries = _read_whitelist(selector.path)
        pool = [resolve_whitelist_entry(e, inventory, default_auth) for e in entries]
        if not pool:
            raise EmptyPool(f"whitelist {selector.path} has no entries")
        return rng.choice(pool)
    raise TypeError(f"unknown selector {selector!r}")


def resolve_kill_random(fault: faults.FaultSpec, inventory: dict[str, Endpoint],
                        *, default_auth: Auth | None = None,
                        ) -> tuple[Endpoint, faults.Shutdown]:
    """Pick the victim for a kill-random fault and hand back the shutdown
    it resolves to."""
    rng = SplitMix64(fault.seed if fault.seed is not None else 0)
    if isinstance(fault, faults.KillRandomVM):
        fault.check()
        pool = list(fault.pool)
    elif isinstance(fault, faults.KillRandomFromWhitelist):
        fault.check()
        entries = _read_whitelist(fault.whitelist_path)
        pool = [resolve_whitelist_entry(e, inventory, default_auth) for e in entries]
    else:
        raise TypeError(f"{fault.name} does not use random selection")
    if not pool:
        raise EmptyPool(f"{fault.name} pool is empty")
    return rng.choice(pool), faults.Shutdown(delay=faults.KILL_RANDOM_DELAY_SECONDS)


# --- execution -----------------------------------------------------------


class _Recorder:
    """Collects per-command outcomes for the step report."""

    def __init__(self):
        self.outcomes: list[PhaseOutcome] = []

    def record(self, phase: str, command: str, result: ExecResult, *,
               ok_codes: frozenset[int] = frozenset({0}),
               informative: bool = False) -> None:
        if result.timed_out:
            status = OUTCOME_TIMEOUT
        elif informative or result.exit_code in ok_codes:
            status = OUTCOME_OK
        else:
            status = OUTCOME_FAILED
        self.outcomes.append(PhaseOutcome(
            phase, command, result.exit_code, result.duration_ms, status,
            cap_output(result.stdout), cap_output(result.stderr)))

    def observer(self, phase: str, command: str, result: ExecResult) -> None:
        # osprobe callback: presence probes are informative either way
        self.record(phase, command, result, informative=(phase == PHASE_PROBE))

    def note(self, phase: str, command: str, status: str, detail: str = "") -> None:
        self.outcomes.append(PhaseOutcome(phase, command, 0, 0, status, "", detail))


def _run_revert(session, plan, fault, options, recorder: _Recorder) -> bool:
    """Run every revert step, even after failures; True when all passed.

    Transport failures while cancelling a shutdown are tolerated: past
    its deadline the target is simply gone.
    """
    all_ok = True
    for step in plan.phase_steps(PHASE_REVERT):
        command = realized_command(step, options.escalation_prefix)
        try:
            result = session.exec(command, step.timeout)
        except (TransportError, FitError) as exc:
            recorder.note(PHASE_REVERT, command, OUTCOME_ERROR, str(exc))
            if isinstance(fault, faults.Shutdown):
                continue
            all_ok = False
            continue
        recorder.record(PHASE_REVERT, command, result, ok_codes=step.ok_exit_codes)
        if result.timed_out or not step.accepts(result.exit_code):
            all_ok = False
    return all_ok


def inject_single(endpoint: Endpoint, fault: faults.FaultSpec, transport,
                  options: CampaignOptions | None = None, *,
                  index: int = 0) -> StepReport:
    """Run one fault end to end and report every command's outcome.

    Pipeline: connect, detect OS, ensure each required tool, upload any
    payloads, run the plan's probe and inject steps, optionally hold,
    then revert. Failures land in the report; only argument validation
    raises past this function.
    """
    faults.validate(fault, endpoint)
    options = options or CampaignOptions()
    recorder = _Recorder()
    abort = options.abort_event
    force = options.force_event
    started = time.monotonic()

    def finish(status: str, error: str = "") -> StepReport:
        return StepReport(index, endpoint.label, fault.name, status,
                          recorder.outcomes, error,
                          int((time.monotonic() - started) * 1000))

    try:
        session = transport.connect(endpoint, options.connect_timeout)
    except (TransportError, FitError) as exc:
        return finish(STATUS_FAILED, f"connect: {exc}")

    plan = None
    injected = False
    inject_ok = True
    revert_ran = False
    revert_ok = True
    skipped = False
    error = ""
    try:
        profile = osprobe.detect_os(session, observer=recorder.observer)
        for tool in faults.required_tools(fault):
            osprobe.ensure_tool(session, profile, tool,
                                escalation_prefix=options.escalation_prefix,
                                observer=recorder.observer)
        plan = faults.command_plan(fault, profile)
        for local, remote in faults.uploads_for(fault):
            content = Path(local).read_bytes()
            session.upload(content, remote)
            recorder.note(PHASE_PROVISION, f"upload {remote}", OUTCOME_OK)

        for step in plan.steps:
            if step.phase == PHASE_REVERT:
                continue
            if force is not None and force.is_set():
                error = error or "force-aborted"
                if not injected:
                    skipped = True
                else:
                    inject_ok = False  # remaining inject steps never ran
                break
            if abort is not None and abort.is_set() and not injected:
                skipped = True
                break
            command = realized_command(step, options.escalation_prefix)
            if step.phase == PHASE_INJECT:
                injected = True
            result = session.exec(command, step.timeout)
            recorder.record(step.phase, command, result, ok_codes=step.ok_exit_codes)
            if result.timed_out or not step.accepts(result.exit_code):
                inject_ok = False
                error = f"{step.phase} command failed: {command}"
                break
            if abort is not None and abort.is_set():
                break

        aborted = abort is not None and abort.is_set()
        if injected and inject_ok and options.hold is not None \
                and plan.has_revert and not aborted:
            if abort is not None:
                abort.wait(options.hold)
                aborted = abort.is_set()
            else:
                time.sleep(options.hold)

        forced = force is not None and force.is_set()
        if injected and plan.has_revert and not forced and (
                options.always_revert or options.hold is not None
                or not inject_ok or aborted):
            revert_ran = True
            revert_ok = _run_revert(session, plan, fault, options, recorder)
    except (FitError, OSError) as exc:
        error = error or str(exc)
        if not injected:
            return finish(STATUS_FAILED, error)
        # crashed mid-inject: the fault may be live, so clean up if we can
        inject_ok = False
        if plan is not None and plan.has_revert \
                and not (force is not None and force.is_set()):
            revert_ran = True
            revert_ok = _run_revert(session, plan, fault, options, recorder)
    finally:
        session.close()

    if skipped and not injected:
        return finish(STATUS_SKIPPED, error or "aborted before inject")
    if revert_ran and not revert_ok:
        return finish(STATUS_REVERT_FAILED, error)
    if not inject_ok:
        return finish(STATUS_FAILED, error)
    if revert_ran:
        return finish(STATUS_REVERTED, error)
    return finish(STATUS_SUCCESS, error)


def run_campaign(scenario: Scenario, inventory: dict[str, Endpoint],
                 transport_factory, options: CampaignOptions | None = None,
                 ) -> RunReport:
    """Execute a scenario with bounded parallelism and guaranteed cleanup.

    Selector resolution, fault validation and whitelist reads all happen
    before the first command (PreflightFailed otherwise). Random draws
    are consumed in step order so reports are reproducible for a given
    seed regardless of scheduling.
    """
    options = options or CampaignOptions()
    started_at = datetime.now(timezone.utc)
    rng = SplitMix64(scenario.seed if scenario.seed is not None else 0)

    chosen: list[Endpoint] = []
    try:
        for step in scenario.steps:
            endpoint = select_target(step.selector, inventory, rng,
                                     default_auth=options.default_auth)
            faults.validate(step.fault, endpoint)
            chosen.append(endpoint)
    except FitError as exc:
        raise PreflightFailed(str(exc)) from exc

    abort = options.abort_event
    reports: dict[int, StepReport] = {}
    running: set[int] = set()
    threads: list[threading.Thread] = []
    start = time.monotonic()
    done = threading.Condition()

    def worker(i: int) -> None:
        step = scenario.steps[i]
        step_options = replace(options, hold=step.hold, always_revert=True)
        try:
            result = inject_single(chosen[i], step.fault, transport_factory(),
                                   step_options, index=i)
        except FitError as exc:  # validation re-raises are preflight bugs
            result = StepReport(i, chosen[i].label, step.fault.name,
                                STATUS_FAILED, [], str(exc))
        with done:
            reports[i] = result
            running.discard(i)
            done.notify_all()

    order = sorted(range(len(scenario.steps)),
                   key=lambda i: (scenario.steps[i].start_offset, i))
    pending = list(order)
    with done:
        while pending:
            if abort is not None and abort.is_set():
                break
            now = time.monotonic() - start
            while pending and len(running) < scenario.parallelism \
                    and scenario.steps[pending[0]].start_offset <= now:
                i = pending.pop(0)
                running.add(i)
                thread = threading.Thread(target=worker, args=(i,), daemon=True)
                threads.append(thread)
                thread.start()
            if not pending:
                break
            done.wait(timeout=SCHEDULER_GRANULARITY / 2)
    for thread in threads:
        thread.join()

    for i, step in enumerate(scenario.steps):
        if i not in reports:
            reports[i] = StepReport(i, chosen[i].label, step.fault.name,
                                    STATUS_SKIPPED, [], "not started")
    steps = [reports[i] for i in range(len(scenario.steps))]
    return RunReport(scenario.name, started_at,
                     time.monotonic() - start, steps)


# --- dry-run plan preview -------------------------------------------------


def dry_run_plan(fault: faults.FaultSpec, profile: OSProfile, *,
                 escalation_prefix: str = DEFAULT_ESCALATION,
                 ) -> list[tuple[str, str]]:
    """(phase, command) rows a real run would issue, assuming every tool
    is absent (the conservative superset), without touching a transport."""
    rows: list[tuple[str, str]] = [(PHASE_PROBE, osprobe.OS_RELEASE_PROBE)]
    for tool in faults.required_tools(fault):
        rows.append((PHASE_PROBE, tool.probe_command))
        try:
            plan = osprobe.install_plan(profile, tool)
        except NotInstallable:
            rows.append((PHASE_PROVISION,
                         f"# {tool.name}: not installable via {profile.family}"
                         f" packages; must already be present on the target"))
            continue
        rows.extend((s.phase, realized_command(s, escalation_prefix))
                    for s in plan.steps)
    for local, remote in faults.uploads_for(fault):
        rows.append((PHASE_PROVISION, f"upload {local} -> {remote}"))
    rows.extend((s.phase, realized_command(s, escalation_prefix))
                for s in faults.command_plan(fault, profile).steps)
    return rows
