"""Command transports: run shell commands on a target as a pre-defined user.

Three interchangeable backends share one session contract:

* ``SshTransport`` drives the system OpenSSH client for real remote hosts.
* ``LocalTransport`` executes on the machine the orchestrator runs on.
* ``ScriptedTransport`` is a test double that replays canned replies and
  records every command it is asked to run.

Fault logic never knows which backend it is talking to, so a scripted run
issues exactly the command strings a real run would.
"""
from __future__ import annotations

import os
import shlex
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass

from .errors import (
    AuthFailed,
    PermissionDenied,
    SessionClosed,
    Timeout,
    TransportBroken,
    Unreachable,
    UnscriptedCommand,
)

KILLED_EXIT_CODE = 124  # reported when exec kills a command at its timeout
GRACE_SECONDS = 2.0     # exec never blocks longer than timeout + this

VM = "vm"
NODE = "node"
TARGET_CLASSES = (VM, NODE)

_UPLOAD_TIMEOUT = 120.0


@dataclass(frozen=True)
class Auth:
    """Authentication material: a key file, the SSH agent, or a password."""

    method: str          # "key" | "agent" | "password"
    secret: str = ""     # key-file path or password; unused for agent

    def __post_init__(self):
        if self.method not in ("key", "agent", "password"):
            raise ValueError(f"unknown auth method {self.method!r}")
        if self.method == "key" and not self.secret:
            raise ValueError("key auth requires a key-file path")

    @classmethod
    def key(cls, path: str) -> "Auth":
        return cls("key", path)

    @classmethod
    def agent(cls) -> "Auth":
        return cls("agent")

    @classmethod
    def password(cls, password: str) -> "Auth":
        return cls("password", password)


@dataclass(frozen=True)
class Endpoint:
    """An addressable target: a VM or the node hosting VMs."""

    host: str
    username: str
    auth: Auth
    port: int = 22
    label: str = ""
    target_class: str = VM

    def __post_init__(self):
        if not self.host:
            raise ValueError("endpoint host must be non-empty")
        if not self.username:
            raise ValueError("endpoint username must be non-empty")
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port {self.port} outside [1, 65535]")
        if self.target_class not in TARGET_CLASSES:
            raise ValueError(f"target_class must be one of {TARGET_CLASSES}")
        if not self.label:
            object.__setattr__(self, "label", f"{self.username}@{self.host}")


@dataclass(frozen=True)
class ExecResult:
    exit_code: int
    stdout: bytes = b""
    stderr: bytes = b""
    duration_ms: int = 0
    timed_out: bool = False

    def __post_init__(self):
        if self.timed_out and self.exit_code != KILLED_EXIT_CODE:
            raise ValueError("timed-out results must carry the killed sentinel code")

    @property
    def ok(self) -> bool:
        return self.exit_code == 0 and not self.timed_out

    @classmethod
    def success(cls, stdout: str = "") -> "ExecResult":
        return cls(0, stdout=stdout.encode())

    @classmethod
    def failure(cls, exit_code: int = 1, stderr: str = "") -> "ExecResult":
        return cls(exit_code, stderr=stderr.encode())

    @classmethod
    def killed(cls) -> "ExecResult":
        return cls(KILLED_EXIT_CODE, timed_out=True)


class Session:
    """A live connection to one endpoint. exec/upload raise once closed."""

    def __init__(self, endpoint: Endpoint, backend):
        self.endpoint = endpoint
        self._backend = backend
        self.state = "open"

    def exec(self, command: str, timeout: float) -> ExecResult:
        if self.state != "open":
            raise SessionClosed(f"session to {self.endpoint.label} is closed")
        if not command:
            raise ValueError("command must be non-empty")
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        return self._backend.exec(self, command, timeout)

    def upload(self, content: bytes, remote_path: str) -> None:
        if self.state != "open":
            raise SessionClosed(f"session to {self.endpoint.label} is closed")
        if not remote_path.startswith("/"):
            raise ValueError("remote_path must be absolute")
        self._backend.upload(self, content, remote_path)

    def close(self) -> None:
        if self.state == "open":
            self.state = "closed"
            self._backend.closed(self)

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _run_argv(argv, timeout: float, stdin: bytes | None = None) -> ExecResult:
    start = time.monotonic()
    proc = subprocess.Popen(
        argv,
        stdin=subprocess.PIPE if stdin is not None else subprocess.DEVNULL,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
    )
    timed_out = False
    try:
        out, err = proc.communicate(input=stdin, timeout=timeout)
        code = proc.returncode
    except subprocess.TimeoutExpired:
        proc.kill()
        try:
            out, err = proc.communicate(timeout=GRACE_SECONDS)
        except subprocess.TimeoutExpired:
            out, err = b"", b""
        code = KILLED_EXIT_CODE
        timed_out = True
    duration_ms = int((time.monotonic() - start) * 1000)
    return ExecResult(code, out, err, duration_ms, timed_out)


class LocalTransport:
    """Runs commands on the local machine through /bin/sh."""

    def connect(self, endpoint: Endpoint, timeout: float = 10.0) -> Session:
        return Session(endpoint, self)

    def exec(self, session: Session, command: str, timeout: float) -> ExecResult:
        return _run_argv(["/bin/sh", "-c", command], timeout)

    def upload(self, session: Session, content: bytes, remote_path: str) -> None:
        try:
            with open(remote_path, "wb") as fp:
                fp.write(content)
        except OSError as exc:
            raise PermissionDenied(f"cannot write {remote_path}: {exc}") from exc

    def closed(self, session: Session) -> None:
        pass


class SshTransport:
    """Drives the system OpenSSH client; commands run under the remote
    user's non-interactive login shell.

    Key-file and agent auth work out of the box. Password auth needs
    sshpass on the local PATH (the reference CLI never surfaces it).
    """

    def __init__(self, connect_timeout: float = 10.0,
                 host_key_policy: str = "accept-new",
                 extra_options: tuple[str, ...] = ()):
        self.connect_timeout = connect_timeout
        self.host_key_policy = host_key_policy
        self.extra_options = tuple(extra_options)

    def argv(self, endpoint: Endpoint, remote_command: str,
             connect_timeout: float | None = None) -> list[str]:
        timeout = connect_timeout if connect_timeout is not None else self.connect_timeout
        argv: list[str] = []
        if endpoint.auth.method == "password":
            if shutil.which("sshpass") is None:
                raise AuthFailed("password auth requires sshpass on the local PATH")
            argv += ["sshpass", "-p", endpoint.auth.secret]
        argv += [
            "ssh",
            "-p", str(endpoint.port),
            "-o", f"ConnectTimeout={max(1, int(timeout))}",
            "-o", f"StrictHostKeyChecking={self.host_key_policy}",
        ]
        if endpoint.auth.method == "key":
            argv += ["-o", "BatchMode=yes", "-i", os.path.expanduser(endpoint.auth.secret)]
        elif endpoint.auth.method == "agent":
            argv += ["-o", "BatchMode=yes"]
        for option in self.extra_options:
            argv += ["-o", option]
        argv += [f"{endpoint.username}@{endpoint.host}", "--", remote_command]
        return argv

    def connect(self, endpoint: Endpoint, timeout: float = 10.0) -> Session:
        probe = _run_argv(self.argv(endpoint, "true", connect_timeout=timeout),
                          timeout + GRACE_SECONDS)
        if probe.timed_out:
            raise Timeout(f"connecting to {endpoint.label} timed out after {timeout}s")
        if probe.exit_code == 0:
            return Session(endpoint, self)
        stderr = probe.stderr.decode(errors="replace").strip()
        lowered = stderr.lower()
        if "permission denied" in lowered or "authentication" in lowered:
            raise AuthFailed(f"{endpoint.label}: {stderr}")
        if "timed out" in lowered:
            raise Timeout(f"{endpoint.label}: {stderr}")
        raise Unreachable(f"{endpoint.label}: {stderr or 'connection failed'}")

    def exec(self, session: Session, command: str, timeout: float) -> ExecResult:
        result = _run_argv(self.argv(session.endpoint, command), timeout)
        # OpenSSH reserves 255 for transport failure; remote commands
        # exiting 255 are indistinguishable and treated the same way.
        if not result.timed_out and result.exit_code == 255:
            raise TransportBroken(result.stderr.decode(errors="replace").strip())
        return result

    def upload(self, session: Session, content: bytes, remote_path: str) -> None:
        command = f"cat > {shlex.quote(remote_path)}"
        result = _run_argv(self.argv(session.endpoint, command),
                           _UPLOAD_TIMEOUT, stdin=content)
        if result.exit_code == 255:
            raise TransportBroken(result.stderr.decode(errors="replace").strip())
        if result.exit_code != 0 or result.timed_out:
            raise PermissionDenied(
                f"cannot write {remote_path}: {result.stderr.decode(errors='replace').strip()}")

    def closed(self, session: Session) -> None:
        pass


@dataclass
class TranscriptEntry:
    label: str
    command: str
    at: float  # monotonic seconds


class _ScriptEntry:
    def __init__(self, pattern: str, reply):
        self.pattern = pattern
        self.prefix = pattern.endswith("*")
        if isinstance(reply, (list, tuple)):
            self.replies = list(reply)
        else:
            self.replies = [reply]

    def matches(self, command: str) -> bool:
        if self.prefix:
            return command.startswith(self.pattern[:-1])
        return command == self.pattern

    def next_reply(self):
        reply = self.replies[0]
        if len(self.replies) > 1:
            self.replies.pop(0)
        return reply


def _coerce_result(reply, command: str) -> ExecResult:
    if isinstance(reply, BaseException):
        raise reply
    if callable(reply):
        reply = reply(command)
    if isinstance(reply, ExecResult):
        return reply
    if isinstance(reply, str):
        return ExecResult.success(reply)
    if isinstance(reply, int):
        return ExecResult(reply)
    raise TypeError(f"cannot use {reply!r} as a scripted reply")


class ScriptedTransport:
    """Scripted test double.

    ``script`` maps command patterns to replies; a pattern is a literal
    command string, or an anchored prefix when it ends with ``*``. The
    first matching entry wins. A reply may be an ExecResult, a str
    (stdout, exit 0), an int (exit code), an exception instance (raised),
    a callable taking the command, or a sequence of those consumed call
    by call with the last repeating.

    Every exec is appended to ``transcript``; unmatched commands are
    additionally recorded in ``unmatched`` and either raise (strict, the
    default) or return ``default``. Session open/close bookkeeping feeds
    the leak and parallelism assertions in tests.
    """

    def __init__(self, script=None, *, hosts=None, strict: bool = True,
                 default: ExecResult | None = None, latency: float = 0.0,
                 on_exec=None):
        items = script.items() if hasattr(script, "items") else (script or [])
        self._entries = [_ScriptEntry(p, r) for p, r in items]
        self._hosts = None if hosts is None else set(hosts)
        self._strict = strict
        self._default = default
        self._latency = latency
        self._on_exec = on_exec
        self._lock = threading.Lock()
        self.transcript: list[TranscriptEntry] = []
        self.uploads: list[tuple[str, str, bytes]] = []  # (label, path, content)
        self.unmatched: list[str] = []
        self.open_sessions = 0
        self.max_open_sessions = 0
        self.sessions_opened = 0
        self.sessions_closed = 0

    def connect(self, endpoint: Endpoint, timeout: float = 10.0) -> Session:
        if self._hosts is not None and endpoint.host not in self._hosts \
                and endpoint.label not in self._hosts:
            raise Unreachable(f"{endpoint.label} is not scripted")
        with self._lock:
            self.open_sessions += 1
            self.sessions_opened += 1
            self.max_open_sessions = max(self.max_open_sessions, self.open_sessions)
        return Session(endpoint, self)

    def exec(self, session: Session, command: str, timeout: float) -> ExecResult:
        if self._latency:
            time.sleep(self._latency)
        with self._lock:
            index = len(self.transcript)
            self.transcript.append(
                TranscriptEntry(session.endpoint.label, command, time.monotonic()))
            entry = next((e for e in self._entries if e.matches(command)), None)
            reply = entry.next_reply() if entry else None
        if self._on_exec is not None:
            self._on_exec(index, command)
        if entry is None:
            with self._lock:
                self.unmatched.append(command)
            if self._default is not None or not self._strict:
                return self._default or ExecResult.failure(127, "unscripted command")
            raise UnscriptedCommand(command)
        return _coerce_result(reply, command)

    def upload(self, session: Session, content: bytes, remote_path: str) -> None:
        with self._lock:
            self.transcript.append(TranscriptEntry(
                session.endpoint.label, f"upload {remote_path}", time.monotonic()))
            self.uploads.append((session.endpoint.label, remote_path, content))

    def closed(self, session: Session) -> None:
        with self._lock:
            self.open_sessions -= 1
            self.sessions_closed += 1

    def commands(self, label: str | None = None) -> list[str]:
        with self._lock:
            return [e.command for e in self.transcript
                    if label is None or e.label == label]
