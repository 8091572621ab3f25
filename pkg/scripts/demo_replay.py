#!/usr/bin/env python3
"""End-to-end demo against a scripted transport: the memory-stress flow.

Replays the switch-style invocation with a target that reports Ubuntu
14.04 and no memtester, so the run shows the full probe -> provision ->
inject pipeline without touching any real machine. Prints the dry-run
plan first, then the executed transcript and the JSON report.
"""
import io
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from fit.cli import main  # noqa: E402
from fit.transport import ExecResult, ScriptedTransport  # noqa: E402

ARGV = ["--stressmem", "2", "2048m", "ubuntu@109.231.126.101",
        "-no", "home/ubuntu/SSHKEYS/VMkey.key"]

OS_RELEASE = 'NAME="Ubuntu"\nID=ubuntu\nVERSION_ID="14.04"\n'


def scripted_target() -> ScriptedTransport:
    return ScriptedTransport([
        ("cat /etc/os-release", OS_RELEASE),
        ("command -v memtester",
         [ExecResult.failure(1), ExecResult.success("/usr/bin/memtester\n")]),
        ("sudo -n apt-get update", ExecResult.success("Reading package lists...\n")),
        ("sudo -n apt-get install -y memtester",
         ExecResult.success("Setting up memtester ...\n")),
        ("memtester 2048M 2", ExecResult.success("Loop 1/2 ... ok\nLoop 2/2 ... ok\n")),
    ])


def run() -> None:
    print("== dry run ==")
    main(ARGV + ["--dry-run", "--output=text"], env={})

    print("\n== scripted execution ==")
    transport = scripted_target()
    out = io.StringIO()
    code = main(ARGV + ["--output=json"], transport_factory=lambda: transport,
                out=out, env={})
    print("transcript:")
    for command in transport.commands():
        print(f"  $ {command}")
    print(f"exit code: {code}")
    print("\n== JSON report ==")
    print(out.getvalue())


if __name__ == "__main__":
    run()
