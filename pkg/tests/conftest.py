import zlib

import pytest

from fit.transport import Auth, Endpoint, ExecResult

_ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        _ACCEPTANCE_RESULTS[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for nodeid in sorted(_ACCEPTANCE_RESULTS):
        name = nodeid.split("::")[-1]
        outcome = _ACCEPTANCE_RESULTS[nodeid].upper()
        terminalreporter.write_line(f"{name}: {outcome}")

UBUNTU_OS_RELEASE = (
    'NAME="Ubuntu"\n'
    'VERSION="14.04.5 LTS, Trusty Tahr"\n'
    "ID=ubuntu\n"
    'VERSION_ID="14.04"\n'
)
CENTOS_OS_RELEASE = (
    'NAME="CentOS Linux"\n'
    'VERSION="7 (Core)"\n'
    'ID="centos"\n'
    'VERSION_ID="7"\n'
)


def make_endpoint(label="web1", host=None, target_class="vm", username="ubuntu"):
    derived = f"10.0.0.{zlib.crc32(label.encode()) % 250 + 1}"
    return Endpoint(host=host or derived,
                    username=username, auth=Auth.key("/keys/test.key"),
                    label=label, target_class=target_class)


def present(path="/usr/bin/tool"):
    return ExecResult.success(path + "\n")


def absent():
    return ExecResult.failure(1)


@pytest.fixture
def vm_endpoint():
    return make_endpoint("web1")


@pytest.fixture
def node_endpoint():
    return make_endpoint("node1", target_class="node", username="root")
