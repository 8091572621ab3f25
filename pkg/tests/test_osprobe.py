import pytest

from fit import osprobe
from fit.errors import InstallFailed, NotInstallable, UnsupportedOS
from fit.osprobe import OSProfile, TOOLS, detect_os, ensure_tool, install_plan, tool_installed
from fit.transport import ExecResult, ScriptedTransport
from .conftest import CENTOS_OS_RELEASE, UBUNTU_OS_RELEASE, absent, make_endpoint, present


def session_for(script, **kwargs):
    transport = ScriptedTransport(script, **kwargs)
    return transport.connect(make_endpoint()), transport


class TestOSProfile:
    def test_family_binds_package_manager(self):
        assert OSProfile("ubuntu").package_manager == "apt"
        assert OSProfile("centos").package_manager == "yum"
        assert OSProfile("unknown").package_manager == "none"

    def test_mismatched_binding_rejected(self):
        with pytest.raises(ValueError):
            OSProfile("ubuntu", package_manager="yum")

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            OSProfile("debian")


class TestDetectOS:
    def test_ubuntu(self):
        s, _ = session_for([("cat /etc/os-release", UBUNTU_OS_RELEASE)])
        assert detect_os(s) == OSProfile("ubuntu", "14.04", "apt")

    def test_centos(self):
        s, _ = session_for([("cat /etc/os-release", CENTOS_OS_RELEASE)])
        assert detect_os(s) == OSProfile("centos", "7", "yum")

    def test_probe_failure_yields_unknown(self):
        s, _ = session_for([
            ("cat /etc/os-release", ExecResult.failure(1)),
            ("cat /etc/redhat-release", ExecResult.failure(1)),
        ])
        assert detect_os(s) == OSProfile("unknown", "", "none")

    def test_redhat_release_fallback(self):
        s, t = session_for([
            ("cat /etc/os-release", ExecResult.failure(1)),
            ("cat /etc/redhat-release", "CentOS Linux release 7.4.1708 (Core)\n"),
        ])
        assert detect_os(s) == OSProfile("centos", "7.4.1708", "yum")
        assert t.commands() == ["cat /etc/os-release", "cat /etc/redhat-release"]

    def test_recognized_family_skips_fallback(self):
        s, t = session_for([("cat /etc/os-release", UBUNTU_OS_RELEASE)])
        detect_os(s)
        assert t.commands() == ["cat /etc/os-release"]

    def test_unrecognized_distro_yields_unknown(self):
        s, _ = session_for([
            ("cat /etc/os-release", 'ID=debian\nVERSION_ID="12"\n'),
            ("cat /etc/redhat-release", ExecResult.failure(1)),
        ])
        assert detect_os(s).family == "unknown"

    def test_garbage_output_yields_unknown(self):
        s, _ = session_for([
            ("cat /etc/os-release", "\x00\xff not an os-release"),
            ("cat /etc/redhat-release", "garbage"),
        ])
        assert detect_os(s).family == "unknown"


class TestToolInstalled:
    def test_present(self):
        s, _ = session_for([("command -v memtester", present("/usr/bin/memtester"))])
        assert tool_installed(s, TOOLS["memtester"]) is True

    def test_absent(self):
        s, _ = session_for([("command -v memtester", absent())])
        assert tool_installed(s, TOOLS["memtester"]) is False

    # service-manager resolves when either systemctl or service exists;
    # the scripted reply enumerates the shell-OR outcome per combination.
    @pytest.mark.parametrize("systemctl,service", [
        (True, True), (True, False), (False, True), (False, False),
    ])
    def test_service_manager_presence_combinations(self, systemctl, service):
        outcome = present("/bin/systemctl") if systemctl else (
            present("/sbin/service") if service else absent())
        s, _ = session_for([("command -v systemctl || command -v service", outcome)])
        assert tool_installed(s, TOOLS["service-manager"]) is (systemctl or service)


class TestInstallPlan:
    def test_ubuntu_apt_plan_ends_with_recheck(self):
        plan = install_plan(OSProfile("ubuntu"), TOOLS["memtester"])
        commands = [s.command for s in plan.steps]
        assert commands == [
            "apt-get update",
            "apt-get install -y memtester",
            "command -v memtester",
        ]
        assert all(s.phase == "provision" for s in plan.steps)
        assert plan.steps[0].privileged and plan.steps[1].privileged
        assert not plan.steps[2].privileged

    def test_centos_yum_plan(self):
        plan = install_plan(OSProfile("centos"), TOOLS["stress"])
        commands = [s.command for s in plan.steps]
        assert commands == ["yum install -y stress", "command -v stress"]

    def test_unknown_family_unsupported(self):
        with pytest.raises(UnsupportedOS):
            install_plan(OSProfile("unknown"), TOOLS["memtester"])

    @pytest.mark.parametrize("tool", ["ycsb", "jmeter", "service-manager"])
    def test_unpackaged_tools_not_installable(self, tool):
        with pytest.raises(NotInstallable):
            install_plan(OSProfile("ubuntu"), TOOLS[tool])


class TestEnsureTool:
    def test_present_issues_no_installs(self):
        s, t = session_for([("command -v memtester", present())])
        outcome = ensure_tool(s, OSProfile("ubuntu"), TOOLS["memtester"])
        assert outcome.action == "already-present"
        assert t.commands() == ["command -v memtester"]

    def test_absent_installs_and_rechecks(self):
        s, t = session_for([
            ("command -v memtester", [absent(), present()]),
            ("sudo -n apt-get update", ExecResult.success()),
            ("sudo -n apt-get install -y memtester", ExecResult.success()),
        ])
        outcome = ensure_tool(s, OSProfile("ubuntu"), TOOLS["memtester"])
        assert outcome.action == "installed"
        assert t.commands() == [
            "command -v memtester",
            "sudo -n apt-get update",
            "sudo -n apt-get install -y memtester",
            "command -v memtester",
        ]

    def test_recheck_still_absent_raises(self):
        s, _ = session_for([
            ("command -v memtester", absent()),
            ("sudo -n apt-get*", ExecResult.success()),
        ])
        with pytest.raises(InstallFailed) as excinfo:
            ensure_tool(s, OSProfile("ubuntu"), TOOLS["memtester"])
        assert excinfo.value.outcome.action == "failed"

    def test_idempotent_second_call_installs_nothing(self):
        s, t = session_for([
            ("command -v stress", [absent(), present()]),
            ("sudo -n yum install -y stress", ExecResult.success()),
        ])
        first = ensure_tool(s, OSProfile("centos"), TOOLS["stress"])
        second = ensure_tool(s, OSProfile("centos"), TOOLS["stress"])
        assert (first.action, second.action) == ("installed", "already-present")
        installs = [c for c in t.commands() if "yum install" in c]
        assert len(installs) == 1

    def test_custom_escalation_prefix(self):
        s, t = session_for([
            ("command -v stress", [absent(), present()]),
            ("doas yum install -y stress", ExecResult.success()),
        ])
        ensure_tool(s, OSProfile("centos"), TOOLS["stress"], escalation_prefix="doas")
        assert "doas yum install -y stress" in t.commands()

    def test_not_installable_propagates(self):
        s, _ = session_for([("command -v ycsb", absent())])
        with pytest.raises(NotInstallable):
            ensure_tool(s, OSProfile("ubuntu"), TOOLS["ycsb"])
