import threading
import time

import pytest

from fit import faults
from fit.campaign import (
    CampaignOptions,
    NamedSelector,
    RandomFromSelector,
    Scenario,
    Step,
    WhitelistSelector,
    dry_run_plan,
    inject_single,
    parse_inventory,
    parse_scenario,
    parse_whitelist,
    resolve_kill_random,
    run_campaign,
    select_target,
)
from fit.errors import (
    EmptyPool,
    InvalidField,
    PreflightFailed,
    ScenarioSyntaxError,
    UnknownFault,
    UnknownLabel,
    WhitelistUnreadable,
)
from fit.faults import MIB, StopService, StressCpu, StressMem
from fit.osprobe import OSProfile
from fit.plans import realized_command
from fit.rng import SplitMix64
from fit.transport import Auth, ExecResult, ScriptedTransport
from .conftest import UBUNTU_OS_RELEASE, absent, make_endpoint, present

UBUNTU = OSProfile("ubuntu", "14.04")

SCENARIO_TEXT = """\
# exercise the web tier
name = web chaos
parallelism = 2
seed = 42

[step]
selector = web1
fault = stress-cpu
params = workers=2, duration=30
start_offset = 0
hold = 10

[step]
selector = random-from(web1, web2)
fault = stop-service
params = service_name=nginx
"""

INVENTORY_TEXT = """\
[endpoint]
label = web1
host = 10.0.0.1
username = ubuntu
key = /keys/a.key

[endpoint]
label = web2
host = 10.0.0.2
port = 2222
username = ubuntu
key = /keys/a.key
class = vm

[endpoint]
label = node1
host = 10.0.1.1
username = root
class = node
"""


def stop_service_commands(name="mongod"):
    plan = faults.command_plan(StopService(service_name=name), UBUNTU)
    probe, stop, start = [realized_command(s) for s in plan.steps]
    return probe, stop, start


def base_script(extra=()):
    return [
        ("cat /etc/os-release", UBUNTU_OS_RELEASE),
        ("command -v systemctl || command -v service", present("/bin/systemctl")),
        ("command -v memtester", present()),
        ("command -v stress", present()),
        ("command -v iperf", present()),
        ("command -v iptables", present()),
        *extra,
    ]


class TestParseScenario:
    def test_full_document(self):
        scenario = parse_scenario(SCENARIO_TEXT.encode())
        assert scenario.name == "web chaos"
        assert scenario.parallelism == 2
        assert scenario.seed == 42
        assert len(scenario.steps) == 2
        assert scenario.steps[0].fault == StressCpu(workers=2, duration=30)
        assert scenario.steps[0].hold == 10
        assert scenario.steps[1].selector == RandomFromSelector(("web1", "web2"))

    def test_minimal_document(self):
        scenario = parse_scenario(b"[step]\nselector = a\nfault = shutdown\nparams = delay=60\n")
        assert scenario.parallelism == 1
        assert scenario.seed is None
        assert len(scenario.steps) == 1

    def test_unknown_fault_name(self):
        with pytest.raises(UnknownFault, match="stressgpu"):
            parse_scenario(b"[step]\nselector = a\nfault = stressgpu\n")

    def test_hold_on_fault_without_revert(self):
        text = (b"[step]\nselector = a\nfault = stress-mem\n"
                b"params = size=64m, loops=1\nhold = 5\n")
        with pytest.raises(InvalidField, match="no revert phase"):
            parse_scenario(text)

    def test_unknown_header_field(self):
        with pytest.raises(InvalidField, match="turbo"):
            parse_scenario(b"turbo = yes\n[step]\nselector = a\nfault = shutdown\nparams = delay=60\n")

    def test_unknown_step_field(self):
        with pytest.raises(InvalidField, match="color"):
            parse_scenario(b"[step]\nselector = a\nfault = shutdown\nparams = delay=60\ncolor = red\n")

    def test_duplicate_field(self):
        with pytest.raises(InvalidField, match="duplicate"):
            parse_scenario(b"[step]\nselector = a\nselector = b\nfault = shutdown\nparams = delay=60\n")

    def test_stray_line_names_line_number(self):
        with pytest.raises(ScenarioSyntaxError, match="line 2"):
            parse_scenario(b"name = x\nwhat is this\n")

    def test_no_steps(self):
        with pytest.raises(ScenarioSyntaxError, match="no .step. blocks"):
            parse_scenario(b"name = empty\n")

    def test_kill_random_rejected_in_scenarios(self):
        text = b"[step]\nselector = a\nfault = kill-random-vm\n"
        with pytest.raises(InvalidField, match="random selector"):
            parse_scenario(text)

    def test_bad_param_reported_with_line(self):
        text = b"[step]\nselector = a\nfault = stress-cpu\nparams = workers=0, duration=5\n"
        with pytest.raises(InvalidField, match="line 4"):
            parse_scenario(text)

    def test_whitelist_selector(self):
        text = (b"[step]\nselector = random-from-whitelist(/etc/fit/wl.txt)\n"
                b"fault = shutdown\nparams = delay=60\n")
        scenario = parse_scenario(text)
        assert scenario.steps[0].selector == WhitelistSelector("/etc/fit/wl.txt")

    def test_invalid_utf8(self):
        with pytest.raises(ScenarioSyntaxError):
            parse_scenario(b"\xff\xfe[step]\n")


class TestParseInventory:
    def test_blocks_and_defaults(self):
        inventory = parse_inventory(INVENTORY_TEXT.encode())
        assert set(inventory) == {"web1", "web2", "node1"}
        assert inventory["web1"].port == 22
        assert inventory["web1"].auth == Auth.key("/keys/a.key")
        assert inventory["web2"].port == 2222
        assert inventory["node1"].target_class == "node"
        assert inventory["node1"].auth == Auth.agent()

    def test_duplicate_label(self):
        text = ("[endpoint]\nlabel = a\nhost = h\nusername = u\n"
                "[endpoint]\nlabel = a\nhost = h2\nusername = u\n")
        with pytest.raises(InvalidField, match="duplicate"):
            parse_inventory(text)

    def test_missing_required_field(self):
        with pytest.raises(InvalidField, match="host"):
            parse_inventory("[endpoint]\nlabel = a\nusername = u\n")

    def test_bad_class_rejected(self):
        text = "[endpoint]\nlabel = a\nhost = h\nusername = u\nclass = pod\n"
        with pytest.raises(InvalidField):
            parse_inventory(text)


class TestWhitelist:
    def test_parse_skips_comments_and_blanks(self):
        entries = parse_whitelist("# fleet\nweb1\n\nubuntu@10.0.0.9\n  # tail\n")
        assert entries == ["web1", "ubuntu@10.0.0.9"]

    def test_selector_draws_from_file(self, tmp_path):
        wl = tmp_path / "wl.txt"
        wl.write_text("web1\nubuntu@10.0.0.9\n")
        inventory = parse_inventory(INVENTORY_TEXT)
        chosen = select_target(WhitelistSelector(str(wl)), inventory, SplitMix64(0),
                               default_auth=Auth.key("/keys/b.key"))
        assert chosen.label in ("web1", "ubuntu@10.0.0.9")

    def test_unreadable_file(self):
        with pytest.raises(WhitelistUnreadable):
            select_target(WhitelistSelector("/no/such/file"), {}, SplitMix64(0))

    def test_bad_entry(self, tmp_path):
        wl = tmp_path / "wl.txt"
        wl.write_text("not-a-label-or-userhost\n")
        with pytest.raises(UnknownLabel):
            select_target(WhitelistSelector(str(wl)), {}, SplitMix64(0))

    def test_empty_file(self, tmp_path):
        wl = tmp_path / "wl.txt"
        wl.write_text("# nothing\n")
        with pytest.raises(EmptyPool):
            select_target(WhitelistSelector(str(wl)), {}, SplitMix64(0))


class TestSelectTarget:
    def test_named(self):
        inventory = {"a": make_endpoint("a")}
        assert select_target(NamedSelector("a"), inventory, SplitMix64(0)).label == "a"

    def test_unknown_label(self):
        with pytest.raises(UnknownLabel):
            select_target(NamedSelector("ghost"), {}, SplitMix64(0))

    def test_singleton_pool(self):
        inventory = {"only": make_endpoint("only")}
        chosen = select_target(RandomFromSelector(("only",)), inventory, SplitMix64(9))
        assert chosen.label == "only"

    def test_same_seed_same_choice(self):
        inventory = {label: make_endpoint(label) for label in "abcd"}
        selector = RandomFromSelector(tuple("abcd"))
        first = select_target(selector, inventory, SplitMix64(5))
        second = select_target(selector, inventory, SplitMix64(5))
        assert first == second


class TestResolveKillRandom:
    def test_pool_draw_is_seeded(self):
        pool = tuple(make_endpoint(label) for label in "abcd")
        fault = faults.KillRandomVM(pool=pool, seed=3)
        first = resolve_kill_random(fault, {})
        second = resolve_kill_random(fault, {})
        assert first == second
        endpoint, shutdown = first
        assert endpoint in pool
        assert shutdown == faults.Shutdown(delay=faults.KILL_RANDOM_DELAY_SECONDS)

    def test_whitelist_variant_reads_file(self, tmp_path):
        wl = tmp_path / "wl.txt"
        wl.write_text("root@10.0.0.7\n")
        fault = faults.KillRandomFromWhitelist(whitelist_path=str(wl), seed=0)
        endpoint, _ = resolve_kill_random(fault, {}, default_auth=Auth.key("/k"))
        assert endpoint.host == "10.0.0.7"
        assert endpoint.username == "root"


class TestInjectSingle:
    def test_absent_tool_is_installed_then_injected(self):
        transport = ScriptedTransport([
            ("cat /etc/os-release", UBUNTU_OS_RELEASE),
            ("command -v memtester", [absent(), present()]),
            ("sudo -n apt-get update", ExecResult.success()),
            ("sudo -n apt-get install -y memtester", ExecResult.success()),
            ("memtester 2048M 2", ExecResult.success()),
        ])
        step = inject_single(make_endpoint("web1"), StressMem(size=2048 * MIB, loops=2),
                             transport)
        assert step.status == "success"
        assert transport.commands() == [
            "cat /etc/os-release",
            "command -v memtester",
            "sudo -n apt-get update",
            "sudo -n apt-get install -y memtester",
            "command -v memtester",
            "memtester 2048M 2",
        ]
        assert transport.sessions_opened == transport.sessions_closed == 1

    def test_present_tool_issues_no_install(self):
        transport = ScriptedTransport(base_script([("memtester 64M 1", ExecResult.success())]))
        step = inject_single(make_endpoint("web1"), StressMem(size=64 * MIB, loops=1),
                             transport)
        assert step.status == "success"
        assert not [c for c in transport.commands() if "install" in c]

    def test_failed_inject_reports_failed_and_reverts(self):
        transport = ScriptedTransport(base_script([
            ("stress --cpu 2 --timeout 5s", ExecResult.failure(1, "boom")),
            ("pkill -f stress", ExecResult.success()),
        ]))
        step = inject_single(make_endpoint("web1"), StressCpu(workers=2, duration=5),
                             transport)
        assert step.status == "failed"
        assert transport.commands()[-1] == "pkill -f stress"

    def test_failed_revert_dominates(self):
        probe, stop, start = stop_service_commands()
        transport = ScriptedTransport(base_script([
            (stop, ExecResult.success()),
            (start, ExecResult.failure(1, "unit stuck")),
        ]))
        options = CampaignOptions(always_revert=True)
        step = inject_single(make_endpoint("web1"), StopService(service_name="mongod"),
                             transport, options)
        assert step.status == "revert-failed"

    def test_hold_then_revert(self):
        probe, stop, start = stop_service_commands()
        transport = ScriptedTransport(base_script([
            (stop, ExecResult.success()),
            (start, ExecResult.success()),
        ]))
        options = CampaignOptions(hold=0.05)
        step = inject_single(make_endpoint("web1"), StopService(service_name="mongod"),
                             transport, options)
        assert step.status == "reverted"
        assert transport.commands()[-1] == start

    def test_no_hold_single_mode_leaves_fault_live(self):
        probe, stop, start = stop_service_commands()
        transport = ScriptedTransport(base_script([(stop, ExecResult.success())]))
        step = inject_single(make_endpoint("web1"), StopService(service_name="mongod"),
                             transport)
        assert step.status == "success"
        assert start not in transport.commands()

    def test_unsupported_os_reported_not_raised(self):
        transport = ScriptedTransport([
            ("cat /etc/os-release", ExecResult.failure(1)),
            ("cat /etc/redhat-release", ExecResult.failure(1)),
            ("command -v memtester", absent()),
        ])
        step = inject_single(make_endpoint("web1"), StressMem(size=MIB, loops=1),
                             transport)
        assert step.status == "failed"
        assert "unknown" in step.error

    def test_connect_failure_reported(self):
        transport = ScriptedTransport([], hosts={"10.9.9.9"})
        step = inject_single(make_endpoint("web1", host="10.0.0.50"),
                             StressMem(size=MIB, loops=1), transport)
        assert step.status == "failed"
        assert "connect" in step.error

    def test_jmeter_payload_uploaded_before_inject(self, tmp_path):
        plan_file = tmp_path / "api.jmx"
        plan_file.write_bytes(b"<plan/>")
        fault = faults.WorkloadJMeter(install_root="/opt/jmeter", plan=str(plan_file))
        transport = ScriptedTransport([
            ("cat /etc/os-release", UBUNTU_OS_RELEASE),
            ("test -x /opt/jmeter/bin/jmeter", ExecResult.success()),
            ("/opt/jmeter/bin/jmeter -n -t /tmp/api.jmx", ExecResult.success()),
        ])
        step = inject_single(make_endpoint("web1"), fault, transport)
        assert step.status == "success"
        assert transport.uploads[0][1:] == ("/tmp/api.jmx", b"<plan/>")
        commands = transport.commands()
        assert commands.index("upload /tmp/api.jmx") < \
            commands.index("/opt/jmeter/bin/jmeter -n -t /tmp/api.jmx")

    def test_phase_outcomes_recorded(self):
        transport = ScriptedTransport(base_script([("memtester 64M 1", ExecResult.success())]))
        step = inject_single(make_endpoint("web1"), StressMem(size=64 * MIB, loops=1),
                             transport)
        assert [o.phase for o in step.outcomes] == ["probe", "probe", "inject"]
        assert step.outcomes[-1].command == "memtester 64M 1"

    def test_missing_upload_payload_fails_cleanly(self):
        fault = faults.WorkloadJMeter(install_root="/opt/jmeter",
                                      plan="/no/such/plan.jmx")
        transport = ScriptedTransport([
            ("cat /etc/os-release", UBUNTU_OS_RELEASE),
            ("test -x /opt/jmeter/bin/jmeter", ExecResult.success()),
        ])
        step = inject_single(make_endpoint("web1"), fault, transport)
        assert step.status == "failed"
        assert "plan.jmx" in step.error
        assert transport.open_sessions == 0

    def test_timed_out_inject_is_a_failure(self):
        from fit.transport import ExecResult as R
        transport = ScriptedTransport(base_script([
            ("stress --cpu 1 --timeout 2s", R.killed()),
            ("pkill -f stress", ExecResult.success()),
        ]))
        step = inject_single(make_endpoint("web1"), StressCpu(workers=1, duration=2),
                             transport)
        assert step.status == "failed"
        assert transport.commands()[-1] == "pkill -f stress"

    def test_force_abort_after_complete_inject_skips_reverts(self):
        probe, stop, start = stop_service_commands()
        force = threading.Event()

        def trip_force(index, command):
            if command == stop:
                force.set()

        transport = ScriptedTransport(base_script([(stop, ExecResult.success())]),
                                      on_exec=trip_force)
        options = CampaignOptions(abort_event=threading.Event(), force_event=force,
                                  always_revert=True)
        step = inject_single(make_endpoint("web1"), StopService(service_name="mongod"),
                             transport, options)
        assert start not in transport.commands()  # escape hatch: no cleanup
        assert step.status == "success"

    def test_force_abort_mid_inject_is_failed(self):
        force = threading.Event()

        def trip_force(index, command):
            if command == "sudo -n iptables -N FIT-BLOCK":
                force.set()

        transport = ScriptedTransport(
            base_script([("sudo -n iptables*", ExecResult.success())]),
            on_exec=trip_force)
        options = CampaignOptions(abort_event=threading.Event(), force_event=force,
                                  always_revert=True)
        step = inject_single(make_endpoint("web1"), faults.BlockExternalAccess(),
                             transport, options)
        assert step.status == "failed"
        assert "force-aborted" in step.error
        # neither the remaining inject steps nor the reverts ran
        assert len([c for c in transport.commands() if "FIT-BLOCK" in c]) == 1


def scripted_campaign_transport(extra=(), **kwargs):
    return ScriptedTransport(base_script([
        ("memtester 64M 1", ExecResult.success()),
        ("stress --cpu 1 --timeout 1s", ExecResult.success()),
        ("pkill -f stress", ExecResult.success()),
        *extra,
    ]), **kwargs)


def inventory_of(*labels, target_class="vm"):
    return {label: make_endpoint(label, target_class=target_class) for label in labels}


def mem_step(selector, offset=0.0):
    return Step(NamedSelector(selector) if isinstance(selector, str) else selector,
                StressMem(size=64 * MIB, loops=1), offset)


class TestRunCampaign:
    def test_preflight_failure_issues_no_commands(self):
        scenario = Scenario("s", (mem_step("ghost"),))
        transport = scripted_campaign_transport()
        with pytest.raises(PreflightFailed):
            run_campaign(scenario, {}, lambda: transport)
        assert transport.commands() == []

    def test_scope_mismatch_fails_preflight(self):
        scenario = Scenario("s", (Step(NamedSelector("node1"),
                                       StopService(service_name="x")),))
        transport = scripted_campaign_transport()
        with pytest.raises(PreflightFailed):
            run_campaign(scenario, inventory_of("node1", target_class="node"),
                         lambda: transport)
        assert transport.commands() == []

    def test_serialized_when_parallelism_1(self):
        scenario = Scenario("s", tuple(mem_step(label) for label in ("a", "b", "c")))
        transport = scripted_campaign_transport(latency=0.01)
        report = run_campaign(scenario, inventory_of("a", "b", "c"), lambda: transport)
        assert transport.max_open_sessions == 1
        assert [s.status for s in report.steps] == ["success"] * 3

    def test_no_session_leak(self):
        scenario = Scenario("s", tuple(mem_step(label) for label in ("a", "b")),
                            parallelism=2)
        transport = scripted_campaign_transport()
        run_campaign(scenario, inventory_of("a", "b"), lambda: transport)
        assert transport.open_sessions == 0
        assert transport.sessions_opened == transport.sessions_closed == 2

    def test_campaign_reverts_stateful_faults_without_hold(self):
        probe, stop, start = stop_service_commands("nginx")
        scenario = Scenario("s", (Step(NamedSelector("a"),
                                       StopService(service_name="nginx")),))
        transport = scripted_campaign_transport([
            (stop, ExecResult.success()), (start, ExecResult.success()),
        ])
        report = run_campaign(scenario, inventory_of("a"), lambda: transport)
        assert report.steps[0].status == "reverted"
        commands = transport.commands("a")
        assert commands.index(start) > commands.index(stop)

    def test_abort_mid_hold_reverts_immediately(self):
        probe, stop, start = stop_service_commands("nginx")
        abort = threading.Event()

        def trip_abort(index, command):
            if command == stop:
                abort.set()

        scenario = Scenario("s", (Step(NamedSelector("a"),
                                       StopService(service_name="nginx"),
                                       hold=30.0),))
        transport = scripted_campaign_transport(
            [(stop, ExecResult.success()), (start, ExecResult.success())],
            on_exec=trip_abort)
        options = CampaignOptions(abort_event=abort, force_event=threading.Event())
        started = time.monotonic()
        report = run_campaign(scenario, inventory_of("a"), lambda: transport, options)
        assert time.monotonic() - started < 5  # hold was cut short
        assert report.steps[0].status == "reverted"
        assert transport.commands("a")[-1] == start

    def test_abort_skips_unlaunched_steps(self):
        abort = threading.Event()

        def trip_abort(index, command):
            if command == "memtester 64M 1":
                abort.set()

        scenario = Scenario("s", tuple(mem_step(label) for label in ("a", "b", "c")))
        transport = scripted_campaign_transport(on_exec=trip_abort)
        options = CampaignOptions(abort_event=abort, force_event=threading.Event())
        report = run_campaign(scenario, inventory_of("a", "b", "c"),
                              lambda: transport, options)
        statuses = [s.status for s in report.steps]
        assert statuses[0] == "success"
        assert "skipped" in statuses[1:]

    def test_start_offsets_delay_commands(self):
        scenario = Scenario("s", (mem_step("a", 0.0), mem_step("b", 0.3)),
                            parallelism=2)
        transport = scripted_campaign_transport()
        run_campaign(scenario, inventory_of("a", "b"), lambda: transport)
        first_a = next(e.at for e in transport.transcript if e.label == "a")
        first_b = next(e.at for e in transport.transcript if e.label == "b")
        assert first_b - first_a >= 0.2

    def test_seeded_campaign_is_deterministic(self):
        scenario = Scenario("s", (mem_step(RandomFromSelector(("a", "b", "c"))),
                                  mem_step(RandomFromSelector(("a", "b", "c")))),
                            seed=7)
        inventory = inventory_of("a", "b", "c")
        picks = []
        for _ in range(2):
            transport = scripted_campaign_transport()
            report = run_campaign(scenario, inventory, lambda: transport)
            picks.append(tuple(s.endpoint for s in report.steps))
        assert picks[0] == picks[1]


class TestDryRunPlan:
    def test_rows_cover_probe_provision_inject(self):
        rows = dry_run_plan(StressMem(size=2048 * MIB, loops=2), UBUNTU)
        phases = [phase for phase, _ in rows]
        commands = [command for _, command in rows]
        assert phases[0] == "probe"
        assert "sudo -n apt-get install -y memtester" in commands
        assert commands[-1] == "memtester 2048M 2"

    def test_unpackaged_tool_noted(self):
        rows = dry_run_plan(faults.WorkloadYCSB(install_root="/opt/ycsb"), UBUNTU)
        notes = [c for _, c in rows if c.startswith("#")]
        assert notes and "not installable" in notes[0]
