"""fit: a fault injection orchestrator for VM- and node-level targets.

Connects over a command transport, detects the target OS, provisions the
stress tooling a fault needs (and nothing more), then injects and reverts
faults individually or as multi-target campaigns with structured reports.
"""

from .transport import Auth, Endpoint, ExecResult, LocalTransport, ScriptedTransport, SshTransport
from .osprobe import OSProfile, ProvisionOutcome, ToolId, TOOLS, detect_os, ensure_tool, install_plan, tool_installed
from .faults import FaultSpec, build_fault, command_plan, required_tools, revert_plan, validate
from .campaign import CampaignOptions, Scenario, Step, inject_single, parse_inventory, parse_scenario, run_campaign, select_target
from .report import RunReport, StepReport, exit_code, render_json, render_text
from .rng import SplitMix64

__version__ = "0.1.0"
