"""Scenario engine: scripted variants, simulated kernels, fault injection."""

from .config import ScenarioConfig, VariantConfig, load_config, scenario_from_dict
from .faults import FaultSpec, inject_fault
from .kernel import MachineProfile, NetworkWorld, SimKernel
from .ledger import SideEffectLedger
from .program import Intent, LogicalProgram, Renderer, Step, render_variant
from .runner import (
    ScenarioReport,
    check_lockstep,
    check_single_effector,
    check_transparency,
    run_daemon,
    run_scenario,
)

__all__ = [
    "ScenarioConfig", "VariantConfig", "load_config", "scenario_from_dict", "FaultSpec", "inject_fault",
    "MachineProfile", "NetworkWorld", "SimKernel", "SideEffectLedger", "Intent", "LogicalProgram",
    "Renderer", "Step", "render_variant", "ScenarioReport", "run_scenario", "run_daemon",
    "check_single_effector", "check_transparency", "check_lockstep",
]
