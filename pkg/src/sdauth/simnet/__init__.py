"""Virtual-clock simulation of the vehicle network, its attacks and its model checker."""

from sdauth.simnet.adversary import AdversaryAction, AdversaryScript, AttackReport, run_attack, run_suite, stride_scripts
from sdauth.simnet.engine import ConfigError, Counters, EventLoop, Topology
from sdauth.simnet.ivn import generate_ivn_plan, ivn_topology, plan_stats
from sdauth.simnet.scenario import (
    RunMetrics,
    ScalabilityResult,
    ScenarioConfig,
    Simulation,
    build_world,
    run_scalability,
    run_scenario,
    scalability_plan,
)

__all__ = [
    "AdversaryAction", "AdversaryScript", "AttackReport", "ConfigError", "Counters", "EventLoop",
    "RunMetrics", "ScalabilityResult", "ScenarioConfig", "Simulation", "Topology", "build_world",
    "generate_ivn_plan", "ivn_topology", "plan_stats", "run_attack", "run_scalability", "run_scenario",
    "run_suite", "scalability_plan", "stride_scripts",
]
