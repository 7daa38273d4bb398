"""Multi-agent runtime for wireless optimisation tasks.

The package pairs an LLM-agent workflow (literature grounding, planning,
data preparation, simulation with scored feedback) with a numerical
wireless core: channel models and three downlink SWIPT beamforming
solvers (zero-forcing, WMMSE and a penalty-based SCA method).
"""

from .errors import WirelessAgentError
from .memory import AgentRole, Stage, SystemMemory
from .orchestrator import OrchestratorConfig, PlanDocument, TaskOutcome, TaskSpec, run_task
from .solvers import BeamformerSolution, sca_swipt, wmmse, zf_bd
from .wireless import ScenarioConfig, generate_scenario, sample_channel, sum_rate

__version__ = "0.1.0"

__all__ = [
    "AgentRole",
    "BeamformerSolution",
    "OrchestratorConfig",
    "PlanDocument",
    "ScenarioConfig",
    "Stage",
    "SystemMemory",
    "TaskOutcome",
    "TaskSpec",
    "WirelessAgentError",
    "generate_scenario",
    "run_task",
    "sample_channel",
    "sca_swipt",
    "sum_rate",
    "wmmse",
    "zf_bd",
]
