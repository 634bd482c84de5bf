"""
对抗交通场景生成与安全加固

用 DQN 控制的对抗交通车证伪两车道高速公路上的 IDM/MOBIL 与 DQN 规划器，
并通过交替训练 Ego 与 NPC 的模型池进行安全加固。
"""

__version__ = "0.1.0"
__author__ = "zym"
__email__ = "ym214413520@gmail.com"

from .config import RunConfig, SamplingMethod
from .models import ConfigId, MetaAction, Role, SimConfig, TerminationReason
from .simulator import HighwaySimulator
from .policies import NetworkPolicy, RuleBasedPolicy
from .dqn import DqnAgent, DqnHyperParams, run_training
from .pool import AgentRecord, ModelPool, pool_load, pool_save
from .hardening import run_cycles, run_tournament
from .evaluation import cross_table, evaluate_matchup, speed_trace_experiment
from .parsers import ConfigParser
from .formatters import OutputFormatter
from .api import ExperimentRunner, falsify_rule_based

__all__ = [
    "RunConfig",
    "SamplingMethod",
    "ConfigId",
    "MetaAction",
    "Role",
    "SimConfig",
    "TerminationReason",
    "HighwaySimulator",
    "NetworkPolicy",
    "RuleBasedPolicy",
    "DqnAgent",
    "DqnHyperParams",
    "run_training",
    "AgentRecord",
    "ModelPool",
    "pool_load",
    "pool_save",
    "run_cycles",
    "run_tournament",
    "cross_table",
    "evaluate_matchup",
    "speed_trace_experiment",
    "ConfigParser",
    "OutputFormatter",
    "ExperimentRunner",
    "falsify_rule_based",
]
