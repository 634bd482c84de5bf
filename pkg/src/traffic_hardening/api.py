"""
Python库API接口

ExperimentRunner 把证伪训练、安全加固、对阵评估、锦标赛和行为预测实验
包装成一组方法，命令行与其他项目都通过它调用。
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

from .config import RunConfig
from .dqn import FixedOpponent, TrainingResult, run_training
from .errors import ConfigError
from .evaluation import MatchupResult, SpeedTraceResult, evaluate_matchup, speed_trace_experiment
from .formatters import OutputFormatter
from .hardening import HardeningResult, TournamentResult, run_cycles, run_tournament
from .models import Role
from .network import load_weights, save_weights
from .parsers import ConfigParser
from .policies import Policy, RuleBasedPolicy
from .pool import AgentRecord, pool_load, pool_save
from .rollout import FalsificationArchive
from .seeding import derive_rng
from .simulator import HighwaySimulator

logger = logging.getLogger(__name__)

RULE_BASED_NAME = "idm_mobil"


@dataclass
class FalsificationOutcome:
    """一次证伪训练的结果"""

    training: TrainingResult
    evaluation: MatchupResult
    summary: Dict[str, Any]
    files: List[Path] = field(default_factory=list)


class ExperimentRunner:
    """
    实验运行器

    Args:
        config: 运行配置
        jobs: 并行进程数
    """

    def __init__(self, config: RunConfig, jobs: int = 1):
        if jobs < 1:
            raise ConfigError(f"并行进程数必须为正: {jobs}")
        self.config = config
        self.jobs = jobs
        self.simulator = HighwaySimulator(config.sim)
        self.formatter = OutputFormatter(config)

    @classmethod
    def from_source(
        cls, source: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None, jobs: int = 1
    ) -> "ExperimentRunner":
        return cls(ConfigParser.parse(source, overrides), jobs=jobs)

    def resolve_record(self, agent: Union[str, Path], role: Role) -> AgentRecord:
        """
        把 "idm_mobil" 或 .mlpw 权重文件解析成智能体记录

        输入维度为11的权重视为带对手标记的观测。
        """
        if str(agent) == RULE_BASED_NAME:
            return AgentRecord.rule_based(RULE_BASED_NAME, role, elo=self.config.elo.initial_rating)
        path = Path(agent)
        if not path.exists():
            raise FileNotFoundError(f"权重文件不存在: {path}")
        net = load_weights(path.read_bytes())
        if net.input_dim not in (10, 11):
            raise ConfigError(f"权重输入维度必须为10或11: {net.input_dim}")
        if role is Role.NPC and net.input_dim != 10:
            raise ConfigError("NPC 不使用带对手标记的观测")
        record_id = "".join(ch if ch.isalnum() or ch in "_.-" else "_" for ch in path.stem) or "agent"
        return AgentRecord.from_network(record_id, role, 0, net, self.config.elo.initial_rating)

    def resolve_policy(self, agent: Union[str, Path], role: Role) -> Policy:
        return self.resolve_record(agent, role).build_policy(self.config.sim, self.config.planner)

    def _archive(self) -> Optional[FalsificationArchive]:
        capacity = self.config.eval.archive_capacity
        if capacity == 0:
            return None
        return FalsificationArchive(capacity)

    def falsify(self, planner: Union[str, Path] = RULE_BASED_NAME, out: Optional[Union[str, Path]] = None) -> FalsificationOutcome:
        """
        训练一个 NPC 证伪给定的 Ego 规划器，并做贪心评估

        Args:
            planner: "idm_mobil" 或 Ego 权重文件
            out: 输出目录，为空时不写文件

        Returns:
            训练结果、评估结果与摘要
        """
        config = self.config
        ego = self.resolve_policy(planner, Role.EGO)
        archive = self._archive()
        training = run_training(
            Role.NPC,
            FixedOpponent(ego, record_id=ego.name),
            self.simulator,
            config.reward,
            config.dqn,
            config.training_budget,
            derive_rng(config.seed, "falsify"),
            config_set=config.config_set,
            archive=archive,
        )
        npc = AgentRecord.from_network("npc", Role.NPC, 0, training.net).build_policy(config.sim, config.planner)
        evaluation = evaluate_matchup(
            self.simulator, ego, npc, config.eval.episodes, config.config_set, config.seed, ("falsify",), archive
        )
        summary = {
            "planner": ego.name,
            "transitions": config.training_budget,
            "training_episodes": len(training.trace),
            "final_rolling_crash_rate": training.trace.final_crash_rate,
            "mean_accumulated_reward": (
                sum(training.trace.rewards) / len(training.trace) if len(training.trace) else 0.0
            ),
            "eval_episodes": evaluation.episodes,
            "eval_crash_rate": evaluation.crash_rate,
            "archived_collisions": len(archive) if archive is not None else 0,
        }
        outcome = FalsificationOutcome(training=training, evaluation=evaluation, summary=summary)
        if out is not None:
            out = Path(out)
            fmt = self.formatter
            outcome.files = [
                fmt.write(save_weights(training.net), out / "npc.mlpw"),
                fmt.write(fmt.trace_csv(training.trace), out / "trace.csv"),
                fmt.write(fmt.episode_log_csv(evaluation), out / "eval_episodes.csv"),
                fmt.write(fmt.summary_json("falsify", summary), out / "summary.json"),
            ]
            if archive is not None:
                outcome.files.append(archive.save(out / "archive.jsonl"))
        logger.info(f"证伪完成: 训练碰撞率{summary['final_rolling_crash_rate']:.3f}, 评估碰撞率{evaluation.crash_rate:.3f}")
        return outcome

    def harden(
        self,
        out: Optional[Union[str, Path]] = None,
        on_cycle_end: Optional[Callable[[int, HardeningResult], None]] = None,
    ) -> HardeningResult:
        """
        运行安全加固循环并写出两个模型池、交叉评估矩阵与报告

        失败时已完成部分的报告仍会写出 (report.json 中 completed=false)。
        """
        archive = self._archive()
        try:
            result = run_cycles(self.config, jobs=self.jobs, on_cycle_end=on_cycle_end, archive=archive)
        except Exception as e:
            report = getattr(e, "partial_report", None)
            if out is not None and report is not None:
                self.formatter.write(self.formatter.report_json(report), Path(out) / "report.json")
            raise
        if out is not None:
            out = Path(out)
            fmt = self.formatter
            pool_save(result.ego_pool, out / "ego_pool")
            pool_save(result.npc_pool, out / "npc_pool")
            fmt.write(fmt.report_json(result.report), out / "report.json")
            if result.report.crash_matrix is not None:
                fmt.write(fmt.matrix_csv(result.report.crash_matrix), out / "crash_matrix.csv")
            for agent_id, trace in result.traces.items():
                fmt.write(fmt.trace_csv(trace), out / "traces" / f"{agent_id}.csv")
            for agent_id, tournament in result.tournaments.items():
                fmt.write(fmt.match_log_csv(tournament), out / "tournaments" / f"{agent_id}.csv")
            if archive is not None:
                archive.save(out / "archive.jsonl")
        return result

    def evaluate(
        self,
        ego: Union[str, Path],
        npc: Union[str, Path],
        episodes: Optional[int] = None,
        out: Optional[Union[str, Path]] = None,
    ) -> MatchupResult:
        """两个策略的贪心对阵评估"""
        ego_policy = self.resolve_policy(ego, Role.EGO)
        npc_policy = self.resolve_policy(npc, Role.NPC)
        result = evaluate_matchup(
            self.simulator,
            ego_policy,
            npc_policy,
            episodes or self.config.eval.episodes,
            self.config.config_set,
            self.config.seed,
            ("evaluate",),
        )
        if out is not None:
            out = Path(out)
            fmt = self.formatter
            fmt.write(fmt.episode_log_csv(result), out / "episodes.csv")
            payload = {"ego": ego_policy.name, "npc": npc_policy.name, "episodes": result.episodes, "crash_rate": result.crash_rate}
            fmt.write(fmt.summary_json("evaluate", payload), out / "summary.json")
        return result

    def tournament(
        self,
        new_agent: Union[str, Path],
        pool_dir: Union[str, Path],
        out: Optional[Union[str, Path]] = None,
    ) -> TournamentResult:
        """
        新智能体与已保存的对手池进行循环赛，并把更新后的评分写回清单

        新智能体的角色与对手池相反。
        """
        pool = pool_load(pool_dir)
        record = self.resolve_record(new_agent, pool.role.opposite)
        if record.id in pool:
            raise ConfigError(f"新智能体id与池中记录重复: {record.id}")
        result = run_tournament(
            record,
            pool,
            self.config.cycles.tournament_episodes_per_pair,
            self.config.elo,
            self.simulator,
            self.config.planner,
            self.config.config_set,
            self.config.seed,
            self.jobs,
        )
        pool_save(pool, pool_dir)
        if out is not None:
            out = Path(out)
            fmt = self.formatter
            fmt.write(fmt.match_log_csv(result), out / "matches.csv")
            payload = {"new_agent": record.id, "episodes": result.episodes, "ratings": result.ratings}
            fmt.write(fmt.summary_json("tournament", payload), out / "summary.json")
        return result

    def speed_trace(
        self,
        egos: Sequence[Union[str, Path]],
        npc: Optional[Union[str, Path]] = None,
        episodes: Optional[int] = None,
        out: Optional[Union[str, Path]] = None,
    ) -> SpeedTraceResult:
        """
        行为预测实验: 每个 Ego 分别对规则交通车和 (可选的) 对抗 NPC

        Args:
            egos: Ego 规划器列表
            npc: 对抗 NPC 权重文件
            episodes: 每个对手的回合数
            out: 输出目录
        """
        config = self.config
        opponents: List[Policy] = [RuleBasedPolicy(config.planner, config.sim.geometry, name=RULE_BASED_NAME)]
        if npc is not None:
            opponents.append(self.resolve_policy(npc, Role.NPC))
        result = SpeedTraceResult()
        for ego in egos:
            speed_trace_experiment(
                self.simulator,
                self.resolve_policy(ego, Role.EGO),
                opponents,
                episodes or config.eval.episodes,
                config.config_set,
                config.seed,
                config.reward.ego.nominal_speed_range,
                skip_steps=config.eval.steady_state_skip,
                window=config.eval.rolling_window,
                result=result,
            )
        if out is not None:
            out = Path(out)
            fmt = self.formatter
            fmt.write(fmt.speed_trace_csv(result), out / "speed_trace.csv")
            fmt.write(fmt.speed_summary_csv(result), out / "speed_summary.csv")
        return result


def falsify_rule_based(transitions: Optional[int] = None, seed: int = 0, **overrides: Any) -> FalsificationOutcome:
    """
    针对 IDM+MOBIL 规划器快速运行证伪的便捷函数

    Args:
        transitions: 训练步数，为空时使用预设值
        seed: 主种子
        **overrides: 点号路径覆盖 (键中的 "__" 代表 ".")

    Returns:
        证伪结果
    """
    dotted = {key.replace("__", "."): value for key, value in overrides.items()}
    dotted["seed"] = seed
    if transitions is not None:
        dotted["dqn.transitions"] = transitions
    runner = ExperimentRunner.from_source("falsify_rule_based", dotted)
    return runner.falsify(RULE_BASED_NAME)
