"""
安全加固

Elo 评分与按场景区分的更新增益、三种对手采样方式 (本地 / 均匀池 / Elo 优先池)、
循环赛评估，以及交替进行证伪训练与加固训练的循环编排。
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .config import EloParams, RunConfig, SamplingMethod, config_hash
from .dqn import Opponent, OpponentProvider, TrainingTrace, run_training
from .errors import HardeningError, PoolError, TournamentError
from .evaluation import MatchupMatrix, cross_table, evaluate_matchup
from .models import ConfigId, Role
from .planners import PlannerParams
from .pool import AgentKind, AgentRecord, ModelPool
from .rollout import FalsificationArchive, play_episode
from .seeding import derive_rng
from .simulator import HighwaySimulator

logger = logging.getLogger(__name__)

_ADJACENT_CONFIGS = (ConfigId.AL, ConfigId.AR)


@dataclass
class TraineeRating:
    """训练中尚未入池的智能体评分"""

    id: str
    elo: float = 1000.0
    games_played: int = 0


Rated = Union[AgentRecord, TraineeRating]


def elo_expected(r_agent: float, r_opponent: float, zeta: float) -> float:
    """
    期望得分 1 / (1 + exp((r_opponent − r_agent) / ζ))

    总是先为评分较高的一方计算，另一方取补数，保证 E(a,b) + E(b,a) = 1 精确成立。
    """
    if not zeta > 0:
        raise ValueError(f"zeta 必须为正: {zeta}")
    if r_agent >= r_opponent:
        return 1.0 / (1.0 + math.exp((r_opponent - r_agent) / zeta))
    return 1.0 - 1.0 / (1.0 + math.exp((r_agent - r_opponent) / zeta))


def elo_update(record: Rated, outcome: float, expected: float, k: float) -> float:
    """
    R ← R + K(φ − E)，同时累加对局数

    Returns:
        更新后的评分
    """
    if not 0.0 <= expected <= 1.0:
        raise ValueError(f"期望得分必须在[0, 1]内: {expected}")
    record.elo = record.elo + k * (outcome - expected)
    record.games_played += 1
    return record.elo


def k_for_config(config_id: ConfigId, elo: EloParams) -> float:
    """并排配置使用 k_adjacent，其余使用 k_default"""
    return elo.k_adjacent if ConfigId(config_id) in _ADJACENT_CONFIGS else elo.k_default


def apply_match(ego: Rated, npc: Rated, config_id: ConfigId, crashed: bool, elo: EloParams) -> None:
    """
    一个回合的成对评分更新

    碰撞时 NPC 获胜，否则 (包括超时和驶出道路) Ego 获胜。
    """
    expected_ego = elo_expected(ego.elo, npc.elo, elo.zeta)
    expected_npc = elo_expected(npc.elo, ego.elo, elo.zeta)
    k = k_for_config(config_id, elo)
    npc_outcome = 1.0 if crashed else 0.0
    elo_update(npc, npc_outcome, expected_npc, k)
    elo_update(ego, 1.0 - npc_outcome, expected_ego, k)


def selection_probabilities(
    pool: ModelPool, method: SamplingMethod, trainee_rating: float, elo: EloParams
) -> np.ndarray:
    """
    各记录被选为对手的概率

    优先池: P(i) ∝ E(r_i, r_trainee)^β，在对数空间归一化。
    """
    n = len(pool)
    if n == 0:
        raise PoolError("对手池为空")
    method = SamplingMethod(method)
    if method is SamplingMethod.LOCAL:
        probs = np.zeros(n)
        probs[-1] = 1.0
        return probs
    if method is SamplingMethod.UNIFORM or elo.beta == 0:
        return np.full(n, 1.0 / n)

    ratings = np.array([record.elo for record in pool], dtype=np.float64)
    # log E(r_i, r_t) = −log(1 + exp((r_t − r_i)/ζ))
    log_weights = -elo.beta * np.logaddexp(0.0, (trainee_rating - ratings) / elo.zeta)
    weights = np.exp(log_weights - log_weights.max())
    return weights / weights.sum()


def select_opponent(
    pool: ModelPool,
    method: SamplingMethod,
    trainee_rating: float,
    elo: EloParams,
    rng: np.random.Generator,
) -> AgentRecord:
    """
    按采样方式从对手池选择一个记录

    本地方式确定性地返回最新记录，不消耗随机数。
    """
    if len(pool) == 0:
        raise PoolError("对手池为空")
    method = SamplingMethod(method)
    if method is SamplingMethod.LOCAL:
        return pool.newest()
    records = pool.records
    if method is SamplingMethod.UNIFORM:
        return records[int(rng.integers(len(records)))]
    probs = selection_probabilities(pool, method, trainee_rating, elo)
    return records[int(rng.choice(len(records), p=probs))]


class PoolOpponentProvider(OpponentProvider):
    """
    从模型池采样训练对手

    优先池方式下每个训练回合结束都会更新受训智能体和对手的评分。

    Args:
        pool: 对手模型池
        method: 采样方式
        elo: Elo 参数
        simulator: 仿真器 (用于构造对手策略)
        planner: 规则规划器参数
        trainee_role: 受训智能体角色
        trainee_id: 受训智能体id
        live_ratings: 是否在训练中更新评分，默认仅优先池方式更新
    """

    def __init__(
        self,
        pool: ModelPool,
        method: SamplingMethod,
        elo: EloParams,
        simulator: HighwaySimulator,
        planner: PlannerParams,
        trainee_role: Role,
        trainee_id: str = "trainee",
        live_ratings: Optional[bool] = None,
    ):
        if len(pool) == 0:
            raise PoolError("对手池为空")
        if pool.role is trainee_role:
            raise PoolError("对手池角色不能与受训智能体相同")
        self.pool = pool
        self.method = SamplingMethod(method)
        self.elo = elo
        self.simulator = simulator
        self.planner = planner
        self.trainee_role = trainee_role
        self.trainee = TraineeRating(trainee_id, elo.initial_rating)
        self.live_ratings = self.method is SamplingMethod.PRIORITIZED if live_ratings is None else live_ratings
        self.sampled_ids: List[str] = []

    def sample(self, rng: np.random.Generator) -> Opponent:
        record = select_opponent(self.pool, self.method, self.trainee.elo, self.elo, rng)
        self.sampled_ids.append(record.id)
        return Opponent(record.id, record.build_policy(self.simulator.config, self.planner))

    def record_outcome(self, opponent: Opponent, config_id: ConfigId, crashed: bool) -> Optional[float]:
        if not self.live_ratings:
            return None
        record = self.pool.get(opponent.record_id)
        if self.trainee_role is Role.NPC:
            apply_match(record, self.trainee, config_id, crashed, self.elo)
        else:
            apply_match(self.trainee, record, config_id, crashed, self.elo)
        return self.trainee.elo


@dataclass
class MatchRecord:
    """锦标赛中的一个回合"""

    new_agent_id: str
    opponent_id: str
    config_id: str
    episode: int
    crashed: bool
    npc_won: bool
    new_agent_rating: float
    opponent_rating: float


@dataclass
class TournamentResult:
    new_agent_id: str
    match_log: List[MatchRecord] = field(default_factory=list)
    ratings: Dict[str, float] = field(default_factory=dict)

    @property
    def episodes(self) -> int:
        return len(self.match_log)

    @property
    def crash_rate(self) -> float:
        if not self.match_log:
            return 0.0
        return sum(1 for m in self.match_log if m.crashed) / len(self.match_log)

    @property
    def new_agent_rating(self) -> float:
        return self.ratings[self.new_agent_id]


def _play_pairing(task) -> List[bool]:
    simulator, ego, npc, config_ids, episodes_per_pair, seed, keys = task
    outcomes = []
    for config_id in config_ids:
        for episode in range(episodes_per_pair):
            rng = derive_rng(seed, "tournament", *keys, config_id.value, episode)
            outcomes.append(play_episode(simulator, ego, npc, config_id, rng).crashed)
    return outcomes


def run_tournament(
    new_agent: AgentRecord,
    opposing_pool: ModelPool,
    episodes_per_pair: int,
    elo: EloParams,
    simulator: HighwaySimulator,
    planner: PlannerParams,
    config_set: Sequence[ConfigId],
    seed: int,
    jobs: int = 1,
    reset_rating: bool = True,
) -> TournamentResult:
    """
    循环赛评估

    新智能体以贪心动作与对手池中每个记录在每个初始配置上各对战
    episodes_per_pair 个回合；对局可以并行，评分更新按
    (池插入顺序, 初始配置, 回合) 的规范顺序应用。

    Args:
        new_agent: 新智能体 (评分默认重置为初始评分)
        opposing_pool: 对手池
        episodes_per_pair: 每个 (对手, 初始配置) 的回合数
        elo: Elo 参数
        simulator: 仿真器
        planner: 规则规划器参数
        config_set: 初始配置集合
        seed: 主种子
        jobs: 并行进程数
        reset_rating: 是否把新智能体评分重置为初始评分

    Returns:
        对局记录与更新后的评分

    Raises:
        TournamentError: 对局失败，partial_log 为已应用的对局
    """
    if len(opposing_pool) == 0:
        raise PoolError("锦标赛对手池为空")
    if opposing_pool.role is new_agent.role:
        raise PoolError("新智能体与对手池角色相同")
    if episodes_per_pair < 1:
        raise ValueError(f"每组回合数必须为正: {episodes_per_pair}")
    configs = list(config_set)
    if reset_rating:
        new_agent.elo = elo.initial_rating

    new_policy = new_agent.build_policy(simulator.config, planner)
    opponents = opposing_pool.records
    tasks = []
    for opponent in opponents:
        opponent_policy = opponent.build_policy(simulator.config, planner)
        ego, npc = (new_policy, opponent_policy) if new_agent.role is Role.EGO else (opponent_policy, new_policy)
        tasks.append((simulator, ego, npc, configs, episodes_per_pair, seed, (new_agent.id, opponent.id)))

    result = TournamentResult(new_agent_id=new_agent.id)
    executor = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 and len(tasks) > 1 else None
    try:
        outcome_iter: Iterable[List[bool]] = (
            executor.map(_play_pairing, tasks) if executor else map(_play_pairing, tasks)
        )
        for opponent, outcomes in zip(opponents, outcome_iter):
            index = 0
            for config_id in configs:
                for episode in range(episodes_per_pair):
                    crashed = outcomes[index]
                    index += 1
                    if new_agent.role is Role.EGO:
                        apply_match(new_agent, opponent, config_id, crashed, elo)
                    else:
                        apply_match(opponent, new_agent, config_id, crashed, elo)
                    result.match_log.append(
                        MatchRecord(
                            new_agent_id=new_agent.id,
                            opponent_id=opponent.id,
                            config_id=config_id.value,
                            episode=episode,
                            crashed=crashed,
                            npc_won=crashed,
                            new_agent_rating=new_agent.elo,
                            opponent_rating=opponent.elo,
                        )
                    )
    except Exception as e:
        raise TournamentError(f"锦标赛中断: {e}", partial_log=result.match_log) from e
    finally:
        if executor is not None:
            executor.shutdown()

    result.ratings = {new_agent.id: new_agent.elo, **opposing_pool.ratings()}
    logger.info(
        f"锦标赛 {new_agent.id}: {result.episodes}个回合，碰撞率{result.crash_rate:.3f}，"
        f"评分{new_agent.elo:.1f}"
    )
    return result


class CycleEntry(BaseModel):
    """一个循环的汇总"""

    cycle: int
    npc_id: str
    ego_id: str
    falsification_opponent_id: str
    crash_rate_falsification: float = Field(description="V_c 对 E_{c-1} 的贪心碰撞率")
    crash_rate_hardening: float = Field(description="E_c 对 V_c 的贪心碰撞率")
    npc_training_episodes: int
    ego_training_episodes: int
    npc_training_crash_rate: float
    ego_training_crash_rate: float
    npc_mean_return: float
    ego_mean_return: float
    npc_tournament_crash_rate: float
    ego_tournament_crash_rate: float
    npc_rating: float
    ego_rating: float

    model_config = ConfigDict(extra="forbid")


class EloSnapshot(BaseModel):
    cycle: int
    stage: str
    ratings: Dict[str, float]


class CycleReport(BaseModel):
    """安全加固运行报告，失败时保留已完成部分"""

    name: str
    method: SamplingMethod
    n_cycles: int
    seed: int
    config_hash: str
    completed: bool = False
    error: Optional[str] = None
    cycles: List[CycleEntry] = Field(default_factory=list)
    elo_history: List[EloSnapshot] = Field(default_factory=list)
    crash_matrix: Optional[MatchupMatrix] = None

    def rating_history(self, agent_id: str) -> List[float]:
        return [snap.ratings[agent_id] for snap in self.elo_history if agent_id in snap.ratings]


@dataclass
class HardeningResult:
    ego_pool: ModelPool
    npc_pool: ModelPool
    report: CycleReport
    traces: Dict[str, TrainingTrace] = field(default_factory=dict)
    tournaments: Dict[str, TournamentResult] = field(default_factory=dict)


def _mean_return(trace: TrainingTrace) -> float:
    return float(np.mean(trace.rewards)) if trace.records else 0.0


def run_cycles(
    config: RunConfig,
    baseline: Optional[AgentRecord] = None,
    jobs: int = 1,
    on_cycle_end: Optional[Callable[[int, HardeningResult], None]] = None,
    archive: Optional[FalsificationArchive] = None,
) -> HardeningResult:
    """
    交替执行证伪与加固

    第 c 个循环: 用 Ego 池中按方式采样的对手训练 V_c，锦标赛评估后入池；
    再用 NPC 池中的对手训练 E_c，锦标赛评估后入池。

    Args:
        config: 运行配置
        baseline: 规则基线 E_0，默认自动创建
        jobs: 锦标赛与交叉评估的并行进程数
        on_cycle_end: 每个循环结束时的回调
        archive: 碰撞轨迹存档

    Returns:
        两个模型池、循环报告与训练轨迹

    Raises:
        HardeningError: 任一阶段失败，partial_report 保留已完成部分
    """
    cycles = config.cycles
    elo = config.elo
    simulator = HighwaySimulator(config.sim)
    planner = config.planner
    configs = config.config_set
    budget = config.training_budget
    seed = config.seed

    baseline = baseline or AgentRecord.rule_based("E_0", Role.EGO, 0, elo.initial_rating)
    ego_pool = ModelPool(Role.EGO, [baseline])
    npc_pool = ModelPool(Role.NPC)
    if cycles.rule_based_npc_in_pool:
        npc_pool.add(AgentRecord.rule_based("V_0", Role.NPC, 0, elo.initial_rating))

    report = CycleReport(
        name=config.name,
        method=cycles.method,
        n_cycles=cycles.n_cycles,
        seed=seed,
        config_hash=config_hash(config),
    )
    result = HardeningResult(ego_pool=ego_pool, npc_pool=npc_pool, report=report)

    def snapshot(cycle: int, stage: str) -> None:
        ratings = {**ego_pool.ratings(), **npc_pool.ratings()}
        report.elo_history.append(EloSnapshot(cycle=cycle, stage=stage, ratings=ratings))

    snapshot(0, "initial")
    try:
        for cycle in range(1, cycles.n_cycles + 1):
            logger.info(f"循环{cycle}/{cycles.n_cycles}: 证伪阶段")
            previous_ego = ego_pool.newest()
            npc_id = f"V_{cycle}"
            provider = PoolOpponentProvider(
                ego_pool, cycles.method, elo, simulator, planner, Role.NPC, npc_id
            )
            warm_npc = npc_pool.newest_dqn() if cycles.warm_start else None
            npc_training = run_training(
                Role.NPC,
                provider,
                simulator,
                config.reward,
                config.dqn,
                budget,
                derive_rng(seed, "cycle", cycle, "falsify"),
                initial_net=warm_npc.network() if warm_npc else None,
                config_set=configs,
                archive=archive,
            )
            if cycles.method is SamplingMethod.PRIORITIZED:
                snapshot(cycle, "falsify_training")
            npc_record = AgentRecord.from_network(npc_id, Role.NPC, cycle, npc_training.net, elo.initial_rating)
            npc_tournament = run_tournament(
                npc_record, ego_pool, cycles.tournament_episodes_per_pair, elo, simulator,
                planner, configs, seed, jobs,
            )
            npc_pool.add(npc_record)
            snapshot(cycle, "falsify_tournament")
            result.traces[npc_id] = npc_training.trace
            result.tournaments[npc_id] = npc_tournament

            falsification = evaluate_matchup(
                simulator,
                previous_ego.build_policy(config.sim, planner),
                npc_record.build_policy(config.sim, planner),
                config.eval.episodes,
                configs,
                seed,
                ("cycle", cycle, "falsify"),
                archive=archive,
            )

            logger.info(f"循环{cycle}/{cycles.n_cycles}: 加固阶段")
            ego_id = f"E_{cycle}"
            provider = PoolOpponentProvider(
                npc_pool, cycles.method, elo, simulator, planner, Role.EGO, ego_id
            )
            input_dim = 11 if cycles.augmented_ego else 10
            warm_ego = ego_pool.newest_dqn() if cycles.warm_start else None
            if warm_ego is not None and warm_ego.augmented != cycles.augmented_ego:
                warm_ego = None
            ego_training = run_training(
                Role.EGO,
                provider,
                simulator,
                config.reward,
                config.dqn,
                budget,
                derive_rng(seed, "cycle", cycle, "harden"),
                initial_net=warm_ego.network() if warm_ego else None,
                augmented=cycles.augmented_ego,
                config_set=configs,
            )
            if cycles.method is SamplingMethod.PRIORITIZED:
                snapshot(cycle, "harden_training")
            if budget == 0 and ego_pool.newest().kind is AgentKind.RULE_BASED:
                # 零预算时沿用上一代规则规划器
                ego_record = AgentRecord.rule_based(ego_id, Role.EGO, cycle, elo.initial_rating)
            else:
                if ego_training.net.input_dim != input_dim:
                    raise HardeningError(
                        f"加固得到的网络输入维度为{ego_training.net.input_dim}，应为{input_dim}"
                    )
                ego_record = AgentRecord.from_network(ego_id, Role.EGO, cycle, ego_training.net, elo.initial_rating)
            ego_tournament = run_tournament(
                ego_record, npc_pool, cycles.tournament_episodes_per_pair, elo, simulator,
                planner, configs, seed, jobs,
            )
            ego_pool.add(ego_record)
            snapshot(cycle, "harden_tournament")
            result.traces[ego_id] = ego_training.trace
            result.tournaments[ego_id] = ego_tournament

            hardening = evaluate_matchup(
                simulator,
                ego_record.build_policy(config.sim, planner),
                npc_record.build_policy(config.sim, planner),
                config.eval.episodes,
                configs,
                seed,
                ("cycle", cycle, "harden"),
            )

            report.cycles.append(
                CycleEntry(
                    cycle=cycle,
                    npc_id=npc_id,
                    ego_id=ego_id,
                    falsification_opponent_id=previous_ego.id,
                    crash_rate_falsification=falsification.crash_rate,
                    crash_rate_hardening=hardening.crash_rate,
                    npc_training_episodes=len(npc_training.trace),
                    ego_training_episodes=len(ego_training.trace),
                    npc_training_crash_rate=npc_training.trace.final_crash_rate,
                    ego_training_crash_rate=ego_training.trace.final_crash_rate,
                    npc_mean_return=_mean_return(npc_training.trace),
                    ego_mean_return=_mean_return(ego_training.trace),
                    npc_tournament_crash_rate=npc_tournament.crash_rate,
                    ego_tournament_crash_rate=ego_tournament.crash_rate,
                    npc_rating=npc_record.elo,
                    ego_rating=ego_record.elo,
                )
            )
            logger.info(
                f"循环{cycle}完成: CR({npc_id} vs {previous_ego.id})={falsification.crash_rate:.3f}, "
                f"CR({ego_id} vs {npc_id})={hardening.crash_rate:.3f}"
            )
            if on_cycle_end is not None:
                on_cycle_end(cycle, result)

        report.crash_matrix = cross_table(
            simulator,
            ego_pool.policies(config.sim, planner),
            npc_pool.policies(config.sim, planner),
            config.eval.episodes,
            configs,
            seed,
            jobs,
        )
        report.completed = True
    except Exception as e:
        report.error = str(e)
        logger.error(f"安全加固中断: {e}")
        raise HardeningError(f"安全加固中断: {e}", partial_report=report) from e
    return result
