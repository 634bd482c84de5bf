"""
评估与实验复现

碰撞率序列、贪心对阵评估、交叉评估矩阵、速度轨迹实验和累计奖励。
所有评估都只使用贪心动作，每个回合的随机数流由 (种子, 对阵, 回合) 派生。
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .dqn import TrainingTrace
from .models import ConfigId
from .policies import Policy
from .rollout import EpisodeResult, FalsificationArchive, play_episode
from .seeding import SeedKey, derive_rng
from .simulator import HighwaySimulator

logger = logging.getLogger(__name__)

_BAND_TOLERANCE = 1e-6


class CrashRateSeries:
    """
    逐回合碰撞标记及其滚动碰撞率

    滚动碰撞率为最近 window 个回合 (不足时为全部) 的碰撞数除以回合数。
    """

    def __init__(self, window: int = 100, flags: Optional[Iterable[bool]] = None):
        if window < 1:
            raise ValueError(f"滚动窗口必须为正: {window}")
        self.window = window
        self.flags: List[bool] = [bool(f) for f in (flags or [])]

    @classmethod
    def from_trace(cls, trace: TrainingTrace) -> "CrashRateSeries":
        return cls(trace.window, trace.crash_flags)

    def append(self, crashed: bool) -> None:
        self.flags.append(bool(crashed))

    def extend(self, flags: Iterable[bool]) -> None:
        for flag in flags:
            self.append(flag)

    def __len__(self) -> int:
        return len(self.flags)

    def rolling(self) -> List[float]:
        counts = np.concatenate(([0], np.cumsum(np.asarray(self.flags, dtype=np.int64))))
        rates = []
        for i in range(1, len(self.flags) + 1):
            start = max(0, i - self.window)
            rates.append(int(counts[i] - counts[start]) / (i - start))
        return rates

    @property
    def current(self) -> float:
        recent = self.flags[-self.window :]
        return sum(recent) / len(recent) if recent else 0.0

    @property
    def overall(self) -> float:
        return sum(self.flags) / len(self.flags) if self.flags else 0.0


@dataclass
class EpisodeLog:
    episode: int
    config_id: str
    crashed: bool
    reason: str
    steps: int
    mean_ego_speed: float
    mean_npc_speed: float


@dataclass
class MatchupResult:
    """一组贪心对阵的结果"""

    ego_id: str
    npc_id: str
    logs: List[EpisodeLog] = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return len(self.logs)

    @property
    def crashes(self) -> int:
        return sum(1 for log in self.logs if log.crashed)

    @property
    def crash_rate(self) -> float:
        return self.crashes / len(self.logs) if self.logs else 0.0


def play_matchup(
    simulator: HighwaySimulator,
    ego: Policy,
    npc: Policy,
    episodes: int,
    config_set: Sequence[ConfigId],
    seed: int,
    keys: Tuple[SeedKey, ...] = (),
) -> Iterator[EpisodeResult]:
    """逐回合产出贪心对阵的完整结果"""
    if episodes < 1:
        raise ValueError(f"评估回合数必须为正: {episodes}")
    configs = list(config_set)
    if not configs:
        raise ValueError("初始配置集合不能为空")
    for episode in range(episodes):
        rng = derive_rng(seed, "eval", *keys, episode)
        config_id = configs[int(rng.integers(len(configs)))]
        yield play_episode(simulator, ego, npc, config_id, rng)


def evaluate_matchup(
    simulator: HighwaySimulator,
    ego: Policy,
    npc: Policy,
    episodes: int,
    config_set: Sequence[ConfigId],
    seed: int,
    keys: Tuple[SeedKey, ...] = (),
    archive: Optional[FalsificationArchive] = None,
) -> MatchupResult:
    """
    贪心对阵评估

    Args:
        simulator: 仿真器
        ego: Ego 策略
        npc: NPC 策略
        episodes: 回合数
        config_set: 初始配置集合 (均匀采样)
        seed: 主种子
        keys: 附加的随机流键
        archive: 可选的碰撞轨迹存档

    Returns:
        碰撞率与逐回合日志
    """
    result = MatchupResult(ego_id=ego.name, npc_id=npc.name)
    for episode, outcome in enumerate(
        play_matchup(simulator, ego, npc, episodes, config_set, seed, keys)
    ):
        config_id = outcome.config_id
        if archive is not None:
            archive.add(outcome.trajectory)
        result.logs.append(
            EpisodeLog(
                episode=episode,
                config_id=config_id.value,
                crashed=outcome.crashed,
                reason=outcome.reason.value,
                steps=outcome.steps,
                mean_ego_speed=outcome.mean_ego_speed,
                mean_npc_speed=outcome.mean_npc_speed,
            )
        )
    logger.debug(f"{ego.name} vs {npc.name}: 碰撞率 {result.crash_rate:.3f}")
    return result


class MatchupMatrix(BaseModel):
    """
    交叉评估矩阵，行为 Ego，列为 NPC

    Attributes:
        ego_ids: 行标签
        npc_ids: 列标签
        cells: 碰撞率
        episodes: 每格评估回合数
        row_means: 每个 Ego 的平均碰撞率
        col_means: 每个 NPC 的平均碰撞率
        overall_mean: 全部格子的平均值
    """

    ego_ids: List[str]
    npc_ids: List[str]
    cells: List[List[float]]
    episodes: int = Field(ge=1)
    row_means: List[float]
    col_means: List[float]
    overall_mean: float

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def validate_shape(self):
        if len(self.cells) != len(self.ego_ids):
            raise ValueError("矩阵行数与 Ego 数量不一致")
        for row in self.cells:
            if len(row) != len(self.npc_ids):
                raise ValueError("矩阵列数与 NPC 数量不一致")
            if any(not 0.0 <= value <= 1.0 for value in row):
                raise ValueError("碰撞率必须在[0, 1]内")
        return self

    @classmethod
    def from_cells(
        cls, ego_ids: Sequence[str], npc_ids: Sequence[str], cells: Sequence[Sequence[float]], episodes: int
    ) -> "MatchupMatrix":
        grid = np.asarray(cells, dtype=np.float64).reshape(len(ego_ids), len(npc_ids))
        return cls(
            ego_ids=list(ego_ids),
            npc_ids=list(npc_ids),
            cells=grid.tolist(),
            episodes=episodes,
            row_means=grid.mean(axis=1).tolist(),
            col_means=grid.mean(axis=0).tolist(),
            overall_mean=float(grid.mean()),
        )

    def cell(self, ego_id: str, npc_id: str) -> float:
        return self.cells[self.ego_ids.index(ego_id)][self.npc_ids.index(npc_id)]


PolicyEntry = Tuple[str, Policy]


def _evaluate_cell(task) -> float:
    simulator, ego, npc, episodes, config_set, seed, keys = task
    return evaluate_matchup(simulator, ego, npc, episodes, config_set, seed, keys).crash_rate


def cross_table(
    simulator: HighwaySimulator,
    ego_entries: Sequence[PolicyEntry],
    npc_entries: Sequence[PolicyEntry],
    episodes: int,
    config_set: Sequence[ConfigId],
    seed: int,
    jobs: int = 1,
) -> MatchupMatrix:
    """
    全部 (Ego, NPC) 组合的贪心评估

    每格的随机流由 (种子, Ego id, NPC id, 回合) 派生，并行与否不影响结果。
    """
    if not ego_entries or not npc_entries:
        raise ValueError("交叉评估需要非空的 Ego 池和 NPC 池")
    tasks = [
        (simulator, ego, npc, episodes, list(config_set), seed, ("cross", ego_id, npc_id))
        for ego_id, ego in ego_entries
        for npc_id, npc in npc_entries
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            rates = list(executor.map(_evaluate_cell, tasks))
    else:
        rates = [_evaluate_cell(task) for task in tasks]

    n_npc = len(npc_entries)
    cells = [rates[i * n_npc : (i + 1) * n_npc] for i in range(len(ego_entries))]
    logger.info(f"交叉评估完成: {len(ego_entries)}×{n_npc}，每格{episodes}回合")
    return MatchupMatrix.from_cells(
        [ego_id for ego_id, _ in ego_entries], [npc_id for npc_id, _ in npc_entries], cells, episodes
    )


@dataclass
class SpeedTraceRow:
    ego: str
    opponent: str
    opponent_adversarial: bool
    episode: int
    config_id: str
    steady_mean_speed: float
    in_band_fraction: float
    above_band_fraction: float
    crashed: bool
    rolling_crash_rate: float


@dataclass
class SpeedTraceSummary:
    ego: str
    opponent: str
    opponent_adversarial: bool
    episodes: int
    steady_steps: int
    mean_speed: float
    in_band_fraction: float
    above_band_fraction: float
    crash_rate: float


@dataclass
class SpeedTraceResult:
    rows: List[SpeedTraceRow] = field(default_factory=list)
    summaries: List[SpeedTraceSummary] = field(default_factory=list)

    def summary_for(self, opponent: str, ego: Optional[str] = None) -> SpeedTraceSummary:
        for summary in self.summaries:
            if summary.opponent == opponent and (ego is None or summary.ego == ego):
                return summary
        raise KeyError(f"没有对手{opponent}的速度统计")


def speed_trace_experiment(
    simulator: HighwaySimulator,
    ego: Policy,
    opponents: Sequence[Policy],
    episodes: int,
    config_set: Sequence[ConfigId],
    seed: int,
    nominal_range: Tuple[float, float],
    skip_steps: int = 5,
    window: int = 100,
    result: Optional[SpeedTraceResult] = None,
) -> SpeedTraceResult:
    """
    行为预测实验: 统计 Ego 在稳态决策步中的速度分布和对每类对手的滚动碰撞率

    Args:
        simulator: 仿真器
        ego: 被测 Ego (带或不带对手标记)
        opponents: 对手列表，通常为规则交通车与对抗NPC
        episodes: 每个对手的回合数
        config_set: 初始配置集合
        seed: 主种子
        nominal_range: 名义速度带 [v_lo, v_hi]
        skip_steps: 每回合跳过的起始决策步数
        window: 滚动碰撞率窗口
        result: 追加到已有结果 (用于对比多个 Ego)

    Returns:
        逐回合行与按对手汇总的统计
    """
    result = result if result is not None else SpeedTraceResult()
    v_lo, v_hi = nominal_range
    for opponent in opponents:
        series = CrashRateSeries(window)
        total_steps = in_band = above_band = 0
        speeds_sum = 0.0
        outcomes = play_matchup(
            simulator, ego, opponent, episodes, config_set, seed, ("speed", opponent.name)
        )
        for episode_index, outcome in enumerate(outcomes):
            steady = outcome.ego_speeds[skip_steps:]
            inside = sum(1 for v in steady if v_lo - _BAND_TOLERANCE <= v <= v_hi + _BAND_TOLERANCE)
            above = sum(1 for v in steady if v > v_hi + _BAND_TOLERANCE)
            total_steps += len(steady)
            in_band += inside
            above_band += above
            speeds_sum += float(np.sum(steady))
            series.append(outcome.crashed)
            result.rows.append(
                SpeedTraceRow(
                    ego=ego.name,
                    opponent=opponent.name,
                    opponent_adversarial=opponent.adversarial,
                    episode=episode_index,
                    config_id=outcome.config_id.value,
                    steady_mean_speed=float(np.mean(steady)) if steady else 0.0,
                    in_band_fraction=inside / len(steady) if steady else 0.0,
                    above_band_fraction=above / len(steady) if steady else 0.0,
                    crashed=outcome.crashed,
                    rolling_crash_rate=series.current,
                )
            )
        result.summaries.append(
            SpeedTraceSummary(
                ego=ego.name,
                opponent=opponent.name,
                opponent_adversarial=opponent.adversarial,
                episodes=len(series),
                steady_steps=total_steps,
                mean_speed=speeds_sum / total_steps if total_steps else 0.0,
                in_band_fraction=in_band / total_steps if total_steps else 0.0,
                above_band_fraction=above_band / total_steps if total_steps else 0.0,
                crash_rate=series.overall,
            )
        )
        logger.info(
            f"速度轨迹 {ego.name} vs {opponent.name}: 带内比例"
            f"{result.summaries[-1].in_band_fraction:.3f}, 碰撞率{series.overall:.3f}"
        )
    return result


@dataclass
class AccumulatedRewardSeries:
    returns: List[float]
    smoothed: List[float]


def accumulated_reward(
    source: Union[TrainingTrace, Sequence[Sequence[float]]], window: int = 1
) -> AccumulatedRewardSeries:
    """
    逐回合累计奖励及其尾随滑动平均

    Args:
        source: 训练轨迹，或每回合的逐步奖励序列
        window: 平滑窗口，1 表示不平滑
    """
    if window < 1:
        raise ValueError(f"平滑窗口必须为正: {window}")
    if isinstance(source, TrainingTrace):
        returns = list(source.rewards)
    else:
        returns = [float(sum(episode)) for episode in source]
    if window == 1:
        return AccumulatedRewardSeries(returns, list(returns))
    smoothed = []
    for i in range(len(returns)):
        chunk = returns[max(0, i - window + 1) : i + 1]
        smoothed.append(sum(chunk) / len(chunk))
    return AccumulatedRewardSeries(returns, smoothed)
