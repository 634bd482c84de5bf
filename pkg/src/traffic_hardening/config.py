"""
运行配置

RunConfig 汇总仿真、规划器、奖励、DQN、Elo、循环与评估各节参数，
未知键一律拒绝，所有取值在加载时按各模块的约束校验。
"""

import hashlib
import json
import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .dqn import DqnHyperParams
from .models import ConfigId, SimConfig, resolve_config_set
from .planners import IdmParams, MobilParams, PlannerParams
from .rewards import RewardConfig


class SamplingMethod(str, Enum):
    """安全加固的对手采样方式"""

    LOCAL = "local"
    UNIFORM = "uniform"
    PRIORITIZED = "prioritized"


class EloParams(BaseModel):
    """
    Elo 评分参数

    Attributes:
        initial_rating: 新智能体的初始评分
        zeta: 期望得分的缩放因子，默认 400/ln10 与经典 Elo 曲线一致
        k_default: 一般配置的更新增益
        k_adjacent: 并排配置 (AL/AR) 的更新增益
        beta: 优先采样指数
    """

    initial_rating: float = Field(default=1000.0)
    zeta: float = Field(default=400.0 / math.log(10.0), gt=0)
    k_default: float = Field(default=32.0, gt=0)
    k_adjacent: float = Field(default=8.0, gt=0)
    beta: float = Field(default=1.0, ge=0)

    model_config = ConfigDict(validate_assignment=True, extra="forbid")

    @field_validator("initial_rating")
    @classmethod
    def validate_rating(cls, v):
        if not math.isfinite(v):
            raise ValueError("初始评分必须是有限数")
        return v


class CycleConfig(BaseModel):
    """
    安全加固循环配置

    Attributes:
        n_cycles: 循环次数 C
        method: 对手采样方式
        transitions_per_training: 每次训练的步数，为空时使用 dqn.transitions
        tournament_episodes_per_pair: 锦标赛中每个 (对手, 初始配置) 的回合数
        initial_config_set: 覆盖仿真配置中的初始配置集合
        warm_start: 新智能体是否从同角色上一代权重开始训练
        augmented_ego: Ego 是否使用带对手标记的观测
        rule_based_npc_in_pool: 是否把规则交通车加入 NPC 池
    """

    n_cycles: int = Field(default=1, ge=1)
    method: SamplingMethod = SamplingMethod.LOCAL
    transitions_per_training: Optional[int] = Field(default=None, ge=0)
    tournament_episodes_per_pair: int = Field(default=2, ge=1)
    initial_config_set: Optional[List[ConfigId]] = None
    warm_start: bool = True
    augmented_ego: bool = False
    rule_based_npc_in_pool: bool = False

    model_config = ConfigDict(validate_assignment=True, extra="forbid")

    @field_validator("initial_config_set", mode="before")
    @classmethod
    def parse_config_set(cls, v):
        if v is None:
            return None
        return resolve_config_set(v)


class EvalConfig(BaseModel):
    """评估配置"""

    episodes: int = Field(default=100, ge=1, description="每个对阵的评估回合数")
    rolling_window: int = Field(default=100, ge=1)
    steady_state_skip: int = Field(default=5, ge=0, description="速度统计跳过的起始决策步数")
    smoothing_window: int = Field(default=1, ge=1)
    archive_capacity: Optional[int] = Field(default=1000, ge=0)

    model_config = ConfigDict(validate_assignment=True, extra="forbid")


class RunConfig(BaseModel):
    """一次运行的完整配置"""

    name: str = "default"
    seed: int = Field(default=0, ge=0, lt=2**64)
    sim: SimConfig = Field(default_factory=SimConfig)
    idm: IdmParams = Field(default_factory=IdmParams)
    mobil: MobilParams = Field(default_factory=MobilParams)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    dqn: DqnHyperParams = Field(default_factory=DqnHyperParams)
    elo: EloParams = Field(default_factory=EloParams)
    cycles: CycleConfig = Field(default_factory=CycleConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    model_config = ConfigDict(validate_assignment=True, extra="forbid")

    @property
    def planner(self) -> PlannerParams:
        return PlannerParams(idm=self.idm, mobil=self.mobil)

    @property
    def config_set(self) -> List[ConfigId]:
        """生效的初始配置集合"""
        if self.cycles.initial_config_set:
            return list(self.cycles.initial_config_set)
        return list(self.sim.spawn.config_set)

    @property
    def training_budget(self) -> int:
        if self.cycles.transitions_per_training is not None:
            return self.cycles.transitions_per_training
        return self.dqn.transitions


def canonical_json(config: RunConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(config: RunConfig) -> str:
    """配置的 SHA-256 摘要，嵌入每个输出文件"""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()
