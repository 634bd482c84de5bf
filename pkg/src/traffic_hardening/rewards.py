"""
奖励函数

对抗NPC奖励: 稀疏碰撞奖励 + 纵向/横向有符号TTC的sigmoid塑形项；
Ego奖励: 碰撞惩罚 + 速度与车道保持的前进奖励，可选超速惩罚。
"""

import math
from dataclasses import dataclass
from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .models import EGO_INDEX, NPC_INDEX, MetaAction, Role, WorldState


class NpcRewardParams(BaseModel):
    """
    NPC 奖励参数

    Attributes:
        w1: 碰撞项权重
        w2: 纵向TTC项权重
        w3: 横向TTC项权重
        a: sigmoid 偏移
        b: sigmoid 斜率
        eps_v: 相对速度下限，避免TTC奇点
    """

    w1: float = Field(default=400.0, ge=0)
    w2: float = Field(default=4.0, ge=0)
    w3: float = Field(default=1.0, ge=0)
    a: float = Field(default=4.0)
    b: float = Field(default=1.0, gt=0)
    eps_v: float = Field(default=0.01, gt=0)

    model_config = ConfigDict(validate_assignment=True, extra="forbid")


class EgoRewardParams(BaseModel):
    """Ego 奖励参数"""

    collision_penalty: float = Field(default=-1.0, le=0)
    speed_reward_weight: float = Field(default=0.4, ge=0)
    nominal_speed_range: Tuple[float, float] = Field(default=(20.0, 30.0))
    overspeed_penalty_weight: float = Field(default=0.0, ge=0)
    lane_keep_weight: float = Field(default=0.1, ge=0)
    lane_center_tolerance: float = Field(default=0.5, gt=0, description="判定处于车道中心的横向容差 (m)")

    model_config = ConfigDict(validate_assignment=True, extra="forbid")

    @field_validator("nominal_speed_range")
    @classmethod
    def validate_range(cls, v):
        lo, hi = v
        if lo > hi:
            raise ValueError(f"v_lo({lo})不能大于v_hi({hi})")
        return v


class RewardConfig(BaseModel):
    npc: NpcRewardParams = Field(default_factory=NpcRewardParams)
    ego: EgoRewardParams = Field(default_factory=EgoRewardParams)

    model_config = ConfigDict(extra="forbid")


NPC_REWARD_PRESETS = {
    "sparse": NpcRewardParams(w2=0.0, w3=0.0),
    "shaped": NpcRewardParams(),
}


@dataclass(frozen=True)
class RelativeKinematics:
    """
    相对运动学量

    约定 dx = x_ego − x_npc，dvx = vx_npc − vx_ego，接近时 TTC 为正。
    """

    dx: float
    dy: float
    dvx: float
    dvy: float

    @classmethod
    def from_world(cls, world: WorldState) -> "RelativeKinematics":
        ego = world.vehicles[EGO_INDEX]
        npc = world.vehicles[NPC_INDEX]
        return cls(
            dx=ego.x - npc.x,
            dy=ego.y - npc.y,
            dvx=npc.vx - ego.vx,
            dvy=npc.vy - ego.vy,
        )


def _sign(value: float) -> float:
    return -1.0 if value < 0 else 1.0


def signed_ttc(delta_pos: float, delta_vel: float, eps_v: float) -> float:
    """
    有符号碰撞时间

    Args:
        delta_pos: pos_ego − pos_npc
        delta_vel: vel_npc − vel_ego
        eps_v: |delta_vel| 的下限，保留符号 (0 视为正)

    Returns:
        λ = delta_pos / delta_vel，接近为正、远离为负
    """
    denominator = _sign(delta_vel) * max(abs(delta_vel), eps_v)
    return delta_pos / denominator


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def ttc_shaping(lam: float, a: float, b: float) -> float:
    """sign(λ) / (1 + e^(a − b|λ|))，取值在 (−1, 1) 内 (浮点饱和时可达边界)"""
    return _sign(lam) * _logistic(b * abs(lam) - a)


def npc_reward(rel: RelativeKinematics, collided: bool, params: NpcRewardParams) -> float:
    """
    NPC 奖励

    Args:
        rel: 决策步结束时的相对运动学量
        collided: 本步是否发生碰撞
        params: 奖励参数

    Returns:
        w1·r_c + w2·r_x + w3·r_y
    """
    reward = params.w1 * (1.0 if collided else 0.0)
    if params.w2:
        reward += params.w2 * ttc_shaping(signed_ttc(rel.dx, rel.dvx, params.eps_v), params.a, params.b)
    if params.w3:
        reward += params.w3 * ttc_shaping(signed_ttc(rel.dy, rel.dvy, params.eps_v), params.a, params.b)
    return reward


def ego_reward(
    world_before: WorldState,
    action: MetaAction,
    world_after: WorldState,
    params: EgoRewardParams,
    lane_width: float = 4.0,
) -> float:
    """
    Ego 奖励

    速度项和车道保持项按权重和归一化后裁剪到 [−1, 1]，再叠加碰撞惩罚。
    """
    ego = world_after.vehicles[EGO_INDEX]
    v_lo, v_hi = params.nominal_speed_range
    span = v_hi - v_lo
    if span > 0:
        scaled = (ego.v - v_lo) / span
        overspeed = max(0.0, (ego.v - v_hi) / span)
    else:
        scaled = 1.0 if ego.v >= v_hi else 0.0
        overspeed = 1.0 if ego.v > v_hi else 0.0
    speed_term = params.speed_reward_weight * (
        min(1.0, max(0.0, scaled)) - params.overspeed_penalty_weight * overspeed
    )

    on_center = (
        not ego.changing_lane
        and abs(ego.y - ego.lane * lane_width) <= params.lane_center_tolerance
    )
    lane_term = params.lane_keep_weight * (1.0 if on_center else 0.0)

    total_weight = params.speed_reward_weight + params.lane_keep_weight
    progress = (speed_term + lane_term) / total_weight if total_weight > 0 else 0.0
    progress = min(1.0, max(-1.0, progress))
    return progress + params.collision_penalty * (1.0 if world_after.collided else 0.0)


def role_reward(
    role: Role,
    world_before: WorldState,
    action: MetaAction,
    world_after: WorldState,
    config: RewardConfig,
    collision: bool,
    lane_width: float = 4.0,
) -> float:
    """按角色计算一个决策步的奖励"""
    if role is Role.NPC:
        return npc_reward(RelativeKinematics.from_world(world_after), collision, config.npc)
    return ego_reward(world_before, action, world_after, config.ego, lane_width)
