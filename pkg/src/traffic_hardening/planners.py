"""
基于规则的规划器

IDM 纵向跟驰加速度与 MOBIL 换道决策，离散化为元动作后作为基线 Ego (E0)，
也可以作为不具对抗性的 NPC 交通流。
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from .models import GeometryParams, MetaAction, VehicleState, WorldState

logger = logging.getLogger(__name__)


class IdmParams(BaseModel):
    """
    IDM 参数

    Attributes:
        v0: 期望速度 (m/s)
        T: 期望车头时距 (s)
        s0: 最小间距 (m)
        a_max: 最大加速度 (m/s²)
        b_comf: 舒适减速度 (m/s², 正数)
        delta: 加速度指数
        b_hard: 紧急制动减速度，加速度下限为 -b_hard
        accel_deadband: 把连续加速度离散为元动作时的死区 ε_a
    """

    v0: float = Field(default=30.0, gt=0)
    T: float = Field(default=1.5, gt=0)
    s0: float = Field(default=5.0, gt=0)
    a_max: float = Field(default=3.0, gt=0)
    b_comf: float = Field(default=5.0, gt=0)
    delta: float = Field(default=4.0, ge=1)
    b_hard: float = Field(default=10.0, gt=0)
    accel_deadband: float = Field(default=0.2, ge=0)

    model_config = ConfigDict(validate_assignment=True, extra="forbid")


class MobilParams(BaseModel):
    """MOBIL 换道参数"""

    politeness: float = Field(default=0.3, ge=0, le=1)
    delta_a_threshold: float = Field(default=0.2, ge=0)
    b_safe: float = Field(default=4.0, gt=0)

    model_config = ConfigDict(validate_assignment=True, extra="forbid")


class PlannerParams(BaseModel):
    idm: IdmParams = Field(default_factory=IdmParams)
    mobil: MobilParams = Field(default_factory=MobilParams)

    model_config = ConfigDict(extra="forbid")


class LaneDecision(str, Enum):
    STAY = "stay"
    CHANGE_LEFT = "change_left"
    CHANGE_RIGHT = "change_right"


@dataclass(frozen=True)
class IdmResult:
    """IDM 加速度及是否触发紧急制动"""

    acceleration: float
    emergency: bool = False


@dataclass
class NeighborSet:
    """当前车道与两侧车道的前后车，任一都可能不存在"""

    current_leader: Optional[VehicleState] = None
    current_follower: Optional[VehicleState] = None
    left_leader: Optional[VehicleState] = None
    left_follower: Optional[VehicleState] = None
    right_leader: Optional[VehicleState] = None
    right_follower: Optional[VehicleState] = None
    has_left_lane: bool = True
    has_right_lane: bool = True


def bumper_gap(follower: VehicleState, leader: VehicleState) -> float:
    """前后车保险杠之间的净间距"""
    return (leader.x - follower.x) - (leader.length + follower.length) / 2.0


def desired_gap(v: float, dv: float, params: IdmParams) -> float:
    """期望间距 s* = s0 + max(0, vT + vΔv / (2√(ab)))"""
    dynamic = v * params.T + v * dv / (2.0 * math.sqrt(params.a_max * params.b_comf))
    return params.s0 + max(0.0, dynamic)


def idm_acceleration_from_gap(
    v: float, gap: Optional[float], leader_speed: Optional[float], params: IdmParams
) -> IdmResult:
    """
    按标量输入计算 IDM 加速度

    Args:
        v: 本车速度
        gap: 与前车的净间距，无前车时为 None
        leader_speed: 前车速度
        params: IDM 参数

    Returns:
        裁剪到 [-b_hard, a_max] 的加速度
    """
    free_road = 1.0 - (v / params.v0) ** params.delta
    if gap is None:
        acceleration = params.a_max * free_road
    else:
        if gap <= 0.0:
            return IdmResult(-params.b_hard, emergency=True)
        s_star = desired_gap(v, v - leader_speed, params)
        acceleration = params.a_max * (free_road - (s_star / gap) ** 2)
    return IdmResult(min(params.a_max, max(-params.b_hard, acceleration)))


def idm_acceleration(
    follower: VehicleState, leader: Optional[VehicleState], params: IdmParams
) -> IdmResult:
    """计算跟驰车辆相对前车的 IDM 加速度"""
    if leader is None:
        return idm_acceleration_from_gap(follower.v, None, None, params)
    result = idm_acceleration_from_gap(
        follower.v, bumper_gap(follower, leader), leader.v, params
    )
    if result.emergency:
        logger.debug("IDM间距非正，触发紧急制动")
    return result


def find_neighbors(
    world: WorldState, agent_index: int, geometry: GeometryParams
) -> NeighborSet:
    """
    按车道和纵向位置为指定车辆查找前后车

    换道进行中的车辆同时占用当前车道和目标车道。
    """
    me = world.vehicles[agent_index]
    by_lane = {}
    for index, other in enumerate(world.vehicles):
        if index == agent_index:
            continue
        for lane in {other.lane, other.target_lane}:
            leader, follower = by_lane.get(lane, (None, None))
            if other.x >= me.x:
                if leader is None or other.x < leader.x:
                    leader = other
            elif follower is None or other.x > follower.x:
                follower = other
            by_lane[lane] = (leader, follower)

    current = by_lane.get(me.lane, (None, None))
    left = by_lane.get(me.lane - 1, (None, None))
    right = by_lane.get(me.lane + 1, (None, None))
    return NeighborSet(
        current_leader=current[0],
        current_follower=current[1],
        left_leader=left[0],
        left_follower=left[1],
        right_leader=right[0],
        right_follower=right[1],
        has_left_lane=me.lane > 0,
        has_right_lane=me.lane < geometry.n_lanes - 1,
    )


def _accel(follower: Optional[VehicleState], leader: Optional[VehicleState], idm: IdmParams) -> float:
    if follower is None:
        return 0.0
    return idm_acceleration(follower, leader, idm).acceleration


def mobil_decide(
    vehicle: VehicleState,
    neighbors: NeighborSet,
    idm: IdmParams,
    mobil: MobilParams,
) -> LaneDecision:
    """
    MOBIL 换道决策

    安全条件: 目标车道后车被迫减速不超过 b_safe；
    激励条件: ã_c − a_c + p[(ã_n − a_n) + (ã_o − a_o)] > Δa_th。
    两侧都满足时选激励更大的一侧，激励相等则保持车道。
    """
    a_c = _accel(vehicle, neighbors.current_leader, idm)
    a_o = _accel(neighbors.current_follower, vehicle, idm)
    a_o_new = _accel(neighbors.current_follower, neighbors.current_leader, idm)

    candidates = []
    for decision, exists, leader, follower in (
        (LaneDecision.CHANGE_LEFT, neighbors.has_left_lane, neighbors.left_leader, neighbors.left_follower),
        (LaneDecision.CHANGE_RIGHT, neighbors.has_right_lane, neighbors.right_leader, neighbors.right_follower),
    ):
        if not exists:
            continue
        a_n = _accel(follower, leader, idm)
        a_n_new = _accel(follower, vehicle, idm)
        if a_n_new < -mobil.b_safe:
            continue
        a_c_new = _accel(vehicle, leader, idm)
        incentive = a_c_new - a_c + mobil.politeness * ((a_n_new - a_n) + (a_o_new - a_o))
        if incentive > mobil.delta_a_threshold:
            candidates.append((incentive, decision))

    if not candidates:
        return LaneDecision.STAY
    if len(candidates) == 2 and candidates[0][0] == candidates[1][0]:
        return LaneDecision.STAY
    return max(candidates, key=lambda item: item[0])[1]


def lane_change_decision(
    world: WorldState,
    agent_index: int,
    params: PlannerParams,
    geometry: GeometryParams,
) -> LaneDecision:
    """未考虑让行的 MOBIL 决策，换道进行中时保持车道"""
    vehicle = world.vehicles[agent_index]
    if vehicle.changing_lane:
        return LaneDecision.STAY
    neighbors = find_neighbors(world, agent_index, geometry)
    return mobil_decide(vehicle, neighbors, params.idm, params.mobil)


def _index_of(world: WorldState, vehicle: VehicleState) -> int:
    return next(i for i, other in enumerate(world.vehicles) if other is vehicle)


def _following_target(vehicle: VehicleState, neighbors: NeighborSet) -> Optional[VehicleState]:
    """IDM 跟随的前车；换道进行中取两条车道里最近的前车"""
    leaders = [neighbors.current_leader]
    if vehicle.target_lane < vehicle.lane:
        leaders.append(neighbors.left_leader)
    elif vehicle.target_lane > vehicle.lane:
        leaders.append(neighbors.right_leader)
    present = [leader for leader in leaders if leader is not None]
    return min(present, key=lambda leader: leader.x) if present else None


def rule_based_policy(
    world: WorldState,
    agent_index: int,
    params: PlannerParams,
    geometry: GeometryParams,
) -> MetaAction:
    """
    IDM+MOBIL 规划器输出元动作

    换道进行中不再触发新的换道；本车道前车也要换入同一车道时后车让行。
    其余情况 MOBIL 的换道决策优先，否则按 IDM 加速度和死区映射为
    Faster/Slower/Idle。
    """
    if not 0 <= agent_index < len(world.vehicles):
        raise IndexError(f"无效的车辆下标: {agent_index}")
    vehicle = world.vehicles[agent_index]
    neighbors = find_neighbors(world, agent_index, geometry)

    decision = lane_change_decision(world, agent_index, params, geometry)
    leader = neighbors.current_leader
    if decision is not LaneDecision.STAY and leader is not None:
        if lane_change_decision(world, _index_of(world, leader), params, geometry) is decision:
            logger.debug(f"车辆{agent_index}让行前车，放弃{decision.value}")
            decision = LaneDecision.STAY
    if decision is LaneDecision.CHANGE_LEFT:
        return MetaAction.LANE_LEFT
    if decision is LaneDecision.CHANGE_RIGHT:
        return MetaAction.LANE_RIGHT

    acceleration = idm_acceleration(vehicle, _following_target(vehicle, neighbors), params.idm).acceleration
    deadband = params.idm.accel_deadband
    if acceleration > deadband:
        return MetaAction.FASTER
    if acceleration < -deadband:
        return MetaAction.SLOWER
    return MetaAction.IDLE
