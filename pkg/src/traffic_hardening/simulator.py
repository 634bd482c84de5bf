"""
两车道高速公路仿真器

运动学自行车模型 + 一阶速度控制 + 两级车道保持转向，
元动作以决策步为单位执行，每个决策步内积分多个子步并逐子步检测碰撞。
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import TerminalStateError
from .models import (
    InitialConfig,
    KinematicsDelta,
    MetaAction,
    ObservationParams,
    SimConfig,
    StepEvents,
    TerminationReason,
    VehicleState,
    WorldState,
)

logger = logging.getLogger(__name__)

_MIN_SPEED = 1e-2


def wrap_to_pi(angle: float) -> float:
    """把角度映射到 [-pi, pi)"""
    if -math.pi <= angle < math.pi:
        return angle
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _corners(vehicle: VehicleState) -> List[Tuple[float, float]]:
    c, s = math.cos(vehicle.psi), math.sin(vehicle.psi)
    hl, hw = vehicle.length / 2.0, vehicle.width / 2.0
    return [
        (vehicle.x + c * dx - s * dy, vehicle.y + s * dx + c * dy)
        for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))
    ]


def _axes(vehicle: VehicleState) -> List[Tuple[float, float]]:
    c, s = math.cos(vehicle.psi), math.sin(vehicle.psi)
    return [(c, s), (-s, c)]


def separation(a: VehicleState, b: VehicleState) -> float:
    """
    两个有向矩形在分离轴上的最大间隙

    Returns:
        正数表示存在分离轴 (不相交)，负数表示在所有轴上都有重叠
    """
    corners_a = _corners(a)
    corners_b = _corners(b)
    gap = -math.inf
    for ax, ay in _axes(a) + _axes(b):
        proj_a = [px * ax + py * ay for px, py in corners_a]
        proj_b = [px * ax + py * ay for px, py in corners_b]
        gap = max(gap, min(proj_b) - max(proj_a), min(proj_a) - max(proj_b))
    return gap


def detect_collision(a: VehicleState, b: VehicleState) -> bool:
    """
    分离轴碰撞检测

    Args:
        a: 车辆a
        b: 车辆b

    Returns:
        两个有向矩形是否重叠
    """
    # 外接圆快速排除
    reach = (math.hypot(a.length, a.width) + math.hypot(b.length, b.width)) / 2.0
    if (a.x - b.x) ** 2 + (a.y - b.y) ** 2 > reach * reach:
        return False
    return separation(a, b) < 0.0


def observe(
    world: WorldState,
    agent_index: int,
    params: ObservationParams,
    augment: Optional[float] = None,
) -> np.ndarray:
    """
    提取归一化观测向量

    观测者一行使用绝对量，其他车辆一行使用相对观测者的量，
    每行为 [presence, x, y, vx, vy]，全部裁剪到 [-1, 1]。

    Args:
        world: 世界状态
        agent_index: 观测者下标
        params: 归一化范围
        augment: 可选的对手标记 (0 或 1)，追加到末尾

    Returns:
        长度为10 (或带标记时11) 的 float64 向量
    """
    if not 0 <= agent_index < len(world.vehicles):
        raise IndexError(f"无效的车辆下标: {agent_index}")
    me = world.vehicles[agent_index]
    xr, yr, vr = params.x_range, params.y_range, params.v_range
    me_vx, me_vy = me.vx, me.vy

    rows = [[1.0, me.x / xr, me.y / yr, me_vx / vr, me_vy / vr]]
    for index, other in enumerate(world.vehicles):
        if index == agent_index:
            continue
        rows.append(
            [
                1.0,
                (other.x - me.x) / xr,
                (other.y - me.y) / yr,
                (other.vx - me_vx) / vr,
                (other.vy - me_vy) / vr,
            ]
        )
    features = np.clip(np.asarray(rows, dtype=np.float64).ravel(), -1.0, 1.0)
    if augment is None:
        return features
    if augment not in (0, 1):
        raise ValueError(f"对手标记只能是0或1: {augment}")
    return np.append(features, float(augment))


class HighwaySimulator:
    """
    确定性两车道仿真器

    仿真器本身无状态，所有方法都以 WorldState 为值输入，
    step_decision 返回新的世界状态而不修改输入。
    """

    def __init__(self, config: Optional[SimConfig] = None):
        self.config = config or SimConfig()

    @property
    def geometry(self):
        return self.config.geometry

    @property
    def control(self):
        return self.config.control

    def spawn(self, initial: InitialConfig, rng: np.random.Generator) -> WorldState:
        """
        按初始配置生成世界状态

        Args:
            initial: 初始配置
            rng: 随机数生成器，固定调用3次 (两车初速度和纵向扰动)

        Returns:
            新的世界状态
        """
        spawn = self.config.spawn
        geometry = self.geometry
        lo, hi = spawn.speed_range
        ego_speed = float(rng.uniform(lo, hi))
        npc_speed = float(rng.uniform(lo, hi))
        jitter = float(rng.uniform(-spawn.jitter, spawn.jitter))
        if initial.is_adjacent:
            # 并排配置严格对齐，扰动照常抽取以保持随机数消耗固定
            jitter = 0.0

        vehicles = []
        for lane, x, speed in (
            (initial.ego_lane, 0.0, ego_speed),
            (initial.npc_lane, initial.longitudinal_offset + jitter, npc_speed),
        ):
            vehicles.append(
                VehicleState(
                    x=x,
                    y=geometry.lane_center(lane),
                    psi=0.0,
                    v=speed,
                    lane=lane,
                    target_speed=min(self.control.v_max, max(self.control.v_min, speed)),
                    target_lane=lane,
                    length=geometry.vehicle_length,
                    width=geometry.vehicle_width,
                )
            )
        return WorldState(vehicles=vehicles, config_id=initial.id)

    def apply_meta_action(self, vehicle: VehicleState, action: MetaAction) -> None:
        """更新单车的速度设定值和目标车道"""
        control = self.control
        action = MetaAction(action)
        if action is MetaAction.FASTER:
            vehicle.target_speed = min(control.v_max, vehicle.target_speed + control.speed_delta)
        elif action is MetaAction.SLOWER:
            vehicle.target_speed = max(control.v_min, vehicle.target_speed - control.speed_delta)
        elif action is MetaAction.LANE_LEFT:
            vehicle.target_lane = max(0, vehicle.target_lane - 1)
        elif action is MetaAction.LANE_RIGHT:
            vehicle.target_lane = min(self.geometry.n_lanes - 1, vehicle.target_lane + 1)

    def steering_command(self, vehicle: VehicleState) -> float:
        """车道保持转向: 横向位置P控制给出航向设定，航向P控制给出转角"""
        control = self.control
        speed = max(vehicle.v, _MIN_SPEED)
        y_target = self.geometry.lane_center(vehicle.target_lane)

        lateral_speed_cmd = -(vehicle.y - y_target) / control.tau_lateral
        heading_cmd = math.asin(min(1.0, max(-1.0, lateral_speed_cmd / speed)))
        heading_ref = min(math.pi / 4, max(-math.pi / 4, heading_cmd))
        heading_rate_cmd = wrap_to_pi(heading_ref - vehicle.psi) / control.tau_heading

        slip = math.asin(
            min(1.0, max(-1.0, vehicle.length / 2.0 / speed * heading_rate_cmd))
        )
        steering = math.atan(2.0 * math.tan(slip))
        return min(control.max_steering, max(-control.max_steering, steering))

    def _integrate(self, vehicle: VehicleState, steering: float) -> None:
        control = self.control
        dt, tau = control.dt, control.tau_speed
        v_target = vehicle.target_speed
        decay = math.exp(-dt / tau)

        # 一阶速度响应的精确解
        distance = v_target * dt + (vehicle.v - v_target) * tau * (1.0 - decay)
        beta = math.atan(0.5 * math.tan(steering))
        direction = vehicle.psi + beta

        vehicle.x += distance * math.cos(direction)
        vehicle.y += distance * math.sin(direction)
        if beta != 0.0:
            vehicle.psi = wrap_to_pi(vehicle.psi + distance * math.sin(beta) / (vehicle.length / 2.0))
        vehicle.v = max(0.0, v_target + (vehicle.v - v_target) * decay)
        vehicle.lane = self.geometry.nearest_lane(vehicle.y)

    def is_on_road(self, vehicle: VehicleState) -> bool:
        lo, hi = self.geometry.road_bounds
        return lo <= vehicle.y <= hi

    def step_decision(
        self,
        world: WorldState,
        ego_action: MetaAction,
        npc_action: MetaAction,
    ) -> Tuple[WorldState, StepEvents]:
        """
        执行一个决策步

        Args:
            world: 当前世界状态 (不会被修改)
            ego_action: Ego 的元动作
            npc_action: NPC 的元动作

        Returns:
            (新世界状态, 事件)

        Raises:
            TerminalStateError: 世界已经终止 (碰撞、超时或驶出道路)
        """
        reason = self.is_terminal(world)
        if reason is not TerminationReason.NOT_DONE:
            raise TerminalStateError(f"不能在已终止的世界状态上继续仿真: {reason.value}")

        new_world = world.copy()
        vehicles = new_world.vehicles
        before = [(v.x, v.y, v.psi, v.v) for v in vehicles]
        for vehicle, action in zip(vehicles, (ego_action, npc_action)):
            self.apply_meta_action(vehicle, action)

        collision = False
        off_road = False
        substeps_run = 0
        for _ in range(self.control.substeps):
            steering = [self.steering_command(v) for v in vehicles]
            for vehicle, delta in zip(vehicles, steering):
                self._integrate(vehicle, delta)
            new_world.sim_time += self.control.dt
            substeps_run += 1
            if not all(self.is_on_road(v) for v in vehicles):
                off_road = True
            if detect_collision(vehicles[0], vehicles[1]):
                collision = True
                break

        new_world.step_count += 1
        new_world.collided = world.collided or collision
        new_world.off_road = off_road
        deltas = [
            KinematicsDelta(v.x - x, v.y - y, v.psi - psi, v.v - speed)
            for v, (x, y, psi, speed) in zip(vehicles, before)
        ]
        if collision:
            logger.debug(f"第{new_world.step_count}个决策步发生碰撞 (子步{substeps_run})")
        elif off_road:
            logger.debug(f"第{new_world.step_count}个决策步有车辆驶出道路")
        return new_world, StepEvents(collision, off_road, substeps_run, deltas)

    def observe(
        self, world: WorldState, agent_index: int, augment: Optional[float] = None
    ) -> np.ndarray:
        return observe(world, agent_index, self.config.observation, augment)

    def is_terminal(self, world: WorldState) -> TerminationReason:
        """按 碰撞 > 超时 > 驶出道路 的顺序判定终止原因"""
        if world.collided:
            return TerminationReason.COLLISION
        if world.step_count >= self.config.limits.max_decision_steps:
            return TerminationReason.TIMEOUT
        if world.off_road or not all(self.is_on_road(v) for v in world.vehicles):
            return TerminationReason.OFF_ROAD
        return TerminationReason.NOT_DONE

    def replay(
        self, initial_world: WorldState, actions: Sequence[Tuple[int, int]]
    ) -> Tuple[WorldState, TerminationReason]:
        """从初始状态按动作序列重新仿真"""
        world = initial_world.copy()
        reason = self.is_terminal(world)
        for ego_action, npc_action in actions:
            if reason is not TerminationReason.NOT_DONE:
                break
            world, _ = self.step_decision(world, MetaAction(ego_action), MetaAction(npc_action))
            reason = self.is_terminal(world)
        return world, reason
