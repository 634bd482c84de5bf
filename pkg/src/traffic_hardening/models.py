"""
仿真核心的数据类型定义

包含元动作、初始配置、车辆与世界状态，以及仿真器各部分的参数模型。
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

EGO_INDEX = 0
NPC_INDEX = 1


class MetaAction(IntEnum):
    """离散元动作空间"""

    LANE_LEFT = 0
    IDLE = 1
    LANE_RIGHT = 2
    FASTER = 3
    SLOWER = 4


N_ACTIONS = len(MetaAction)


class Role(str, Enum):
    """智能体角色"""

    EGO = "ego"
    NPC = "npc"

    @property
    def vehicle_index(self) -> int:
        """该角色在 WorldState.vehicles 中的下标"""
        return EGO_INDEX if self is Role.EGO else NPC_INDEX

    @property
    def opposite(self) -> "Role":
        return Role.NPC if self is Role.EGO else Role.EGO


class ConfigId(str, Enum):
    """
    八种初始配置

    第一个字母表示NPC相对Ego的纵向位置 (B=后方, A=并排, F=前方)，
    第二个字母表示NPC所在车道 (L=左侧, C=同车道, R=右侧)。
    """

    BL = "BL"
    BC = "BC"
    BR = "BR"
    AL = "AL"
    AR = "AR"
    FL = "FL"
    FC = "FC"
    FR = "FR"


class TerminationReason(str, Enum):
    """回合终止原因"""

    NOT_DONE = "not_done"
    COLLISION = "collision"
    TIMEOUT = "timeout"
    OFF_ROAD = "off_road"


# 车道0为左车道，车道1为右车道；(ego车道, npc车道, 纵向偏移符号)
_CONFIG_LAYOUT: Dict[ConfigId, Tuple[int, int, int]] = {
    ConfigId.BL: (1, 0, -1),
    ConfigId.BC: (1, 1, -1),
    ConfigId.BR: (0, 1, -1),
    ConfigId.AL: (1, 0, 0),
    ConfigId.AR: (0, 1, 0),
    ConfigId.FL: (1, 0, 1),
    ConfigId.FC: (1, 1, 1),
    ConfigId.FR: (0, 1, 1),
}

CONFIG_SETS: Dict[str, List[ConfigId]] = {
    "all": list(ConfigId),
    "behind": [ConfigId.BL, ConfigId.BC, ConfigId.BR],
    "behind_left": [ConfigId.BL],
}


def resolve_config_set(value: Union[str, List[Any], None]) -> List[ConfigId]:
    """
    把配置集合名称或列表解析为 ConfigId 列表

    Args:
        value: 集合名称 ("all", "behind", "behind_left") 或配置id列表

    Returns:
        去重后保持原顺序的 ConfigId 列表
    """
    if value is None:
        return list(ConfigId)
    if isinstance(value, str):
        key = value.strip().lower()
        if key in CONFIG_SETS:
            return list(CONFIG_SETS[key])
        value = [part for part in value.replace(",", " ").split() if part]

    resolved: List[ConfigId] = []
    for item in value:
        try:
            config_id = ConfigId(item.upper() if isinstance(item, str) else item)
        except ValueError:
            raise ValueError(f"未知的初始配置: {item}")
        if config_id not in resolved:
            resolved.append(config_id)
    if not resolved:
        raise ValueError("初始配置集合不能为空")
    return resolved


class InitialConfig(BaseModel):
    """
    一个初始配置的几何描述

    Attributes:
        id: 配置标识
        ego_lane: Ego 所在车道
        npc_lane: NPC 所在车道
        longitudinal_offset: NPC 相对 Ego 的纵向偏移 (m)，后方为负
        is_adjacent: 是否为并排配置 (AL/AR)
    """

    id: ConfigId
    ego_lane: int = Field(ge=0, le=1)
    npc_lane: int = Field(ge=0, le=1)
    longitudinal_offset: float
    is_adjacent: bool

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def validate_layout(self):
        """验证偏移符号与车道关系"""
        ego_lane, npc_lane, sign = _CONFIG_LAYOUT[self.id]
        if (self.ego_lane, self.npc_lane) != (ego_lane, npc_lane):
            raise ValueError(f"配置{self.id.value}的车道布局不正确")
        if sign == 0 and self.longitudinal_offset != 0.0:
            raise ValueError("并排配置的纵向偏移必须为0")
        if sign < 0 and not self.longitudinal_offset < 0:
            raise ValueError("后方配置的纵向偏移必须为负")
        if sign > 0 and not self.longitudinal_offset > 0:
            raise ValueError("前方配置的纵向偏移必须为正")
        if self.is_adjacent != (sign == 0):
            raise ValueError("is_adjacent 只对 AL/AR 成立")
        return self

    @classmethod
    def from_id(cls, config_id: Union[ConfigId, str], offset: float = 25.0) -> "InitialConfig":
        """按配置表构造初始配置"""
        config_id = ConfigId(config_id)
        ego_lane, npc_lane, sign = _CONFIG_LAYOUT[config_id]
        return cls(
            id=config_id,
            ego_lane=ego_lane,
            npc_lane=npc_lane,
            longitudinal_offset=float(sign) * abs(offset),
            is_adjacent=sign == 0,
        )

    @classmethod
    def enumerate(cls, offset: float = 25.0) -> List["InitialConfig"]:
        return [cls.from_id(config_id, offset) for config_id in ConfigId]


class GeometryParams(BaseModel):
    """道路与车辆几何参数"""

    lane_width: float = Field(default=4.0, gt=0, description="车道宽度 (m)")
    n_lanes: int = Field(default=2, ge=2, le=2, description="车道数，固定为2")
    vehicle_length: float = Field(default=5.0, gt=0, description="车长 (m)")
    vehicle_width: float = Field(default=2.0, gt=0, description="车宽 (m)")

    model_config = ConfigDict(validate_assignment=True, extra="forbid")

    def lane_center(self, lane: int) -> float:
        return lane * self.lane_width

    @property
    def road_bounds(self) -> Tuple[float, float]:
        """车辆中心允许的横向范围"""
        return -self.lane_width / 2.0, self.lane_width * (self.n_lanes - 0.5)

    def nearest_lane(self, y: float) -> int:
        lane = int(round(y / self.lane_width))
        return min(self.n_lanes - 1, max(0, lane))


class ControlParams(BaseModel):
    """元动作与底层控制器参数"""

    dt: float = Field(default=1.0 / 15.0, gt=0, description="积分子步长 (s)")
    substeps: int = Field(default=15, ge=1, description="每个决策步的子步数")
    speed_delta: float = Field(default=5.0, gt=0, description="Faster/Slower 的目标速度增量")
    v_min: float = Field(default=20.0, ge=0, description="目标速度下限")
    v_max: float = Field(default=30.0, gt=0, description="目标速度上限")
    tau_speed: float = Field(default=0.5, gt=0, description="速度控制时间常数")
    tau_lateral: float = Field(default=0.6, gt=0, description="横向位置控制时间常数")
    tau_heading: float = Field(default=0.2, gt=0, description="航向控制时间常数")
    max_steering: float = Field(default=math.pi / 4, gt=0, le=math.pi / 2)

    model_config = ConfigDict(validate_assignment=True, extra="forbid")

    @model_validator(mode="after")
    def validate_speed_range(self):
        if self.v_min > self.v_max:
            raise ValueError(f"v_min({self.v_min})不能大于v_max({self.v_max})")
        return self

    @property
    def decision_period(self) -> float:
        return self.dt * self.substeps


class SpawnParams(BaseModel):
    """初始状态采样参数"""

    offset: float = Field(default=25.0, gt=0, description="纵向偏移幅值 (m)")
    jitter: float = Field(default=5.0, ge=0, description="前后配置纵向偏移的均匀扰动幅值 (m)，并排配置不加扰动")
    speed_range: Tuple[float, float] = Field(default=(20.0, 30.0), description="初速度区间")
    config_set: List[ConfigId] = Field(default_factory=lambda: list(ConfigId))

    model_config = ConfigDict(validate_assignment=True, extra="forbid")

    @field_validator("config_set", mode="before")
    @classmethod
    def parse_config_set(cls, v):
        """允许使用集合名称"""
        return resolve_config_set(v)

    @field_validator("speed_range")
    @classmethod
    def validate_speed_range(cls, v):
        lo, hi = v
        if lo < 0 or lo > hi:
            raise ValueError(f"初速度区间不合法: {v}")
        return v

    @model_validator(mode="after")
    def validate_jitter(self):
        if self.jitter >= self.offset:
            raise ValueError("扰动幅值必须小于偏移幅值，否则前后配置会互相混淆")
        return self


class EpisodeLimits(BaseModel):
    max_decision_steps: int = Field(default=40, ge=1)

    model_config = ConfigDict(validate_assignment=True, extra="forbid")


class ObservationParams(BaseModel):
    """观测归一化范围"""

    x_range: float = Field(default=100.0, gt=0)
    y_range: float = Field(default=12.0, gt=0)
    v_range: float = Field(default=40.0, gt=0)

    model_config = ConfigDict(validate_assignment=True, extra="forbid")


class SimConfig(BaseModel):
    """仿真器完整配置"""

    geometry: GeometryParams = Field(default_factory=GeometryParams)
    control: ControlParams = Field(default_factory=ControlParams)
    spawn: SpawnParams = Field(default_factory=SpawnParams)
    limits: EpisodeLimits = Field(default_factory=EpisodeLimits)
    observation: ObservationParams = Field(default_factory=ObservationParams)

    model_config = ConfigDict(validate_assignment=True, extra="forbid")


@dataclass
class VehicleState:
    """
    单车状态

    Attributes:
        x: 纵向位置 (m)
        y: 横向位置 (m)，向右为正
        psi: 航向角 (rad)
        v: 沿航向的速度 (m/s)
        lane: 当前所在车道
        target_speed: 速度设定值
        target_lane: 目标车道
        length: 车长
        width: 车宽
    """

    x: float
    y: float
    psi: float
    v: float
    lane: int
    target_speed: float
    target_lane: int
    length: float = 5.0
    width: float = 2.0

    @property
    def vx(self) -> float:
        return self.v * math.cos(self.psi)

    @property
    def vy(self) -> float:
        return self.v * math.sin(self.psi)

    @property
    def changing_lane(self) -> bool:
        return self.target_lane != self.lane

    def copy(self) -> "VehicleState":
        return replace(self)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "x": self.x,
            "y": self.y,
            "psi": self.psi,
            "v": self.v,
            "lane": self.lane,
            "target_speed": self.target_speed,
            "target_lane": self.target_lane,
            "length": self.length,
            "width": self.width,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "VehicleState":
        return cls(**data)


@dataclass
class WorldState:
    """
    世界状态，vehicles[0] 为 Ego，vehicles[1] 为 NPC

    collided 一旦为真在本回合内保持为真。
    """

    vehicles: List[VehicleState]
    sim_time: float = 0.0
    step_count: int = 0
    collided: bool = False
    off_road: bool = False
    config_id: Optional[ConfigId] = None

    def __post_init__(self):
        if len(self.vehicles) != 2:
            raise ValueError(f"世界状态必须恰好包含2辆车，实际为{len(self.vehicles)}")

    @property
    def ego(self) -> VehicleState:
        return self.vehicles[EGO_INDEX]

    @property
    def npc(self) -> VehicleState:
        return self.vehicles[NPC_INDEX]

    def copy(self) -> "WorldState":
        return WorldState(
            vehicles=[vehicle.copy() for vehicle in self.vehicles],
            sim_time=self.sim_time,
            step_count=self.step_count,
            collided=self.collided,
            off_road=self.off_road,
            config_id=self.config_id,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "vehicles": [vehicle.to_dict() for vehicle in self.vehicles],
            "sim_time": self.sim_time,
            "step_count": self.step_count,
            "collided": self.collided,
            "off_road": self.off_road,
            "config_id": self.config_id.value if self.config_id else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "WorldState":
        config_id = data.get("config_id")
        return cls(
            vehicles=[VehicleState.from_dict(v) for v in data["vehicles"]],
            sim_time=data.get("sim_time", 0.0),
            step_count=data.get("step_count", 0),
            collided=data.get("collided", False),
            off_road=data.get("off_road", False),
            config_id=ConfigId(config_id) if config_id else None,
        )


@dataclass(frozen=True)
class KinematicsDelta:
    """一个决策步内单车的运动学增量"""

    dx: float
    dy: float
    dpsi: float
    dv: float


@dataclass
class StepEvents:
    """step_decision 的附加事件信息"""

    collision: bool
    off_road: bool
    substeps_run: int
    deltas: List[KinematicsDelta] = field(default_factory=list)
