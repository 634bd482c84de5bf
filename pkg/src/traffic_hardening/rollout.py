"""
回合推演与证伪轨迹存档

play_episode 以贪心策略推演一个完整回合；碰撞轨迹可以按 JSON Lines 存档，
并通过 replay_trajectory 在确定性仿真器上逐步复现。
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from .models import (
    EGO_INDEX,
    NPC_INDEX,
    ConfigId,
    InitialConfig,
    TerminationReason,
    WorldState,
)
from .policies import Policy
from .simulator import HighwaySimulator

logger = logging.getLogger(__name__)


@dataclass
class Trajectory:
    """可复现的一条回合轨迹"""

    config_id: ConfigId
    initial_world: WorldState
    actions: List[Tuple[int, int]] = field(default_factory=list)
    reason: TerminationReason = TerminationReason.NOT_DONE
    ego_name: str = ""
    npc_name: str = ""

    @property
    def steps(self) -> int:
        return len(self.actions)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_id": self.config_id.value,
            "initial_world": self.initial_world.to_dict(),
            "actions": [list(pair) for pair in self.actions],
            "reason": self.reason.value,
            "steps": self.steps,
            "ego": self.ego_name,
            "npc": self.npc_name,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Trajectory":
        return cls(
            config_id=ConfigId(data["config_id"]),
            initial_world=WorldState.from_dict(data["initial_world"]),
            actions=[(int(a), int(b)) for a, b in data["actions"]],
            reason=TerminationReason(data["reason"]),
            ego_name=data.get("ego", ""),
            npc_name=data.get("npc", ""),
        )


@dataclass
class EpisodeResult:
    """
    单个回合的结果

    Attributes:
        trajectory: 可复现轨迹
        ego_speeds: 每个决策步结束时 Ego 的速度
        npc_speeds: 每个决策步结束时 NPC 的速度
    """

    trajectory: Trajectory
    ego_speeds: List[float] = field(default_factory=list)
    npc_speeds: List[float] = field(default_factory=list)

    @property
    def reason(self) -> TerminationReason:
        return self.trajectory.reason

    @property
    def crashed(self) -> bool:
        return self.trajectory.reason is TerminationReason.COLLISION

    @property
    def steps(self) -> int:
        return self.trajectory.steps

    @property
    def config_id(self) -> ConfigId:
        return self.trajectory.config_id

    @property
    def mean_ego_speed(self) -> float:
        return float(np.mean(self.ego_speeds)) if self.ego_speeds else 0.0

    @property
    def mean_npc_speed(self) -> float:
        return float(np.mean(self.npc_speeds)) if self.npc_speeds else 0.0


def play_episode(
    simulator: HighwaySimulator,
    ego: Policy,
    npc: Policy,
    config_id: Union[ConfigId, str],
    rng: np.random.Generator,
) -> EpisodeResult:
    """
    贪心推演一个回合

    Args:
        simulator: 仿真器
        ego: Ego 策略
        npc: NPC 策略
        config_id: 初始配置
        rng: 仅用于初始状态采样

    Returns:
        回合结果
    """
    initial = InitialConfig.from_id(config_id, simulator.config.spawn.offset)
    world = simulator.spawn(initial, rng)
    trajectory = Trajectory(
        config_id=initial.id,
        initial_world=world.copy(),
        ego_name=ego.name,
        npc_name=npc.name,
    )
    result = EpisodeResult(trajectory=trajectory)

    reason = simulator.is_terminal(world)
    while reason is TerminationReason.NOT_DONE:
        ego_action = ego.act(world, EGO_INDEX, opponent_adversarial=npc.adversarial)
        npc_action = npc.act(world, NPC_INDEX, opponent_adversarial=ego.adversarial)
        world, _ = simulator.step_decision(world, ego_action, npc_action)
        trajectory.actions.append((int(ego_action), int(npc_action)))
        result.ego_speeds.append(world.vehicles[EGO_INDEX].v)
        result.npc_speeds.append(world.vehicles[NPC_INDEX].v)
        reason = simulator.is_terminal(world)

    trajectory.reason = reason
    return result


def replay_trajectory(
    simulator: HighwaySimulator, trajectory: Trajectory
) -> Tuple[WorldState, TerminationReason]:
    """按存档动作重新仿真，返回最终状态与终止原因"""
    return simulator.replay(trajectory.initial_world, trajectory.actions)


class FalsificationArchive:
    """
    碰撞轨迹存档

    Args:
        capacity: 最多保留的轨迹数，None 表示不限
    """

    def __init__(self, capacity: Optional[int] = None):
        self.capacity = capacity
        self.trajectories: List[Trajectory] = []
        self.seen = 0

    def add(self, trajectory: Trajectory) -> bool:
        """只收录以碰撞结束的轨迹"""
        if trajectory.reason is not TerminationReason.COLLISION:
            return False
        self.seen += 1
        if self.capacity is not None and len(self.trajectories) >= self.capacity:
            return False
        self.trajectories.append(trajectory)
        return True

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for trajectory in self.trajectories:
                f.write(json.dumps(trajectory.to_dict(), sort_keys=True) + "\n")
        logger.info(f"已保存{len(self.trajectories)}条碰撞轨迹到 {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FalsificationArchive":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"轨迹存档不存在: {path}")
        archive = cls()
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    archive.add(Trajectory.from_dict(json.loads(line)))
                except (KeyError, ValueError) as e:
                    raise ValueError(f"轨迹存档第{line_no}行格式错误: {e}")
        return archive
