"""
策略封装

统一规则规划器和 Q 网络的决策接口，供训练、评估与锦标赛使用。
"""

from abc import ABC, abstractmethod
from typing import Optional

import numpy as np

from .models import GeometryParams, MetaAction, ObservationParams, WorldState
from .network import Mlp
from .planners import PlannerParams, rule_based_policy
from .simulator import observe


class Policy(ABC):
    """
    决策策略基类

    Attributes:
        name: 策略名称 (通常为模型池中的记录id)
        adversarial: 该策略作为对手时是否为对抗智能体
    """

    name: str
    adversarial: bool = False

    @abstractmethod
    def act(
        self, world: WorldState, agent_index: int, opponent_adversarial: bool = False
    ) -> MetaAction:
        """
        贪心决策

        Args:
            world: 当前世界状态
            agent_index: 本策略控制的车辆下标
            opponent_adversarial: 对手是否为对抗智能体 (仅增强观测的网络使用)
        """


class RuleBasedPolicy(Policy):
    """IDM+MOBIL 规则规划器"""

    def __init__(
        self,
        params: Optional[PlannerParams] = None,
        geometry: Optional[GeometryParams] = None,
        name: str = "idm_mobil",
    ):
        self.params = params or PlannerParams()
        self.geometry = geometry or GeometryParams()
        self.name = name
        self.adversarial = False

    def act(
        self, world: WorldState, agent_index: int, opponent_adversarial: bool = False
    ) -> MetaAction:
        return rule_based_policy(world, agent_index, self.params, self.geometry)

    def __repr__(self) -> str:
        return f"RuleBasedPolicy(name={self.name!r})"


class NetworkPolicy(Policy):
    """
    Q 网络贪心策略

    Args:
        net: Q 网络
        observation: 观测归一化参数
        augmented: 是否在观测末尾追加对手标记 (输入维度11)
        adversarial: 作为对手时是否视为对抗智能体
        name: 名称
    """

    def __init__(
        self,
        net: Mlp,
        observation: Optional[ObservationParams] = None,
        augmented: bool = False,
        adversarial: bool = False,
        name: str = "dqn",
    ):
        expected = 11 if augmented else 10
        if net.input_dim != expected:
            raise ValueError(f"网络输入维度({net.input_dim})与观测维度({expected})不一致")
        self.net = net
        self.observation = observation or ObservationParams()
        self.augmented = augmented
        self.adversarial = adversarial
        self.name = name

    def observe(
        self, world: WorldState, agent_index: int, opponent_adversarial: bool = False
    ) -> np.ndarray:
        flag = (1.0 if opponent_adversarial else 0.0) if self.augmented else None
        return observe(world, agent_index, self.observation, flag)

    def q_values(
        self, world: WorldState, agent_index: int, opponent_adversarial: bool = False
    ) -> np.ndarray:
        return self.net.forward(self.observe(world, agent_index, opponent_adversarial))

    def act(
        self, world: WorldState, agent_index: int, opponent_adversarial: bool = False
    ) -> MetaAction:
        return MetaAction(int(np.argmax(self.q_values(world, agent_index, opponent_adversarial))))

    def __repr__(self) -> str:
        return f"NetworkPolicy(name={self.name!r}, augmented={self.augmented})"
