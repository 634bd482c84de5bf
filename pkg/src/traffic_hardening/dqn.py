"""
Double DQN 智能体

ε-greedy 动作选择、比例优先经验回放、重要性加权的 Bellman 损失、
目标网络的指数滑动平均更新，以及按角色运行的训练循环。
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import NotReadyError
from .models import (
    N_ACTIONS,
    ConfigId,
    InitialConfig,
    MetaAction,
    Role,
    TerminationReason,
)
from .network import AdamState, Mlp, adam_step
from .policies import Policy
from .rewards import RewardConfig, role_reward
from .rollout import FalsificationArchive, Trajectory
from .simulator import HighwaySimulator

logger = logging.getLogger(__name__)


class DqnHyperParams(BaseModel):
    """
    DQN 超参数

    Attributes:
        gamma: 折扣因子
        tau: 目标网络滑动平均系数
        lr: Adam 学习率
        hidden: 隐藏层宽度
        epsilon_start / epsilon_end: ε 线性衰减的起止值
        epsilon_decay_fraction: 衰减所占训练预算的比例
        epsilon_decay_steps: 显式衰减步数，设置后覆盖比例
        batch_size: 批大小
        buffer_capacity: 回放池容量
        warmup_size: 开始训练前的最少样本数
        train_interval: 每多少个环境步做一次梯度更新
        alpha: 优先级指数
        beta_start / beta_end: 重要性采样指数的线性区间
        priority_eps: 优先级下限 ε_p
        transitions: 每次训练的环境步预算
    """

    gamma: float = Field(default=0.95, gt=0, lt=1)
    tau: float = Field(default=0.005, gt=0, le=1)
    lr: float = Field(default=5e-4, gt=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    hidden: Tuple[int, ...] = Field(default=(256, 256))
    epsilon_start: float = Field(default=1.0, ge=0, le=1)
    epsilon_end: float = Field(default=0.05, ge=0, le=1)
    epsilon_decay_fraction: float = Field(default=0.2, gt=0, le=1)
    epsilon_decay_steps: Optional[int] = Field(default=None, ge=1)
    batch_size: int = Field(default=64, ge=1)
    buffer_capacity: int = Field(default=50_000, ge=1)
    warmup_size: int = Field(default=1_000, ge=1)
    train_interval: int = Field(default=1, ge=1)
    alpha: float = Field(default=0.6, ge=0)
    beta_start: float = Field(default=0.4, ge=0, le=1)
    beta_end: float = Field(default=1.0, ge=0, le=1)
    priority_eps: float = Field(default=1e-3, gt=0)
    transitions: int = Field(default=200_000, ge=0)

    model_config = ConfigDict(validate_assignment=True, extra="forbid")

    @model_validator(mode="after")
    def validate_schedules(self):
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end 不能大于 epsilon_start")
        if any(width < 1 for width in self.hidden):
            raise ValueError(f"隐藏层宽度必须为正: {self.hidden}")
        if self.warmup_size > self.buffer_capacity:
            raise ValueError("warmup_size 不能超过 buffer_capacity")
        return self

    def decay_steps(self, budget: int) -> int:
        if self.epsilon_decay_steps is not None:
            return self.epsilon_decay_steps
        return max(1, int(round(self.epsilon_decay_fraction * budget)))

    def epsilon_at(self, step: int, budget: int) -> float:
        """线性衰减的 ε，步数超过衰减期后保持 epsilon_end"""
        fraction = min(1.0, step / self.decay_steps(budget))
        return self.epsilon_start + fraction * (self.epsilon_end - self.epsilon_start)

    def beta_at(self, step: int, budget: int) -> float:
        fraction = min(1.0, step / max(1, budget))
        return self.beta_start + fraction * (self.beta_end - self.beta_start)


@dataclass
class Transition:
    """经验元组 (S, A, R, S', done)，priority 为空时以当前最大优先级入池"""

    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    priority: Optional[float] = None

    def __post_init__(self):
        if np.shape(self.obs) != np.shape(self.next_obs):
            raise ValueError("obs 与 next_obs 的维度必须一致")
        if self.priority is not None and not self.priority > 0:
            raise ValueError(f"优先级必须为正: {self.priority}")
        if not 0 <= int(self.action) < N_ACTIONS:
            raise ValueError(f"无效的动作下标: {self.action}")


@dataclass
class SampledBatch:
    indices: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return int(self.indices.shape[0])


class ReplayBuffer:
    """
    比例优先经验回放 (环形存储)

    Args:
        capacity: 容量
        obs_dim: 观测维度
        alpha: 优先级指数，P(i) ∝ p_i^α
    """

    def __init__(self, capacity: int, obs_dim: int, alpha: float = 0.6):
        if capacity < 1:
            raise ValueError(f"回放池容量必须为正: {capacity}")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.alpha = alpha
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.priorities = np.zeros(capacity)
        self.max_priority = 1.0
        self.size = 0
        self.position = 0

    def __len__(self) -> int:
        return self.size

    def push(self, transition: Transition) -> int:
        """写入一条经验，返回其存储下标"""
        if np.shape(transition.obs) != (self.obs_dim,):
            raise ValueError(f"观测维度{np.shape(transition.obs)}与回放池维度{self.obs_dim}不一致")
        priority = transition.priority if transition.priority is not None else self.max_priority
        index = self.position
        self.obs[index] = transition.obs
        self.next_obs[index] = transition.next_obs
        self.actions[index] = int(transition.action)
        self.rewards[index] = transition.reward
        self.dones[index] = transition.done
        self.priorities[index] = priority
        self.max_priority = max(self.max_priority, priority)
        self.position = (self.position + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return index

    def probabilities(self) -> np.ndarray:
        scaled = self.priorities[: self.size] ** self.alpha
        return scaled / scaled.sum()

    def sample(self, batch_size: int, rng: np.random.Generator, beta: float) -> SampledBatch:
        """
        按优先级有放回采样

        Returns:
            批数据，weights 为按最大值归一化的重要性权重 (N·P(i))^(−β)
        """
        if self.size == 0:
            raise NotReadyError("回放池为空")
        probs = self.probabilities()
        indices = rng.choice(self.size, size=batch_size, replace=True, p=probs)
        weights = (self.size * probs[indices]) ** (-beta)
        weights = weights / weights.max()
        return SampledBatch(
            indices=indices,
            obs=self.obs[indices],
            actions=self.actions[indices],
            rewards=self.rewards[indices],
            next_obs=self.next_obs[indices],
            dones=self.dones[indices],
            weights=weights,
        )

    def update_priorities(self, indices: np.ndarray, td_errors: np.ndarray, eps: float) -> None:
        priorities = np.abs(np.asarray(td_errors, dtype=np.float64)) + eps
        self.priorities[np.asarray(indices)] = priorities
        self.max_priority = max(self.max_priority, float(priorities.max()))


def select_action(
    net: Mlp, obs: np.ndarray, epsilon: float, rng: np.random.Generator
) -> MetaAction:
    """
    ε-greedy 动作选择

    以概率 ε 均匀随机，否则取 Q 值最大的动作 (并列时取最小下标)。
    ε=0 时不消耗随机数。
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon 必须在[0, 1]内: {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return MetaAction(int(rng.integers(N_ACTIONS)))
    return MetaAction(int(np.argmax(net.forward(obs))))


def double_dqn_target(value_net: Mlp, target_net: Mlp, transition: Transition, gamma: float) -> float:
    """r (终止) 或 r + γ·Q_target(s', argmax_a Q_value(s', a))"""
    if transition.done:
        return float(transition.reward)
    best = int(np.argmax(value_net.forward(transition.next_obs)))
    return float(transition.reward + gamma * target_net.forward(transition.next_obs)[best])


def double_dqn_targets(
    value_net: Mlp,
    target_net: Mlp,
    rewards: np.ndarray,
    next_obs: np.ndarray,
    dones: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """批量版本的 Double DQN 目标"""
    best = np.argmax(value_net.forward(next_obs), axis=1)
    bootstrap = target_net.forward(next_obs)[np.arange(len(best)), best]
    return rewards + gamma * np.where(dones, 0.0, bootstrap)


@dataclass
class TrainStats:
    loss: float
    td_errors: np.ndarray

    @property
    def mean_abs_td(self) -> float:
        return float(np.mean(np.abs(self.td_errors)))


class DqnAgent:
    """
    价值网络 + 目标网络

    目标网络只通过滑动平均更新，从不接收梯度。
    """

    def __init__(self, value_net: Mlp, hp: DqnHyperParams, target_net: Optional[Mlp] = None):
        self.value_net = value_net
        self.target_net = target_net if target_net is not None else value_net.copy()
        if not self.value_net.same_shape(self.target_net):
            raise ValueError("价值网络与目标网络形状不一致")
        self.hp = hp
        self.optimizer = AdamState.for_network(
            value_net, lr=hp.lr, beta1=hp.adam_beta1, beta2=hp.adam_beta2, eps=hp.adam_eps
        )
        self.updates = 0

    @classmethod
    def create(cls, input_dim: int, hp: DqnHyperParams, rng: np.random.Generator) -> "DqnAgent":
        return cls(Mlp.initialize(input_dim, rng, hidden=hp.hidden), hp)

    def batch_loss(self, batch: SampledBatch) -> float:
        """重要性加权的平方TD误差均值 (不更新参数)"""
        td = self._td_errors(batch)[1]
        return float(np.mean(batch.weights * td * td))

    def _td_errors(self, batch: SampledBatch) -> Tuple[np.ndarray, np.ndarray]:
        q = self.value_net.forward(batch.obs)
        targets = double_dqn_targets(
            self.value_net, self.target_net, batch.rewards, batch.next_obs, batch.dones, self.hp.gamma
        )
        q_taken = q[np.arange(len(batch)), batch.actions]
        return q, targets - q_taken

    def learn_from_batch(self, batch: SampledBatch) -> TrainStats:
        """在给定批上执行一次 Adam 更新和一次目标网络滑动平均"""
        q, td = self._td_errors(batch)
        size = len(batch)
        loss = float(np.mean(batch.weights * td * td))

        upstream = np.zeros_like(q)
        upstream[np.arange(size), batch.actions] = -2.0 * batch.weights * td / size
        grads = self.value_net.backward(batch.obs, upstream)
        adam_step(self.value_net, grads, self.optimizer)
        self.target_net.soft_update_from(self.value_net, self.hp.tau)
        self.updates += 1
        return TrainStats(loss=loss, td_errors=td)

    def train_step(self, buffer: ReplayBuffer, rng: np.random.Generator, beta: float) -> TrainStats:
        """
        采样、更新价值网络、回写优先级

        Raises:
            NotReadyError: 回放池样本数少于 warmup_size
        """
        if len(buffer) < self.hp.warmup_size:
            raise NotReadyError(f"回放池样本数({len(buffer)})少于预热数量({self.hp.warmup_size})")
        batch = buffer.sample(self.hp.batch_size, rng, beta)
        stats = self.learn_from_batch(batch)
        buffer.update_priorities(batch.indices, stats.td_errors, self.hp.priority_eps)
        return stats


@dataclass
class Opponent:
    """训练时的一个对手"""

    record_id: str
    policy: Policy

    @property
    def adversarial(self) -> bool:
        return self.policy.adversarial


class OpponentProvider(ABC):
    """训练对手的来源"""

    @abstractmethod
    def sample(self, rng: np.random.Generator) -> Opponent:
        """为下一个训练回合选择对手"""

    def record_outcome(self, opponent: Opponent, config_id: ConfigId, crashed: bool) -> Optional[float]:
        """
        回合结束后的回调

        Returns:
            受训智能体的最新评分 (不维护评分时为 None)
        """
        return None


class FixedOpponent(OpponentProvider):
    """始终使用同一个对手"""

    def __init__(self, policy: Policy, record_id: Optional[str] = None):
        self.opponent = Opponent(record_id or policy.name, policy)

    def sample(self, rng: np.random.Generator) -> Opponent:
        return self.opponent


@dataclass
class EpisodeRecord:
    """训练轨迹中的一行"""

    episode: int
    transitions: int
    accumulated_reward: float
    crashed: bool
    rolling_crash_rate_100: float
    epsilon: float
    elo: Optional[float]
    mean_speed: float
    opponent_id: str
    config_id: str
    steps: int
    reason: str


@dataclass
class TrainingTrace:
    """逐回合训练记录"""

    role: Role
    window: int = 100
    records: List[EpisodeRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def crash_flags(self) -> List[bool]:
        return [record.crashed for record in self.records]

    @property
    def rewards(self) -> List[float]:
        return [record.accumulated_reward for record in self.records]

    @property
    def final_crash_rate(self) -> float:
        return self.records[-1].rolling_crash_rate_100 if self.records else 0.0

    def rolling_crash_rate(self) -> float:
        recent = self.crash_flags[-self.window :]
        return sum(recent) / len(recent) if recent else 0.0


@dataclass
class TrainingResult:
    net: Mlp
    trace: TrainingTrace
    agent: Optional[DqnAgent] = None


def run_training(
    role: Role,
    opponents: OpponentProvider,
    simulator: HighwaySimulator,
    rewards: RewardConfig,
    hp: DqnHyperParams,
    budget: int,
    rng: np.random.Generator,
    initial_net: Optional[Mlp] = None,
    augmented: bool = False,
    config_set: Optional[Sequence[ConfigId]] = None,
    archive: Optional[FalsificationArchive] = None,
    log_every: int = 100,
) -> TrainingResult:
    """
    训练一个 DQN 智能体

    每回合均匀采样初始配置并向 opponents 请求对手；每个决策步 ε-greedy 选动作、
    推进仿真、按角色计算奖励、写入回放池，并按 train_interval 训练。
    只有碰撞和驶出道路视为终止，超时的最后一步仍然自举。

    Args:
        role: 受训智能体角色
        opponents: 对手提供者
        simulator: 仿真器
        rewards: 奖励配置
        hp: 超参数
        budget: 环境步预算
        rng: 随机数生成器
        initial_net: 热启动网络 (会被复制，不会被修改)
        augmented: 观测是否追加对手标记
        config_set: 初始配置集合，默认使用仿真配置中的集合
        archive: 碰撞轨迹存档
        log_every: 每多少回合输出一次进度

    Returns:
        训练后的网络与训练轨迹
    """
    if budget < 0:
        raise ValueError(f"训练预算不能为负: {budget}")
    input_dim = 11 if augmented else 10
    if initial_net is not None:
        if initial_net.input_dim != input_dim:
            raise ValueError(f"热启动网络输入维度({initial_net.input_dim})与观测维度({input_dim})不一致")
        value_net = initial_net.copy()
    else:
        value_net = Mlp.initialize(input_dim, rng, hidden=hp.hidden)

    agent = DqnAgent(value_net, hp)
    trace = TrainingTrace(role=role)
    if budget == 0:
        return TrainingResult(net=value_net, trace=trace, agent=agent)

    configs = list(config_set) if config_set else list(simulator.config.spawn.config_set)
    buffer = ReplayBuffer(hp.buffer_capacity, input_dim, hp.alpha)
    own_index = role.vehicle_index
    opponent_index = role.opposite.vehicle_index
    lane_width = simulator.geometry.lane_width
    offset = simulator.config.spawn.offset

    transitions = 0
    logger.info(f"开始训练{role.value}智能体，预算{budget}步，初始配置{[c.value for c in configs]}")
    while transitions < budget:
        config_id = configs[int(rng.integers(len(configs)))]
        world = simulator.spawn(InitialConfig.from_id(config_id, offset), rng)
        opponent = opponents.sample(rng)
        flag = (1.0 if opponent.adversarial else 0.0) if augmented else None
        obs = simulator.observe(world, own_index, flag)
        trajectory = Trajectory(config_id=config_id, initial_world=world.copy())

        total_reward = 0.0
        speeds: List[float] = []
        epsilon = hp.epsilon_at(transitions, budget)
        reason = TerminationReason.NOT_DONE
        while transitions < budget:
            epsilon = hp.epsilon_at(transitions, budget)
            own_action = select_action(value_net, obs, epsilon, rng)
            opponent_action = opponent.policy.act(
                world, opponent_index, opponent_adversarial=role is Role.NPC
            )
            if role is Role.EGO:
                ego_action, npc_action = own_action, opponent_action
            else:
                ego_action, npc_action = opponent_action, own_action

            next_world, events = simulator.step_decision(world, ego_action, npc_action)
            reward = role_reward(
                role, world, own_action, next_world, rewards, events.collision, lane_width
            )
            reason = simulator.is_terminal(next_world)
            next_obs = simulator.observe(next_world, own_index, flag)
            done = reason in (TerminationReason.COLLISION, TerminationReason.OFF_ROAD)
            buffer.push(Transition(obs, int(own_action), reward, next_obs, done))

            transitions += 1
            total_reward += reward
            speeds.append(next_world.vehicles[own_index].v)
            trajectory.actions.append((int(ego_action), int(npc_action)))
            if len(buffer) >= hp.warmup_size and transitions % hp.train_interval == 0:
                agent.train_step(buffer, rng, hp.beta_at(transitions, budget))

            world, obs = next_world, next_obs
            if reason is not TerminationReason.NOT_DONE:
                break

        if reason is TerminationReason.NOT_DONE:
            # 预算耗尽时未完成的回合不计入轨迹
            break

        crashed = reason is TerminationReason.COLLISION
        trajectory.reason = reason
        if role is Role.NPC:
            trajectory.ego_name, trajectory.npc_name = opponent.record_id, "trainee"
        else:
            trajectory.ego_name, trajectory.npc_name = "trainee", opponent.record_id
        if archive is not None:
            archive.add(trajectory)

        elo = opponents.record_outcome(opponent, config_id, crashed)
        trace.records.append(
            EpisodeRecord(
                episode=len(trace.records),
                transitions=transitions,
                accumulated_reward=total_reward,
                crashed=crashed,
                rolling_crash_rate_100=0.0,
                epsilon=epsilon,
                elo=elo,
                mean_speed=float(np.mean(speeds)),
                opponent_id=opponent.record_id,
                config_id=config_id.value,
                steps=len(speeds),
                reason=reason.value,
            )
        )
        trace.records[-1].rolling_crash_rate_100 = trace.rolling_crash_rate()
        if log_every and len(trace.records) % log_every == 0:
            logger.info(
                f"回合{len(trace.records)}: 步数{transitions}/{budget}, "
                f"滚动碰撞率{trace.final_crash_rate:.3f}, ε={epsilon:.3f}"
            )

    logger.info(f"训练结束: {len(trace.records)}个回合，最终滚动碰撞率{trace.final_crash_rate:.3f}")
    return TrainingResult(net=value_net, trace=trace, agent=agent)
