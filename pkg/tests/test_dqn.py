"""
测试 Double DQN 组件与训练循环
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# 添加src目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from traffic_hardening.dqn import (
    DqnAgent,
    DqnHyperParams,
    FixedOpponent,
    ReplayBuffer,
    SampledBatch,
    Transition,
    double_dqn_target,
    double_dqn_targets,
    run_training,
    select_action,
)
from traffic_hardening.errors import NotReadyError
from traffic_hardening.models import MetaAction, Role
from traffic_hardening.network import Mlp
from traffic_hardening.policies import RuleBasedPolicy
from traffic_hardening.rewards import RewardConfig
from traffic_hardening.simulator import HighwaySimulator


def _transition(priority=None, reward=0.0, done=False, dim=10):
    return Transition(np.zeros(dim), 0, reward, np.zeros(dim), done, priority)


def _constant_net(values):
    """输出与输入无关的单层网络"""
    return Mlp([np.zeros((10, 5))], [np.asarray(values, dtype=float)])


def _tiny_hp(**kwargs):
    params = dict(hidden=(16, 16), batch_size=8, buffer_capacity=500, warmup_size=16)
    params.update(kwargs)
    return DqnHyperParams(**params)


class TestHyperParams:
    """测试超参数与调度"""

    def test_epsilon_schedule(self):
        hp = DqnHyperParams()
        assert hp.decay_steps(1000) == 200
        assert hp.epsilon_at(0, 1000) == 1.0
        assert hp.epsilon_at(100, 1000) == pytest.approx(0.525)
        assert hp.epsilon_at(200, 1000) == pytest.approx(0.05)
        assert hp.epsilon_at(900, 1000) == pytest.approx(0.05)

    def test_explicit_decay_steps(self):
        hp = DqnHyperParams(epsilon_decay_steps=10)
        assert hp.epsilon_at(5, 10_000) == pytest.approx(0.525)

    def test_beta_schedule(self):
        hp = DqnHyperParams()
        assert hp.beta_at(0, 100) == pytest.approx(0.4)
        assert hp.beta_at(100, 100) == pytest.approx(1.0)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            DqnHyperParams(epsilon_start=0.1, epsilon_end=0.5)
        with pytest.raises(ValidationError):
            DqnHyperParams(warmup_size=100, buffer_capacity=10)
        with pytest.raises(ValidationError):
            DqnHyperParams(gamma=1.0)


class TestReplayBuffer:
    """测试比例优先经验回放"""

    def test_priority_law(self):
        """测试 P(i) = p_i^α / Σ p^α"""
        buffer = ReplayBuffer(3, 10, alpha=1.0)
        for priority in (8.0, 1.0, 1.0):
            buffer.push(_transition(priority))
        np.testing.assert_allclose(buffer.probabilities(), [0.8, 0.1, 0.1])

    def test_empirical_frequencies(self):
        """测试大量采样时经验频率接近理论概率"""
        rng = np.random.default_rng(7)
        buffer = ReplayBuffer(10, 10, alpha=0.6)
        for priority in rng.uniform(0.1, 5.0, size=10):
            buffer.push(_transition(float(priority)))
        batch = buffer.sample(100_000, np.random.default_rng(11), beta=0.4)
        counts = np.bincount(batch.indices, minlength=10) / 100_000
        np.testing.assert_allclose(counts, buffer.probabilities(), atol=0.005)

    def test_importance_weights_normalized(self):
        buffer = ReplayBuffer(4, 10, alpha=1.0)
        for priority in (4.0, 1.0, 2.0, 1.0):
            buffer.push(_transition(priority))
        batch = buffer.sample(64, np.random.default_rng(0), beta=1.0)
        assert batch.weights.max() == pytest.approx(1.0)
        assert np.all(batch.weights > 0.0)

    def test_new_transition_gets_max_priority(self):
        buffer = ReplayBuffer(4, 10)
        buffer.push(_transition(3.0))
        index = buffer.push(_transition())
        assert buffer.priorities[index] == 3.0

    def test_ring_overwrite(self):
        buffer = ReplayBuffer(2, 10)
        for reward in (1.0, 2.0, 3.0):
            buffer.push(_transition(reward=reward))
        assert len(buffer) == 2
        assert sorted(buffer.rewards.tolist()) == [2.0, 3.0]

    def test_update_priorities(self):
        buffer = ReplayBuffer(2, 10)
        buffer.push(_transition())
        buffer.push(_transition())
        buffer.update_priorities(np.array([0]), np.array([-4.0]), eps=1e-3)
        assert buffer.priorities[0] == pytest.approx(4.001)
        assert buffer.max_priority == pytest.approx(4.001)

    def test_empty_sample(self):
        with pytest.raises(NotReadyError):
            ReplayBuffer(4, 10).sample(1, np.random.default_rng(0), 0.4)

    def test_invalid_transition(self):
        with pytest.raises(ValueError):
            Transition(np.zeros(10), 7, 0.0, np.zeros(10), False)
        with pytest.raises(ValueError):
            Transition(np.zeros(10), 0, 0.0, np.zeros(11), False)
        with pytest.raises(ValueError):
            _transition(priority=0.0)


class TestActionSelection:
    """测试 ε-greedy"""

    def test_greedy_without_randomness(self):
        net = _constant_net([0.0, 0.0, 1.0, 3.0, 0.0])
        rng = np.random.default_rng(0)
        state = rng.bit_generator.state
        assert select_action(net, np.zeros(10), 0.0, rng) is MetaAction.FASTER
        assert rng.bit_generator.state == state

    def test_ties_pick_lowest_index(self):
        net = _constant_net([1.0, 1.0, 1.0, 1.0, 1.0])
        assert select_action(net, np.zeros(10), 0.0, np.random.default_rng(0)) is MetaAction.LANE_LEFT

    def test_full_exploration_covers_actions(self):
        net = _constant_net([0.0, 0.0, 3.0, 0.0, 0.0])
        rng = np.random.default_rng(1)
        actions = {select_action(net, np.zeros(10), 1.0, rng) for _ in range(200)}
        assert actions == set(MetaAction)

    def test_invalid_epsilon(self):
        with pytest.raises(ValueError):
            select_action(_constant_net([0.0] * 5), np.zeros(10), 1.5, np.random.default_rng(0))


class TestDoubleDqn:
    """测试 Double DQN 目标"""

    def test_value_net_selects_target_net_evaluates(self):
        value = _constant_net([0.0, 5.0, 0.0, 0.0, 0.0])
        target = _constant_net([9.0, 2.0, 3.0, 4.0, 5.0])
        assert double_dqn_target(value, target, _transition(reward=1.0), 0.5) == pytest.approx(2.0)

    def test_terminal_has_no_bootstrap(self):
        value = _constant_net([0.0, 5.0, 0.0, 0.0, 0.0])
        target = _constant_net([9.0, 2.0, 3.0, 4.0, 5.0])
        assert double_dqn_target(value, target, _transition(reward=1.0, done=True), 0.5) == 1.0

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        value = Mlp.initialize(10, rng, hidden=(8,))
        target = Mlp.initialize(10, rng, hidden=(8,))
        transitions = [
            Transition(rng.normal(size=10), 0, float(r), rng.normal(size=10), bool(d))
            for r, d in zip(rng.normal(size=6), (False, True, False, False, True, False))
        ]
        batch = double_dqn_targets(
            value,
            target,
            np.array([t.reward for t in transitions]),
            np.stack([t.next_obs for t in transitions]),
            np.array([t.done for t in transitions]),
            0.9,
        )
        single = [double_dqn_target(value, target, t, 0.9) for t in transitions]
        np.testing.assert_allclose(batch, single)


class TestDqnAgent:
    """测试价值网络更新"""

    def _batch(self, rng, size=16):
        return SampledBatch(
            indices=np.arange(size),
            obs=rng.normal(size=(size, 10)),
            actions=rng.integers(5, size=size),
            rewards=rng.normal(size=size),
            next_obs=rng.normal(size=(size, 10)),
            dones=np.ones(size, dtype=bool),
            weights=np.ones(size),
        )

    def test_loss_decreases_on_terminal_batch(self):
        """测试终止样本上的回归损失随训练下降"""
        rng = np.random.default_rng(4)
        agent = DqnAgent.create(10, _tiny_hp(lr=1e-2), rng)
        batch = self._batch(rng)
        initial = agent.batch_loss(batch)
        for _ in range(200):
            agent.learn_from_batch(batch)
        assert agent.batch_loss(batch) < 0.5 * initial
        assert agent.updates == 200

    def test_loss_strictly_decreases_at_default_lr(self):
        """测试默认学习率下前50次更新的损失逐次严格下降"""
        rng = np.random.default_rng(4)
        hp = _tiny_hp()
        assert hp.lr == 5e-4
        agent = DqnAgent.create(10, hp, rng)
        batch = self._batch(rng)
        losses = [agent.batch_loss(batch)]
        for _ in range(50):
            agent.learn_from_batch(batch)
            losses.append(agent.batch_loss(batch))
        assert all(after < before for before, after in zip(losses, losses[1:]))

    def test_target_net_only_tracks_by_averaging(self):
        rng = np.random.default_rng(5)
        agent = DqnAgent.create(10, _tiny_hp(tau=0.5), rng)
        before_target = agent.target_net.copy()
        agent.learn_from_batch(self._batch(rng))
        for t, v, b in zip(agent.target_net.parameters(), agent.value_net.parameters(), before_target.parameters()):
            np.testing.assert_allclose(t, 0.5 * v + 0.5 * b)

    def test_not_ready(self):
        rng = np.random.default_rng(6)
        agent = DqnAgent.create(10, _tiny_hp(), rng)
        buffer = ReplayBuffer(100, 10)
        for _ in range(5):
            buffer.push(_transition())
        with pytest.raises(NotReadyError):
            agent.train_step(buffer, rng, 0.4)

    def test_train_step_updates_priorities(self):
        rng = np.random.default_rng(8)
        hp = _tiny_hp()
        agent = DqnAgent.create(10, hp, rng)
        buffer = ReplayBuffer(100, 10)
        for i in range(hp.warmup_size):
            buffer.push(Transition(rng.normal(size=10), i % 5, 1.0, rng.normal(size=10), True))
        stats = agent.train_step(buffer, rng, 0.4)
        assert stats.td_errors.shape == (hp.batch_size,)
        assert stats.mean_abs_td >= 0.0
        assert np.all(buffer.priorities[: len(buffer)] >= hp.priority_eps)


class TestRunTraining:
    """测试训练循环"""

    def _run(self, budget, seed=0, **kwargs):
        simulator = HighwaySimulator()
        return run_training(
            Role.NPC,
            FixedOpponent(RuleBasedPolicy()),
            simulator,
            RewardConfig(),
            _tiny_hp(),
            budget,
            np.random.default_rng(seed),
            **kwargs,
        )

    def test_zero_budget(self):
        initial = Mlp.initialize(10, np.random.default_rng(0), hidden=(16, 16))
        result = self._run(0, initial_net=initial)
        assert len(result.trace) == 0
        assert result.net is not initial
        for a, b in zip(result.net.parameters(), initial.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_small_budget_trace(self):
        result = self._run(120)
        records = result.trace.records
        assert len(records) >= 2
        assert records[-1].transitions <= 120
        assert sum(r.steps for r in records) == records[-1].transitions
        assert [r.episode for r in records] == list(range(len(records)))
        for record in records:
            assert 0.0 <= record.rolling_crash_rate_100 <= 1.0
            assert record.crashed == (record.reason == "collision")
            assert record.opponent_id == "idm_mobil"
            assert record.elo is None

    def test_deterministic(self):
        first = self._run(80, seed=3)
        second = self._run(80, seed=3)
        assert first.trace.rewards == second.trace.rewards
        for a, b in zip(first.net.parameters(), second.net.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_warm_start_dimension_checked(self):
        initial = Mlp.initialize(11, np.random.default_rng(0), hidden=(16, 16))
        with pytest.raises(ValueError):
            self._run(10, initial_net=initial)

    def test_negative_budget(self):
        with pytest.raises(ValueError):
            self._run(-1)
