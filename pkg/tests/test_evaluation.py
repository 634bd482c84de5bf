"""
测试评估、交叉矩阵、速度轨迹实验与轨迹存档
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# 添加src目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from traffic_hardening.dqn import EpisodeRecord, TrainingTrace
from traffic_hardening.evaluation import (
    CrashRateSeries,
    MatchupMatrix,
    SpeedTraceResult,
    accumulated_reward,
    cross_table,
    evaluate_matchup,
    speed_trace_experiment,
)
from traffic_hardening.models import ConfigId, Role, TerminationReason
from traffic_hardening.network import Mlp
from traffic_hardening.policies import NetworkPolicy, RuleBasedPolicy
from traffic_hardening.rollout import FalsificationArchive, Trajectory, play_episode, replay_trajectory
from traffic_hardening.simulator import HighwaySimulator

CONFIGS = [ConfigId.BL, ConfigId.AR, ConfigId.FC]


@pytest.fixture
def sim():
    return HighwaySimulator()


@pytest.fixture
def ego():
    return RuleBasedPolicy(name="E_0")


@pytest.fixture
def npc():
    net = Mlp.initialize(10, np.random.default_rng(0), hidden=(16, 16))
    return NetworkPolicy(net, adversarial=True, name="V_1")


class TestCrashRateSeries:
    """测试滚动碰撞率"""

    def test_rolling_window(self):
        series = CrashRateSeries(3, [True, False, True, True, False])
        assert series.rolling() == pytest.approx([1.0, 0.5, 2 / 3, 2 / 3, 2 / 3])
        assert series.current == pytest.approx(2 / 3)
        assert series.overall == pytest.approx(0.6)

    def test_empty(self):
        series = CrashRateSeries()
        assert series.rolling() == []
        assert series.current == 0.0

    def test_from_trace(self):
        trace = TrainingTrace(role=Role.NPC, window=2)
        for i, crashed in enumerate((True, True, False)):
            trace.records.append(
                EpisodeRecord(i, 10 * (i + 1), 0.0, crashed, 0.0, 0.1, None, 25.0, "E_0", "BL", 10, "timeout")
            )
        assert CrashRateSeries.from_trace(trace).rolling() == [1.0, 1.0, 0.5]

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            CrashRateSeries(0)


class TestMatchupMatrix:
    """测试交叉评估矩阵"""

    def test_means(self):
        matrix = MatchupMatrix.from_cells(["E_0", "E_1"], ["V_1", "V_2", "V_3"], [[0.1, 0.2, 0.3], [0.0, 0.0, 0.6]], 10)
        assert matrix.row_means == pytest.approx([0.2, 0.2])
        assert matrix.col_means == pytest.approx([0.05, 0.1, 0.45])
        assert matrix.overall_mean == pytest.approx(0.2)
        assert matrix.cell("E_1", "V_3") == 0.6

    def test_shape_validated(self):
        with pytest.raises(ValidationError):
            MatchupMatrix(
                ego_ids=["E_0"], npc_ids=["V_1"], cells=[[0.1, 0.2]], episodes=1,
                row_means=[0.1], col_means=[0.1], overall_mean=0.1,
            )

    def test_range_validated(self):
        with pytest.raises(ValidationError):
            MatchupMatrix.from_cells(["E_0"], ["V_1"], [[1.5]], 1)


class TestEvaluateMatchup:
    """测试贪心对阵评估"""

    def test_episode_count_and_configs(self, sim, ego, npc):
        result = evaluate_matchup(sim, ego, npc, 6, CONFIGS, seed=1)
        assert result.episodes == 6
        assert result.ego_id == "E_0" and result.npc_id == "V_1"
        assert {log.config_id for log in result.logs} <= {c.value for c in CONFIGS}
        assert 0.0 <= result.crash_rate <= 1.0
        assert result.crashes == sum(log.reason == "collision" for log in result.logs)
        assert all(1 <= log.steps <= 40 for log in result.logs)

    def test_deterministic(self, sim, ego, npc):
        first = evaluate_matchup(sim, ego, npc, 4, CONFIGS, seed=2, keys=("k",))
        second = evaluate_matchup(sim, ego, npc, 4, CONFIGS, seed=2, keys=("k",))
        assert first.logs == second.logs

    def test_invalid(self, sim, ego, npc):
        with pytest.raises(ValueError):
            evaluate_matchup(sim, ego, npc, 0, CONFIGS, seed=0)
        with pytest.raises(ValueError):
            evaluate_matchup(sim, ego, npc, 1, [], seed=0)

    def test_archive_only_keeps_collisions(self, sim, ego, npc):
        archive = FalsificationArchive()
        result = evaluate_matchup(sim, ego, npc, 5, CONFIGS, seed=3, archive=archive)
        assert len(archive) == result.crashes
        assert all(t.reason is TerminationReason.COLLISION for t in archive)


class TestCrossTable:
    """测试交叉评估"""

    def test_cells_match_single_evaluation(self, sim, ego, npc):
        egos = [("E_0", ego)]
        npcs = [("V_0", RuleBasedPolicy(name="V_0")), ("V_1", npc)]
        matrix = cross_table(sim, egos, npcs, 3, CONFIGS, seed=4)
        assert matrix.ego_ids == ["E_0"] and matrix.npc_ids == ["V_0", "V_1"]
        expected = evaluate_matchup(sim, ego, npc, 3, CONFIGS, 4, ("cross", "E_0", "V_1")).crash_rate
        assert matrix.cell("E_0", "V_1") == expected

    def test_parallel_matches_serial(self, sim, ego, npc):
        egos = [("E_0", ego), ("E_1", RuleBasedPolicy(name="E_1"))]
        npcs = [("V_1", npc)]
        serial = cross_table(sim, egos, npcs, 2, CONFIGS, seed=5)
        parallel = cross_table(sim, egos, npcs, 2, CONFIGS, seed=5, jobs=2)
        assert serial.cells == parallel.cells

    def test_empty(self, sim, ego):
        with pytest.raises(ValueError):
            cross_table(sim, [("E_0", ego)], [], 1, CONFIGS, seed=0)


class TestSpeedTrace:
    """测试行为预测实验"""

    def test_rows_and_summaries(self, sim, ego, npc):
        opponents = [RuleBasedPolicy(name="idm_mobil"), npc]
        result = speed_trace_experiment(sim, ego, opponents, 3, [ConfigId.BL], seed=6, nominal_range=(20.0, 20.5))
        assert len(result.rows) == 6
        assert [s.opponent for s in result.summaries] == ["idm_mobil", "V_1"]
        adversarial = result.summary_for("V_1", ego="E_0")
        assert adversarial.opponent_adversarial
        assert adversarial.episodes == 3
        for summary in result.summaries:
            assert 0.0 <= summary.in_band_fraction <= 1.0
            assert summary.in_band_fraction + summary.above_band_fraction <= 1.0 + 1e-12

    def test_steady_steps_skip_prefix(self, sim, ego):
        opponent = RuleBasedPolicy(name="idm_mobil")
        result = speed_trace_experiment(
            sim, ego, [opponent], 2, [ConfigId.FC], seed=7, nominal_range=(20.0, 30.0), skip_steps=5
        )
        evaluation = evaluate_matchup(sim, ego, opponent, 2, [ConfigId.FC], 7, ("speed", "idm_mobil"))
        expected = sum(max(0, log.steps - 5) for log in evaluation.logs)
        assert result.summaries[0].steady_steps == expected

    def test_appends_to_existing(self, sim, ego):
        opponent = RuleBasedPolicy(name="idm_mobil")
        result = speed_trace_experiment(sim, ego, [opponent], 1, [ConfigId.BL], 0, (20.0, 30.0))
        speed_trace_experiment(sim, RuleBasedPolicy(name="E_1"), [opponent], 1, [ConfigId.BL], 0, (20.0, 30.0), result=result)
        assert [s.ego for s in result.summaries] == ["E_0", "E_1"]

    def test_missing_summary(self):
        with pytest.raises(KeyError):
            SpeedTraceResult().summary_for("nobody")


class TestAccumulatedReward:
    """测试累计奖励"""

    def test_step_rewards(self):
        series = accumulated_reward([[1.0, 2.0], [0.5], []])
        assert series.returns == [3.0, 0.5, 0.0]
        assert series.smoothed == series.returns

    def test_smoothing(self):
        series = accumulated_reward([[1.0], [3.0], [5.0]], window=2)
        assert series.smoothed == pytest.approx([1.0, 2.0, 4.0])

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            accumulated_reward([], window=0)


class TestRollout:
    """测试回合推演与轨迹复现"""

    def test_replay_reproduces_outcome(self, sim, ego, npc):
        for seed in range(4):
            outcome = play_episode(sim, ego, npc, ConfigId.AR, np.random.default_rng(seed))
            _, reason = replay_trajectory(sim, outcome.trajectory)
            assert reason is outcome.reason
            assert len(outcome.ego_speeds) == outcome.steps

    def test_trajectory_dict_round_trip(self, sim, ego, npc):
        outcome = play_episode(sim, ego, npc, "BL", np.random.default_rng(1))
        restored = Trajectory.from_dict(outcome.trajectory.to_dict())
        assert restored.actions == outcome.trajectory.actions
        assert restored.initial_world == outcome.trajectory.initial_world
        assert restored.ego_name == "E_0"

    def test_archive_capacity_and_persistence(self, sim, ego, npc, tmp_path):
        outcome = play_episode(sim, ego, npc, ConfigId.BC, np.random.default_rng(2))
        crash = Trajectory.from_dict(outcome.trajectory.to_dict())
        crash.reason = TerminationReason.COLLISION
        timeout = Trajectory.from_dict(outcome.trajectory.to_dict())
        timeout.reason = TerminationReason.TIMEOUT

        archive = FalsificationArchive(capacity=1)
        assert not archive.add(timeout)
        assert archive.add(crash)
        assert not archive.add(crash)
        assert len(archive) == 1 and archive.seen == 2

        loaded = FalsificationArchive.load(archive.save(tmp_path / "archive.jsonl"))
        assert len(loaded) == 1
        assert next(iter(loaded)).actions == crash.actions

    def test_load_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            FalsificationArchive.load(tmp_path / "missing.jsonl")


class TestRuleVersusRule:
    """测试两辆规则车对阵时几乎不发生碰撞"""

    def test_crash_rate_near_zero_on_all_configs(self, sim):
        ego, npc = RuleBasedPolicy(name="E_0"), RuleBasedPolicy(name="V_0")
        total = 0
        for config_id in ConfigId:
            result = evaluate_matchup(sim, ego, npc, 20, [config_id], seed=11, keys=("rule", config_id.value))
            assert result.crash_rate <= 0.05, config_id
            total += result.crashes
        assert total / (20 * len(ConfigId)) <= 0.01

    @pytest.mark.parametrize("config_id", [ConfigId.BC, ConfigId.FC])
    def test_same_lane_configs_never_crash(self, sim, config_id):
        result = evaluate_matchup(sim, RuleBasedPolicy(), RuleBasedPolicy(), 30, [config_id], seed=23)
        assert result.crashes == 0
