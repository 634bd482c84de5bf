"""
测试API接口
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

# 添加src目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from traffic_hardening.api import RULE_BASED_NAME, ExperimentRunner, falsify_rule_based
from traffic_hardening.errors import ConfigError, HardeningError
from traffic_hardening.models import Role
from traffic_hardening.network import Mlp, load_weights, save_weights
from traffic_hardening.policies import NetworkPolicy, RuleBasedPolicy
from traffic_hardening.pool import AgentKind, pool_load

TINY = {
    "dqn.hidden": [16, 16],
    "dqn.batch_size": 8,
    "dqn.buffer_capacity": 200,
    "dqn.warmup_size": 16,
    "dqn.transitions": 30,
    "eval.episodes": 2,
    "cycles.n_cycles": 1,
    "cycles.tournament_episodes_per_pair": 1,
    "cycles.initial_config_set": ["BL", "AL"],
}


def _write_net(path, input_dim=10, seed=0):
    net = Mlp.initialize(input_dim, np.random.default_rng(seed), hidden=(16, 16))
    path.write_bytes(save_weights(net))
    return path


@pytest.fixture
def runner():
    return ExperimentRunner.from_source(None, TINY)


class TestExperimentRunner:
    """测试实验运行器"""

    def test_invalid_jobs(self):
        with pytest.raises(ConfigError):
            ExperimentRunner.from_source(None, TINY, jobs=0)

    def test_resolve_rule_based(self, runner):
        record = runner.resolve_record(RULE_BASED_NAME, Role.EGO)
        assert record.kind is AgentKind.RULE_BASED
        assert isinstance(runner.resolve_policy(RULE_BASED_NAME, Role.NPC), RuleBasedPolicy)

    def test_resolve_weights(self, runner, tmp_path):
        path = _write_net(tmp_path / "my ego.mlpw", input_dim=11)
        record = runner.resolve_record(path, Role.EGO)
        assert record.id == "my_ego"
        assert record.augmented
        policy = runner.resolve_policy(path, Role.EGO)
        assert isinstance(policy, NetworkPolicy) and policy.augmented

    def test_resolve_errors(self, runner, tmp_path):
        with pytest.raises(FileNotFoundError):
            runner.resolve_record(tmp_path / "missing.mlpw", Role.EGO)
        with pytest.raises(ConfigError):
            runner.resolve_record(_write_net(tmp_path / "seven.mlpw", input_dim=7), Role.EGO)
        with pytest.raises(ConfigError):
            runner.resolve_record(_write_net(tmp_path / "aug.mlpw", input_dim=11), Role.NPC)


class TestFalsify:
    """测试证伪"""

    def test_writes_outputs(self, runner, tmp_path):
        outcome = runner.falsify(RULE_BASED_NAME, tmp_path / "run")
        names = {path.name for path in outcome.files}
        assert names == {"npc.mlpw", "trace.csv", "eval_episodes.csv", "summary.json", "archive.jsonl"}
        assert load_weights((tmp_path / "run" / "npc.mlpw").read_bytes()).input_dim == 10

        summary = json.loads((tmp_path / "run" / "summary.json").read_text(encoding="utf-8"))
        assert summary["command"] == "falsify"
        assert summary["planner"] == RULE_BASED_NAME
        assert summary["transitions"] == 30
        assert summary["eval_episodes"] == 2
        assert 0.0 <= summary["eval_crash_rate"] <= 1.0

    def test_without_output(self, runner):
        outcome = runner.falsify(RULE_BASED_NAME)
        assert outcome.files == []
        assert outcome.evaluation.episodes == 2

    def test_dqn_planner(self, runner, tmp_path):
        ego_path = _write_net(tmp_path / "ego.mlpw")
        outcome = runner.falsify(ego_path)
        assert outcome.summary["planner"] == "ego"

    def test_deterministic(self, tmp_path):
        first = ExperimentRunner.from_source(None, TINY).falsify(RULE_BASED_NAME, tmp_path / "a")
        second = ExperimentRunner.from_source(None, TINY).falsify(RULE_BASED_NAME, tmp_path / "b")
        assert (tmp_path / "a" / "npc.mlpw").read_bytes() == (tmp_path / "b" / "npc.mlpw").read_bytes()
        assert (tmp_path / "a" / "trace.csv").read_text() == (tmp_path / "b" / "trace.csv").read_text()
        assert first.summary == second.summary

    def test_convenience_function(self):
        outcome = falsify_rule_based(
            transitions=20,
            seed=1,
            dqn__hidden=[16, 16],
            dqn__batch_size=8,
            dqn__buffer_capacity=200,
            dqn__warmup_size=16,
            eval__episodes=1,
        )
        assert outcome.summary["transitions"] == 20
        assert outcome.evaluation.episodes == 1


class TestHarden:
    """测试安全加固"""

    def test_writes_pools_and_report(self, runner, tmp_path):
        result = runner.harden(tmp_path)
        assert pool_load(tmp_path / "ego_pool").ids == ["E_0", "E_1"]
        assert pool_load(tmp_path / "npc_pool").ids == ["V_1"]
        report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))["report"]
        assert report["completed"] is True
        assert len(report["cycles"]) == 1
        assert (tmp_path / "crash_matrix.csv").exists()
        assert (tmp_path / "traces" / "V_1.csv").exists()
        assert (tmp_path / "tournaments" / "E_1.csv").exists()
        assert result.report.crash_matrix.ego_ids == ["E_0", "E_1"]

    def test_partial_report_on_failure(self, runner, tmp_path):
        def fail(cycle, result):
            raise RuntimeError("interrupted")

        with pytest.raises(HardeningError):
            runner.harden(tmp_path, on_cycle_end=fail)
        report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))["report"]
        assert report["completed"] is False
        assert "interrupted" in report["error"]


class TestEvaluateAndTournament:
    """测试评估与锦标赛"""

    def test_evaluate(self, runner, tmp_path):
        npc_path = _write_net(tmp_path / "npc.mlpw")
        result = runner.evaluate(RULE_BASED_NAME, npc_path, episodes=3, out=tmp_path / "eval")
        assert result.episodes == 3
        assert result.npc_id == "npc"
        assert (tmp_path / "eval" / "episodes.csv").exists()

    def test_tournament_updates_manifest(self, runner, tmp_path):
        runner.harden(tmp_path / "run")
        pool_dir = tmp_path / "run" / "ego_pool"
        agent = _write_net(tmp_path / "V_new.mlpw", seed=9)
        result = runner.tournament(agent, pool_dir, tmp_path / "tournament")
        assert result.episodes == 2 * 1 * 2
        saved = pool_load(pool_dir)
        assert saved.ratings() == {k: v for k, v in result.ratings.items() if k != "V_new"}
        assert (tmp_path / "tournament" / "matches.csv").exists()

    def test_tournament_duplicate_id(self, runner, tmp_path):
        runner.harden(tmp_path / "run")
        agent = _write_net(tmp_path / "E_1.mlpw")
        with pytest.raises(ConfigError):
            runner.tournament(agent, tmp_path / "run" / "ego_pool")


class TestSpeedTrace:
    """测试行为预测实验"""

    def test_speed_trace(self, tmp_path):
        runner = ExperimentRunner.from_source("behind_left_overspeed", {"eval.episodes": 2})
        npc_path = _write_net(tmp_path / "npc.mlpw")
        result = runner.speed_trace([RULE_BASED_NAME], npc_path, out=tmp_path / "speed")
        assert [s.opponent for s in result.summaries] == [RULE_BASED_NAME, "npc"]
        assert len(result.rows) == 4
        assert (tmp_path / "speed" / "speed_summary.csv").exists()
