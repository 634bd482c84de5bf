"""
桌面规模的学习验收测试

每个测试需要数分钟到数十分钟的 CPU 时间，默认不运行 (pytest -m slow)。
"""

import sys
from pathlib import Path

import pytest

# 添加src目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from traffic_hardening.api import RULE_BASED_NAME, ExperimentRunner

pytestmark = pytest.mark.slow


class TestFalsification:
    """证伪规则规划器"""

    def test_shaped_reward_falsifies_rule_based(self):
        runner = ExperimentRunner.from_source("falsify_rule_based", jobs=4)
        outcome = runner.falsify(RULE_BASED_NAME)
        assert outcome.training.trace.final_crash_rate >= 0.8
        assert outcome.evaluation.crash_rate >= 0.7

    def test_shaping_beats_sparse_on_all_configs(self):
        overrides = {"dqn.transitions": 200_000, "sim.spawn.config_set": "all"}
        shaped = ExperimentRunner.from_source("falsify_rule_based", overrides).falsify(RULE_BASED_NAME)
        sparse = ExperimentRunner.from_source("falsify_sparse", overrides).falsify(RULE_BASED_NAME)
        assert shaped.evaluation.crash_rate - sparse.evaluation.crash_rate >= 0.2

    def test_sparse_reward_suffices_behind_left(self):
        runner = ExperimentRunner.from_source(
            "falsify_sparse", {"dqn.transitions": 200_000, "sim.spawn.config_set": "behind_left"}
        )
        outcome = runner.falsify(RULE_BASED_NAME)
        assert outcome.training.trace.final_crash_rate >= 0.8


class TestHardening:
    """安全加固方向与遗忘现象"""

    def test_alternating_direction(self):
        result = ExperimentRunner.from_source("harden_local", {"cycles.n_cycles": 2}, jobs=4).harden()
        for entry in result.report.cycles:
            assert entry.crash_rate_falsification - entry.crash_rate_hardening >= 0.2

    def test_local_hardening_forgets_older_npcs(self):
        result = ExperimentRunner.from_source("harden_local", {"cycles.n_cycles": 3}, jobs=4).harden()
        matrix = result.report.crash_matrix
        assert matrix.cell("E_3", "V_1") > matrix.cell("E_3", "V_3")


class TestBehaviourPrediction:
    """带对手标记的 Ego 只在面对对抗 NPC 时改变行为"""

    def test_augmented_ego_keeps_nominal_speed(self, tmp_path):
        augmented_run = ExperimentRunner.from_source("augmented_state", jobs=4)
        augmented_run.harden(tmp_path / "augmented")
        plain_run = ExperimentRunner.from_source("behind_left_overspeed", {"cycles.n_cycles": 1}, jobs=4)
        plain_run.harden(tmp_path / "plain")

        augmented_ego = tmp_path / "augmented" / "ego_pool" / "E_1.mlpw"
        plain_ego = tmp_path / "plain" / "ego_pool" / "E_1.mlpw"
        npc = tmp_path / "augmented" / "npc_pool" / "V_1.mlpw"
        # 两个权重文件同名，分别运行以区分统计
        augmented = augmented_run.speed_trace([augmented_ego], npc)
        plain = plain_run.speed_trace([plain_ego], npc)

        assert augmented.summary_for(RULE_BASED_NAME).in_band_fraction >= 0.9
        assert plain.summary_for(RULE_BASED_NAME).above_band_fraction >= 0.5
        assert augmented.summary_for("V_1").crash_rate <= plain.summary_for("V_1").crash_rate
