"""
测试模型池与持久化
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# 添加src目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from traffic_hardening.errors import PoolError
from traffic_hardening.models import Role, SimConfig
from traffic_hardening.network import Mlp
from traffic_hardening.planners import PlannerParams
from traffic_hardening.policies import NetworkPolicy, RuleBasedPolicy
from traffic_hardening.pool import AgentKind, AgentRecord, ModelPool, pool_load, pool_save


def _net(seed=0, input_dim=10):
    return Mlp.initialize(input_dim, np.random.default_rng(seed), hidden=(8, 8))


def _npc_pool():
    pool = ModelPool(Role.NPC)
    pool.add(AgentRecord.rule_based("V_0", Role.NPC))
    pool.add(AgentRecord.from_network("V_1", Role.NPC, 1, _net(1), elo=1012.5))
    pool.add(AgentRecord.from_network("V_2", Role.NPC, 2, _net(2)))
    return pool


class TestAgentRecord:
    """测试智能体记录"""

    def test_from_network(self):
        record = AgentRecord.from_network("E_1", Role.EGO, 1, _net(input_dim=11))
        assert record.kind is AgentKind.DQN
        assert record.augmented
        assert record.network().input_dim == 11
        assert len(record.weights_hash) == 64

    def test_frozen_identity(self):
        """测试id、角色和权重不可修改，评分可以修改"""
        record = AgentRecord.from_network("E_1", Role.EGO, 1, _net())
        with pytest.raises(ValidationError):
            record.id = "E_9"
        with pytest.raises(ValidationError):
            record.role = Role.NPC
        with pytest.raises(ValidationError):
            record.weights = b""
        record.elo = 990.0
        assert record.elo == 990.0

    def test_weights_required_for_dqn(self):
        with pytest.raises(ValidationError):
            AgentRecord(id="E_1", role=Role.EGO)
        with pytest.raises(ValidationError):
            AgentRecord(id="E_1", role=Role.EGO, kind=AgentKind.RULE_BASED, weights=b"x")

    def test_invalid_id_and_elo(self):
        with pytest.raises(ValidationError):
            AgentRecord.rule_based("bad id", Role.EGO)
        with pytest.raises(ValidationError):
            AgentRecord.rule_based("E_0", Role.EGO, elo=float("inf"))

    def test_build_policy(self):
        sim, planner = SimConfig(), PlannerParams()
        rule = AgentRecord.rule_based("E_0", Role.EGO).build_policy(sim, planner)
        assert isinstance(rule, RuleBasedPolicy)
        assert rule.name == "E_0"
        npc = AgentRecord.from_network("V_1", Role.NPC, 1, _net())
        policy = npc.build_policy(sim, planner)
        assert isinstance(policy, NetworkPolicy)
        assert policy.adversarial
        assert npc.build_policy(sim, planner) is policy


class TestModelPool:
    """测试模型池操作"""

    def test_insertion_order(self):
        pool = _npc_pool()
        assert pool.ids == ["V_0", "V_1", "V_2"]
        assert pool.newest().id == "V_2"
        assert pool.newest_dqn().id == "V_2"
        assert "V_1" in pool
        assert pool.ratings()["V_1"] == 1012.5

    def test_duplicate_rejected(self):
        pool = _npc_pool()
        with pytest.raises(PoolError):
            pool.add(AgentRecord.rule_based("V_1", Role.NPC))

    def test_role_mismatch_rejected(self):
        pool = ModelPool(Role.EGO)
        with pytest.raises(PoolError):
            pool.add(AgentRecord.rule_based("V_0", Role.NPC))

    def test_empty_pool(self):
        pool = ModelPool(Role.EGO)
        with pytest.raises(PoolError):
            pool.newest()
        assert pool.newest_dqn() is None
        with pytest.raises(KeyError):
            pool.get("E_0")

    def test_records_is_copy(self):
        pool = _npc_pool()
        pool.records.clear()
        assert len(pool) == 3


class TestPersistence:
    """测试模型池保存与加载"""

    def test_round_trip(self, tmp_path):
        pool = _npc_pool()
        pool.get("V_2").games_played = 7
        pool_save(pool, tmp_path / "npc_pool")
        restored = pool_load(tmp_path / "npc_pool")
        assert restored.role is Role.NPC
        assert restored.ids == pool.ids
        for original, loaded in zip(pool, restored):
            assert loaded.weights == original.weights
            assert loaded.elo == original.elo
            assert loaded.games_played == original.games_played
            assert loaded.kind is original.kind

    def test_manifest_layout(self, tmp_path):
        manifest_path = pool_save(_npc_pool(), tmp_path)
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        assert manifest["role"] == "npc"
        assert manifest["records"][0]["blob"] is None
        assert (tmp_path / "V_1.mlpw").exists()

    def test_checksum_mismatch(self, tmp_path):
        pool_save(_npc_pool(), tmp_path)
        blob = bytearray((tmp_path / "V_1.mlpw").read_bytes())
        blob[-1] ^= 0xFF
        (tmp_path / "V_1.mlpw").write_bytes(bytes(blob))
        with pytest.raises(PoolError):
            pool_load(tmp_path)

    def test_missing_blob(self, tmp_path):
        pool_save(_npc_pool(), tmp_path)
        (tmp_path / "V_2.mlpw").unlink()
        with pytest.raises(PoolError):
            pool_load(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(PoolError):
            pool_load(tmp_path)

    def test_bad_manifest_version(self, tmp_path):
        manifest_path = pool_save(_npc_pool(), tmp_path)
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        manifest["format_version"] = 99
        manifest_path.write_text(json.dumps(manifest), encoding="utf-8")
        with pytest.raises(PoolError):
            pool_load(tmp_path)

    def test_missing_field(self, tmp_path):
        manifest_path = pool_save(_npc_pool(), tmp_path)
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        del manifest["records"][1]["elo"]
        manifest_path.write_text(json.dumps(manifest), encoding="utf-8")
        with pytest.raises(PoolError):
            pool_load(tmp_path)
