"""
测试数据类型与参数模型
"""

import pytest
import sys
from pathlib import Path

from pydantic import ValidationError

# 添加src目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from traffic_hardening.models import (
    ConfigId,
    ControlParams,
    GeometryParams,
    InitialConfig,
    MetaAction,
    Role,
    SpawnParams,
    VehicleState,
    WorldState,
    resolve_config_set,
)


def _vehicle(x=0.0, y=0.0, lane=0):
    return VehicleState(x=x, y=y, psi=0.0, v=25.0, lane=lane, target_speed=25.0, target_lane=lane)


class TestInitialConfig:
    """测试初始配置"""

    def test_enumerate_all_eight(self):
        """测试枚举全部八种配置"""
        configs = InitialConfig.enumerate()
        assert [c.id for c in configs] == list(ConfigId)
        assert len(configs) == 8

    def test_offset_signs(self):
        """测试纵向偏移符号"""
        for config in InitialConfig.enumerate(25.0):
            name = config.id.value
            if name.startswith("B"):
                assert config.longitudinal_offset == -25.0
            elif name.startswith("F"):
                assert config.longitudinal_offset == 25.0
            else:
                assert config.longitudinal_offset == 0.0

    def test_only_adjacent_configs_flagged(self):
        """测试只有 AL/AR 为并排配置"""
        adjacent = {c.id for c in InitialConfig.enumerate() if c.is_adjacent}
        assert adjacent == {ConfigId.AL, ConfigId.AR}

    def test_lane_layout(self):
        """测试车道布局: 同车道配置两车同道，左右配置两车异道"""
        for config in InitialConfig.enumerate():
            if config.id.value.endswith("C"):
                assert config.ego_lane == config.npc_lane
            else:
                assert config.ego_lane != config.npc_lane
        bl = InitialConfig.from_id("BL")
        assert bl.npc_lane < bl.ego_lane

    def test_inconsistent_layout_rejected(self):
        """测试不一致的布局被拒绝"""
        with pytest.raises(ValidationError):
            InitialConfig(id=ConfigId.AL, ego_lane=1, npc_lane=0, longitudinal_offset=10.0, is_adjacent=True)
        with pytest.raises(ValidationError):
            InitialConfig(id=ConfigId.BL, ego_lane=1, npc_lane=0, longitudinal_offset=25.0, is_adjacent=False)

    def test_frozen(self):
        """测试初始配置不可修改"""
        config = InitialConfig.from_id(ConfigId.FC)
        with pytest.raises(ValidationError):
            config.longitudinal_offset = 3.0


class TestConfigSets:
    """测试初始配置集合解析"""

    def test_named_sets(self):
        assert resolve_config_set("all") == list(ConfigId)
        assert resolve_config_set("behind") == [ConfigId.BL, ConfigId.BC, ConfigId.BR]
        assert resolve_config_set("behind_left") == [ConfigId.BL]

    def test_list_and_string_forms(self):
        assert resolve_config_set(["bl", "AR"]) == [ConfigId.BL, ConfigId.AR]
        assert resolve_config_set("FL, FC FR") == [ConfigId.FL, ConfigId.FC, ConfigId.FR]

    def test_duplicates_removed(self):
        assert resolve_config_set(["BL", "BL", "AL"]) == [ConfigId.BL, ConfigId.AL]

    def test_unknown_rejected(self):
        with pytest.raises(ValueError):
            resolve_config_set(["XX"])
        with pytest.raises(ValueError):
            resolve_config_set([])


class TestParams:
    """测试参数模型验证"""

    def test_defaults(self):
        control = ControlParams()
        assert control.decision_period == pytest.approx(1.0)
        assert (control.v_min, control.v_max) == (20.0, 30.0)
        assert len(MetaAction) == 5

    def test_speed_range_validation(self):
        with pytest.raises(ValidationError):
            ControlParams(v_min=31.0, v_max=30.0)

    def test_fixed_two_lanes(self):
        with pytest.raises(ValidationError):
            GeometryParams(n_lanes=3)

    def test_road_bounds(self):
        geometry = GeometryParams()
        assert geometry.road_bounds == (-2.0, 6.0)
        assert geometry.lane_center(1) == 4.0
        assert geometry.nearest_lane(3.1) == 1
        assert geometry.nearest_lane(-10.0) == 0

    def test_jitter_must_be_below_offset(self):
        with pytest.raises(ValidationError):
            SpawnParams(offset=5.0, jitter=5.0)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError):
            ControlParams(unknown=1)

    def test_spawn_config_set_by_name(self):
        assert SpawnParams(config_set="behind_left").config_set == [ConfigId.BL]


class TestStates:
    """测试车辆与世界状态"""

    def test_role_indices(self):
        assert Role.EGO.vehicle_index == 0
        assert Role.NPC.vehicle_index == 1
        assert Role.EGO.opposite is Role.NPC

    def test_world_requires_two_vehicles(self):
        with pytest.raises(ValueError):
            WorldState(vehicles=[_vehicle()])

    def test_copy_is_deep(self):
        world = WorldState(vehicles=[_vehicle(), _vehicle(x=10.0, lane=1, y=4.0)])
        clone = world.copy()
        clone.vehicles[0].x = 99.0
        assert world.ego.x == 0.0

    def test_dict_round_trip(self):
        world = WorldState(
            vehicles=[_vehicle(), _vehicle(x=-25.0, y=4.0, lane=1)],
            sim_time=2.0,
            step_count=2,
            config_id=ConfigId.BR,
        )
        restored = WorldState.from_dict(world.to_dict())
        assert restored == world

    def test_changing_lane(self):
        vehicle = _vehicle()
        assert not vehicle.changing_lane
        vehicle.target_lane = 1
        assert vehicle.changing_lane
