"""
配置解析模块

支持 JSON/YAML 配置文件、内置预设以及点号路径形式的参数覆盖。
"""

import json
import logging
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml
from pydantic import ValidationError

from .config import RunConfig
from .errors import ConfigError

logger = logging.getLogger(__name__)

PRESET_PACKAGE = "traffic_hardening.presets"


class ConfigParser:
    """运行配置解析器"""

    @staticmethod
    def parse_json_file(file_path: Union[str, Path]) -> Dict[str, Any]:
        """
        从JSON文件读取配置字典

        Args:
            file_path: JSON文件路径

        Returns:
            配置字典
        """
        file_path = Path(file_path)

        if not file_path.exists():
            raise FileNotFoundError(f"文件不存在: {file_path}")

        with open(file_path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"JSON格式错误 ({file_path}): {e}")

        return ConfigParser._validate_config_data(data)

    @staticmethod
    def parse_yaml_file(file_path: Union[str, Path]) -> Dict[str, Any]:
        """
        从YAML文件读取配置字典

        Args:
            file_path: YAML文件路径

        Returns:
            配置字典
        """
        file_path = Path(file_path)

        if not file_path.exists():
            raise FileNotFoundError(f"文件不存在: {file_path}")

        with open(file_path, "r", encoding="utf-8") as f:
            try:
                data = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigError(f"YAML格式错误 ({file_path}): {e}")

        return ConfigParser._validate_config_data(data)

    @staticmethod
    def _validate_config_data(data: Any) -> Dict[str, Any]:
        """配置文件顶层必须是映射"""
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigError(f"配置文件顶层必须是映射，实际为{type(data).__name__}")
        return data

    @staticmethod
    def list_presets() -> List[str]:
        """内置预设名称"""
        names = []
        for entry in resources.files(PRESET_PACKAGE).iterdir():
            if entry.name.endswith(".yaml"):
                names.append(entry.name[: -len(".yaml")])
        return sorted(names)

    @staticmethod
    def load_preset(name: str) -> Dict[str, Any]:
        """
        读取内置预设

        Args:
            name: 预设名称，如 harden_local

        Returns:
            配置字典
        """
        resource = resources.files(PRESET_PACKAGE).joinpath(f"{name}.yaml")
        if not resource.is_file():
            raise ConfigError(f"未知预设: {name} (可选: {', '.join(ConfigParser.list_presets())})")
        try:
            data = yaml.safe_load(resource.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ConfigError(f"预设{name}格式错误: {e}")
        return ConfigParser._validate_config_data(data)

    @staticmethod
    def apply_overrides(data: Dict[str, Any], overrides: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
        """
        应用点号路径覆盖，如 {"dqn.transitions": 1000}

        Returns:
            新的配置字典，原字典不变
        """
        result = json.loads(json.dumps(data))
        for dotted, value in (overrides or {}).items():
            if value is None:
                continue
            keys = dotted.split(".")
            node = result
            for key in keys[:-1]:
                child = node.setdefault(key, {})
                if not isinstance(child, dict):
                    raise ConfigError(f"覆盖路径{dotted}经过非映射的键{key}")
                node = child
            node[keys[-1]] = value
        return result

    @staticmethod
    def create_config_from_dict(data: Dict[str, Any]) -> RunConfig:
        """
        从字典创建运行配置

        Args:
            data: 配置字典

        Returns:
            校验后的运行配置
        """
        try:
            return RunConfig(**data)
        except ValidationError as e:
            raise ConfigError(f"配置校验失败: {e}")

    @staticmethod
    def read_file(file_path: Union[str, Path]) -> Dict[str, Any]:
        file_path = Path(file_path)
        if file_path.suffix.lower() == ".json":
            return ConfigParser.parse_json_file(file_path)
        if file_path.suffix.lower() in [".yaml", ".yml"]:
            return ConfigParser.parse_yaml_file(file_path)
        raise ConfigError(f"不支持的文件格式: {file_path.suffix}")

    @staticmethod
    def parse_from_file(
        file_path: Union[str, Path], overrides: Optional[Mapping[str, Any]] = None
    ) -> RunConfig:
        """
        从文件解析并创建运行配置

        Args:
            file_path: 文件路径
            overrides: 点号路径覆盖

        Returns:
            运行配置
        """
        data = ConfigParser.read_file(file_path)
        return ConfigParser.create_config_from_dict(ConfigParser.apply_overrides(data, overrides))

    @staticmethod
    def parse(
        source: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None
    ) -> RunConfig:
        """
        解析配置来源: 为空时使用默认配置，已存在的路径按文件读取，否则按预设名读取

        Args:
            source: 文件路径或预设名称
            overrides: 点号路径覆盖

        Returns:
            运行配置
        """
        if source is None:
            data: Dict[str, Any] = {}
        elif Path(source).suffix.lower() in [".json", ".yaml", ".yml"] or Path(source).exists():
            data = ConfigParser.read_file(source)
        else:
            data = ConfigParser.load_preset(str(source))
        config = ConfigParser.create_config_from_dict(ConfigParser.apply_overrides(data, overrides))
        logger.debug(f"已加载配置{config.name} (种子{config.seed})")
        return config

    @staticmethod
    def dump_yaml(config: RunConfig) -> str:
        """把生效配置写回YAML文本，重新解析后得到相同的配置"""
        return yaml.safe_dump(config.model_dump(mode="json"), allow_unicode=True, sort_keys=True)
