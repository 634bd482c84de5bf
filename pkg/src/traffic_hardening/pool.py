"""
模型池

每个角色维护一个按插入顺序排列的冻结智能体记录列表；
持久化为一个 JSON 清单和若干 .mlpw 权重文件，加载时校验 SHA-256。
"""

import hashlib
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from .errors import PoolError, WeightFormatError
from .models import Role, SimConfig
from .network import Mlp, load_weights, save_weights
from .planners import PlannerParams
from .policies import NetworkPolicy, Policy, RuleBasedPolicy

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
WEIGHT_SUFFIX = ".mlpw"


class AgentKind(str, Enum):
    DQN = "dqn"
    RULE_BASED = "rule_based"


class AgentRecord(BaseModel):
    """
    模型池中的一个冻结智能体

    Attributes:
        id: 唯一标识，如 E_0、V_1
        role: 角色，终身不变
        cycle: 产生该智能体的循环序号
        kind: dqn 或 rule_based
        weights: 权重数据块，插入后不可修改
        elo: 当前评分
        games_played: 已参与评分的回合数
        augmented: 是否使用带对手标记的观测
    """

    id: str = Field(min_length=1, pattern=r"^[A-Za-z0-9_.-]+$", frozen=True)
    role: Role = Field(frozen=True)
    cycle: int = Field(default=0, ge=0)
    kind: AgentKind = AgentKind.DQN
    weights: Optional[bytes] = Field(default=None, repr=False, frozen=True)
    elo: float = 1000.0
    games_played: int = Field(default=0, ge=0)
    augmented: bool = False

    model_config = ConfigDict(validate_assignment=True, extra="forbid")

    _policy_cache: Dict[Tuple, Policy] = PrivateAttr(default_factory=dict)

    @field_validator("elo")
    @classmethod
    def validate_elo(cls, v):
        if not math.isfinite(v):
            raise ValueError(f"评分必须是有限数: {v}")
        return v

    @model_validator(mode="after")
    def validate_weights(self):
        if self.kind is AgentKind.DQN and not self.weights:
            raise ValueError(f"DQN 智能体{self.id}缺少权重")
        if self.kind is AgentKind.RULE_BASED and self.weights:
            raise ValueError(f"规则智能体{self.id}不应携带权重")
        return self

    @classmethod
    def from_network(
        cls, record_id: str, role: Role, cycle: int, net: Mlp, elo: float = 1000.0
    ) -> "AgentRecord":
        return cls(
            id=record_id,
            role=role,
            cycle=cycle,
            kind=AgentKind.DQN,
            weights=save_weights(net),
            elo=elo,
            augmented=net.input_dim == 11,
        )

    @classmethod
    def rule_based(cls, record_id: str, role: Role, cycle: int = 0, elo: float = 1000.0) -> "AgentRecord":
        return cls(id=record_id, role=role, cycle=cycle, kind=AgentKind.RULE_BASED, elo=elo)

    @property
    def weights_hash(self) -> Optional[str]:
        if self.weights is None:
            return None
        return hashlib.sha256(self.weights).hexdigest()

    def network(self) -> Mlp:
        if self.weights is None:
            raise ValueError(f"规则智能体{self.id}没有网络")
        return load_weights(self.weights, expected_input_dim=11 if self.augmented else 10)

    def build_policy(self, sim: SimConfig, planner: PlannerParams) -> Policy:
        """构造 (并缓存) 该记录对应的贪心策略"""
        key = (sim.model_dump_json(), planner.model_dump_json())
        if key not in self._policy_cache:
            if self.kind is AgentKind.RULE_BASED:
                policy: Policy = RuleBasedPolicy(planner, sim.geometry, name=self.id)
            else:
                policy = NetworkPolicy(
                    self.network(),
                    sim.observation,
                    augmented=self.augmented,
                    adversarial=self.role is Role.NPC,
                    name=self.id,
                )
            self._policy_cache[key] = policy
        return self._policy_cache[key]


class ModelPool:
    """
    单一角色的模型池

    Args:
        role: 池内所有记录的角色
        records: 初始记录
    """

    def __init__(self, role: Role, records: Optional[List[AgentRecord]] = None):
        self.role = Role(role)
        self._records: List[AgentRecord] = []
        for record in records or []:
            self.add(record)

    def add(self, record: AgentRecord) -> AgentRecord:
        if record.role is not self.role:
            raise PoolError(f"记录{record.id}的角色({record.role.value})与模型池角色({self.role.value})不一致")
        if any(existing.id == record.id for existing in self._records):
            raise PoolError(f"模型池中已存在记录: {record.id}")
        self._records.append(record)
        logger.debug(f"{self.role.value}模型池加入{record.id}")
        return record

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[AgentRecord]:
        return iter(self._records)

    def __contains__(self, record_id: str) -> bool:
        return any(record.id == record_id for record in self._records)

    @property
    def records(self) -> List[AgentRecord]:
        return list(self._records)

    @property
    def ids(self) -> List[str]:
        return [record.id for record in self._records]

    def get(self, record_id: str) -> AgentRecord:
        for record in self._records:
            if record.id == record_id:
                return record
        raise KeyError(f"模型池中没有记录: {record_id}")

    def newest(self) -> AgentRecord:
        if not self._records:
            raise PoolError("模型池为空")
        return self._records[-1]

    def newest_dqn(self) -> Optional[AgentRecord]:
        for record in reversed(self._records):
            if record.kind is AgentKind.DQN:
                return record
        return None

    def ratings(self) -> Dict[str, float]:
        return {record.id: record.elo for record in self._records}

    def policies(self, sim: SimConfig, planner: PlannerParams) -> List[Tuple[str, Policy]]:
        return [(record.id, record.build_policy(sim, planner)) for record in self._records]


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def pool_save(pool: ModelPool, path: Union[str, Path]) -> Path:
    """
    保存模型池

    Args:
        pool: 模型池
        path: 目标目录，写入 manifest.json 与 <id>.mlpw

    Returns:
        清单文件路径
    """
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for record in pool:
        blob_name = None
        digest = None
        if record.weights is not None:
            blob_name = f"{record.id}{WEIGHT_SUFFIX}"
            (directory / blob_name).write_bytes(record.weights)
            digest = _sha256(record.weights)
        entries.append(
            {
                "id": record.id,
                "role": record.role.value,
                "cycle": record.cycle,
                "kind": record.kind.value,
                "elo": record.elo,
                "games_played": record.games_played,
                "augmented": record.augmented,
                "blob": blob_name,
                "sha256": digest,
            }
        )
    manifest = {"format_version": MANIFEST_VERSION, "role": pool.role.value, "records": entries}
    manifest_path = directory / MANIFEST_NAME
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False)
    logger.info(f"已保存{pool.role.value}模型池({len(pool)}条记录)到 {directory}")
    return manifest_path


def pool_load(path: Union[str, Path]) -> ModelPool:
    """
    加载模型池

    Raises:
        PoolError: 清单缺失、格式错误或权重文件与清单不一致
    """
    directory = Path(path)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise PoolError(f"模型池清单不存在: {manifest_path}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise PoolError(f"模型池清单格式错误: {e}")

    if manifest.get("format_version") != MANIFEST_VERSION:
        raise PoolError(f"不支持的清单版本: {manifest.get('format_version')}")
    try:
        pool = ModelPool(Role(manifest["role"]))
        for entry in manifest["records"]:
            weights = None
            if entry.get("blob"):
                blob_path = directory / entry["blob"]
                if not blob_path.exists():
                    raise PoolError(f"权重文件不存在: {blob_path}")
                weights = blob_path.read_bytes()
                if _sha256(weights) != entry.get("sha256"):
                    raise PoolError(f"权重文件校验失败: {blob_path}")
            record = AgentRecord(
                id=entry["id"],
                role=Role(entry["role"]),
                cycle=entry["cycle"],
                kind=AgentKind(entry["kind"]),
                weights=weights,
                elo=entry["elo"],
                games_played=entry["games_played"],
                augmented=entry["augmented"],
            )
            if record.weights is not None:
                record.network()
            pool.add(record)
    except (KeyError, TypeError) as e:
        raise PoolError(f"模型池清单缺少字段: {e}")
    except ValueError as e:
        if isinstance(e, (PoolError, WeightFormatError)):
            raise
        raise PoolError(f"模型池记录不合法: {e}")
    return pool
