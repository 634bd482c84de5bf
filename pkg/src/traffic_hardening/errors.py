"""
异常类型定义

所有异常都派生自内置异常，调用方可以继续按 ValueError / RuntimeError 捕获。
"""

from typing import Any, List, Optional


class ConfigError(ValueError):
    """配置文件或预设无法解析、校验失败"""


class WeightFormatError(ValueError):
    """网络权重数据块的头部、版本或形状不合法"""


class PoolError(ValueError):
    """模型池目录、清单或数据块不一致"""


class TerminalStateError(RuntimeError):
    """在已经终止的世界状态上继续推进仿真"""


class NotReadyError(RuntimeError):
    """经验回放池中的样本数尚未达到预热数量"""


class HardeningError(RuntimeError):
    """
    安全加固循环中途失败

    Attributes:
        partial_report: 失败前已完成部分的循环报告
    """

    def __init__(self, message: str, partial_report: Optional[Any] = None):
        super().__init__(message)
        self.partial_report = partial_report


class TournamentError(RuntimeError):
    """
    锦标赛中途失败

    Attributes:
        partial_log: 失败前已经应用了评分更新的对局记录
    """

    def __init__(self, message: str, partial_log: Optional[List[Any]] = None):
        super().__init__(message)
        self.partial_log = list(partial_log or [])
