"""
进程级设置

环境变量前缀 CRASH_，优先级低于命令行参数、高于配置文件。
"""

from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """运行环境设置"""

    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    jobs: int = Field(default=1, ge=1)
    log_level: str = "info"
    log_format: str = "%(name)s - %(message)s"

    model_config = SettingsConfigDict(env_prefix="CRASH_", env_file=".env", env_file_encoding="utf-8", extra="ignore")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        level = v.upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"未知日志级别: {v}")
        return level
