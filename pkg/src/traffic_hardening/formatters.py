"""
输出格式化模块

训练轨迹、交叉评估矩阵、速度轨迹和回合日志写成 CSV，运行摘要写成 JSON；
每个输出都携带种子和配置摘要。终端展示使用 rich 表格。
"""

import csv
import io
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from rich.table import Table

from .config import RunConfig, config_hash
from .dqn import TrainingTrace
from .evaluation import MatchupMatrix, MatchupResult, SpeedTraceResult
from .hardening import CycleReport, TournamentResult

logger = logging.getLogger(__name__)


class OutputFormatter:
    """
    输出格式化器

    Args:
        config: 运行配置，提供种子与配置摘要
        precision: 终端表格中的小数位数
    """

    def __init__(self, config: RunConfig, precision: int = 3):
        self.config = config
        self.seed = config.seed
        self.config_hash = config_hash(config)
        self.precision = precision

    def _csv(self, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        buffer = io.StringIO()
        buffer.write(f"# seed={self.seed} config_hash={self.config_hash}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([self._cell(value) for value in row])
        return buffer.getvalue()

    @staticmethod
    def _cell(value: Any) -> Any:
        if isinstance(value, bool):
            return int(value)
        if isinstance(value, float):
            return repr(value)
        if value is None:
            return ""
        return value

    def trace_csv(self, trace: TrainingTrace) -> str:
        """逐回合训练轨迹"""
        header = [
            "episode", "transitions", "accumulated_reward", "crashed", "rolling_crash_rate_100",
            "epsilon", "elo", "mean_speed", "opponent_id", "config_id", "steps", "reason",
        ]
        rows = (
            [
                r.episode, r.transitions, r.accumulated_reward, r.crashed, r.rolling_crash_rate_100,
                r.epsilon, r.elo, r.mean_speed, r.opponent_id, r.config_id, r.steps, r.reason,
            ]
            for r in trace.records
        )
        return self._csv(header, rows)

    def matrix_csv(self, matrix: MatchupMatrix) -> str:
        """交叉评估矩阵，附行均值列与列均值行"""
        header = ["ego\\npc", *matrix.npc_ids, "mean"]
        rows: List[List[Any]] = []
        for ego_id, cells, mean in zip(matrix.ego_ids, matrix.cells, matrix.row_means):
            rows.append([ego_id, *cells, mean])
        rows.append(["mean", *matrix.col_means, matrix.overall_mean])
        return self._csv(header, rows)

    def episode_log_csv(self, result: MatchupResult) -> str:
        header = ["ego", "npc", "episode", "config_id", "crashed", "reason", "steps", "mean_ego_speed", "mean_npc_speed"]
        rows = (
            [
                result.ego_id, result.npc_id, log.episode, log.config_id, log.crashed, log.reason,
                log.steps, log.mean_ego_speed, log.mean_npc_speed,
            ]
            for log in result.logs
        )
        return self._csv(header, rows)

    def match_log_csv(self, tournament: TournamentResult) -> str:
        header = ["new_agent", "opponent", "config_id", "episode", "crashed", "npc_won", "new_agent_rating", "opponent_rating"]
        rows = (
            [
                m.new_agent_id, m.opponent_id, m.config_id, m.episode, m.crashed, m.npc_won,
                m.new_agent_rating, m.opponent_rating,
            ]
            for m in tournament.match_log
        )
        return self._csv(header, rows)

    def speed_trace_csv(self, result: SpeedTraceResult) -> str:
        header = [
            "ego", "opponent", "opponent_adversarial", "episode", "config_id", "steady_mean_speed",
            "in_band_fraction", "above_band_fraction", "crashed", "rolling_crash_rate",
        ]
        rows = (
            [
                r.ego, r.opponent, r.opponent_adversarial, r.episode, r.config_id, r.steady_mean_speed,
                r.in_band_fraction, r.above_band_fraction, r.crashed, r.rolling_crash_rate,
            ]
            for r in result.rows
        )
        return self._csv(header, rows)

    def speed_summary_csv(self, result: SpeedTraceResult) -> str:
        header = [
            "ego", "opponent", "opponent_adversarial", "episodes", "steady_steps", "mean_speed",
            "in_band_fraction", "above_band_fraction", "crash_rate",
        ]
        rows = (
            [
                s.ego, s.opponent, s.opponent_adversarial, s.episodes, s.steady_steps, s.mean_speed,
                s.in_band_fraction, s.above_band_fraction, s.crash_rate,
            ]
            for s in result.summaries
        )
        return self._csv(header, rows)

    def summary_dict(self, command: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        """
        运行摘要

        timestamp 是唯一随运行时间变化的字段。
        """
        return {
            "command": command,
            "timestamp": datetime.now().isoformat(),
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config.model_dump(mode="json"),
            **payload,
        }

    def summary_json(self, command: str, payload: Dict[str, Any]) -> str:
        return json.dumps(self.summary_dict(command, payload), indent=2, ensure_ascii=False, sort_keys=True)

    def report_json(self, report: CycleReport) -> str:
        return self.summary_json("harden", {"report": report.model_dump(mode="json")})

    def matrix_table(self, matrix: MatchupMatrix, title: Optional[str] = None) -> Table:
        """交叉评估矩阵的终端表格"""
        table = Table(title=title or f"碰撞率 (每格{matrix.episodes}回合)")
        table.add_column("Ego \\ NPC", style="bold")
        for npc_id in matrix.npc_ids:
            table.add_column(npc_id, justify="right")
        table.add_column("均值", justify="right", style="cyan")
        fmt = f"{{:.{self.precision}f}}"
        for ego_id, cells, mean in zip(matrix.ego_ids, matrix.cells, matrix.row_means):
            table.add_row(ego_id, *(fmt.format(v) for v in cells), fmt.format(mean))
        table.add_row("均值", *(fmt.format(v) for v in matrix.col_means), fmt.format(matrix.overall_mean), style="cyan")
        return table

    def cycle_table(self, report: CycleReport) -> Table:
        table = Table(title=f"安全加固 ({report.method.value}, {report.n_cycles}个循环)")
        for column in ("循环", "证伪", "CR", "加固", "CR"):
            table.add_column(column, justify="right")
        fmt = f"{{:.{self.precision}f}}"
        for entry in report.cycles:
            table.add_row(
                str(entry.cycle),
                f"{entry.npc_id} vs {entry.falsification_opponent_id}",
                fmt.format(entry.crash_rate_falsification),
                f"{entry.ego_id} vs {entry.npc_id}",
                fmt.format(entry.crash_rate_hardening),
            )
        return table

    @staticmethod
    def write(content: Union[str, bytes], path: Union[str, Path]) -> Path:
        """写入文件，自动创建父目录"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(content)
        logger.debug(f"已写入 {path}")
        return path
