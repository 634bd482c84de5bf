"""
命令行界面

使用click框架实现证伪、安全加固、评估、锦标赛与行为预测实验命令。
退出码: 0 成功，2 配置错误，3 文件/模型池错误，4 运行错误。
"""

import logging
import sys
from typing import Any, Dict, Optional, Tuple

import click
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler

from . import __version__
from .api import RULE_BASED_NAME, ExperimentRunner
from .config import SamplingMethod
from .errors import ConfigError, PoolError, WeightFormatError
from .parsers import ConfigParser
from .settings import Settings

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_RUNTIME = 4

stderr_console = Console(stderr=True)


def _configure_logging(settings: Settings) -> None:
    logging.basicConfig(
        level=settings.log_level,
        format=settings.log_format,
        handlers=[RichHandler(console=stderr_console, show_path=False)],
        force=True,
    )


def _exit_code(error: Exception) -> int:
    if isinstance(error, (ConfigError, ValidationError)):
        return EXIT_CONFIG
    if isinstance(error, (OSError, PoolError, WeightFormatError)):
        return EXIT_IO
    return EXIT_RUNTIME


def _fail(error: Exception) -> None:
    click.echo(f"错误: {error}", err=True)
    sys.exit(_exit_code(error))


def _runner(
    ctx: click.Context,
    config: Optional[str],
    seed: Optional[int],
    jobs: Optional[int],
    overrides: Dict[str, Any],
) -> ExperimentRunner:
    """按 命令行 > 环境变量 > 配置文件 > 默认值 的优先级组装运行器"""
    settings: Settings = ctx.obj["settings"]
    if seed is None:
        seed = settings.seed
    if seed is not None:
        overrides = {**overrides, "seed": seed}
    return ExperimentRunner.from_source(config, overrides, jobs=jobs or settings.jobs)


def _transition_overrides(transitions: Optional[int]) -> Dict[str, Any]:
    if transitions is None:
        return {}
    return {"dqn.transitions": transitions, "cycles.transitions_per_training": transitions}


config_option = click.option("--config", "-c", "config", help="配置文件路径 (JSON/YAML) 或预设名称")
seed_option = click.option("--seed", type=click.IntRange(min=0), help="主种子 (覆盖 CRASH_SEED 与配置文件)")
out_option = click.option("--out", "-o", type=click.Path(file_okay=False), help="输出目录")
jobs_option = click.option("--jobs", "-j", type=click.IntRange(min=1), help="并行进程数 (覆盖 CRASH_JOBS)")
episodes_option = click.option("--episodes", type=click.IntRange(min=1), help="评估回合数")


@click.group()
@click.version_option(version=__version__)
@click.pass_context
def main(ctx: click.Context):
    """
    对抗交通场景生成与安全加固

    训练对抗 NPC 证伪高速公路规划器，并交替训练 Ego 与 NPC 进行安全加固。
    """
    try:
        settings = Settings()
    except ValidationError as e:
        _fail(e)
    ctx.ensure_object(dict)
    ctx.obj["settings"] = settings
    _configure_logging(settings)


@main.command()
@config_option
@click.option("--planner", "-p", default=RULE_BASED_NAME, show_default=True,
              help='被证伪的 Ego: "idm_mobil" 或 Ego 权重文件 (.mlpw)')
@click.option("--transitions", type=click.IntRange(min=0), help="训练步数")
@seed_option
@episodes_option
@out_option
@click.pass_context
def falsify(ctx, config, planner, transitions, seed, episodes, out):
    """
    训练 NPC 证伪给定的 Ego 规划器
    """
    try:
        overrides = _transition_overrides(transitions)
        if episodes:
            overrides["eval.episodes"] = episodes
        runner = _runner(ctx, config or "falsify_rule_based", seed, None, overrides)
        outcome = runner.falsify(planner, out)
        click.echo(f"训练滚动碰撞率: {outcome.summary['final_rolling_crash_rate']:.4f}")
        click.echo(f"评估碰撞率: {outcome.evaluation.crash_rate:.4f}")
        if out:
            click.echo(f"结果已保存到: {out}")
    except Exception as e:
        _fail(e)


@main.command()
@config_option
@click.option("--method", "-m", type=click.Choice([m.value for m in SamplingMethod], case_sensitive=False),
              help="对手采样方式")
@click.option("--cycles", "n_cycles", type=click.IntRange(min=1), help="循环次数")
@click.option("--transitions", type=click.IntRange(min=0), help="每次训练的步数")
@seed_option
@episodes_option
@out_option
@jobs_option
@click.pass_context
def harden(ctx, config, method, n_cycles, transitions, seed, episodes, out, jobs):
    """
    运行安全加固循环
    """
    try:
        overrides = _transition_overrides(transitions)
        if method:
            overrides["cycles.method"] = method.lower()
        if n_cycles:
            overrides["cycles.n_cycles"] = n_cycles
        if episodes:
            overrides["eval.episodes"] = episodes
        runner = _runner(ctx, config or "harden_local", seed, jobs, overrides)
        result = runner.harden(out)
        stderr_console.print(runner.formatter.cycle_table(result.report))
        if result.report.crash_matrix is not None:
            stderr_console.print(runner.formatter.matrix_table(result.report.crash_matrix))
        for entry in result.report.cycles:
            click.echo(
                f"循环{entry.cycle}: CR({entry.npc_id} vs {entry.falsification_opponent_id})="
                f"{entry.crash_rate_falsification:.4f}  CR({entry.ego_id} vs {entry.npc_id})="
                f"{entry.crash_rate_hardening:.4f}"
            )
        if out:
            click.echo(f"结果已保存到: {out}")
    except Exception as e:
        _fail(e)


@main.command()
@config_option
@click.option("--ego", "-e", default=RULE_BASED_NAME, show_default=True, help='"idm_mobil" 或 Ego 权重文件')
@click.option("--npc", "-n", default=RULE_BASED_NAME, show_default=True, help='"idm_mobil" 或 NPC 权重文件')
@seed_option
@episodes_option
@out_option
@click.pass_context
def evaluate(ctx, config, ego, npc, seed, episodes, out):
    """
    贪心对阵评估，输出碰撞率
    """
    try:
        runner = _runner(ctx, config, seed, None, {})
        result = runner.evaluate(ego, npc, episodes, out)
        click.echo(f"碰撞率: {result.crash_rate:.4f} ({result.crashes}/{result.episodes})")
        if out:
            click.echo(f"结果已保存到: {out}")
    except Exception as e:
        _fail(e)


@main.command()
@config_option
@click.option("--agent", "-a", required=True, type=click.Path(exists=True, dir_okay=False), help="新智能体权重文件")
@click.option("--pool", "pool_dir", required=True, type=click.Path(exists=True, file_okay=False), help="对手池目录")
@click.option("--episodes", type=click.IntRange(min=1), help="每个 (对手, 初始配置) 的回合数")
@seed_option
@out_option
@jobs_option
@click.pass_context
def tournament(ctx, config, agent, pool_dir, episodes, seed, out, jobs):
    """
    新智能体与对手池进行循环赛，并更新清单中的评分
    """
    try:
        overrides = {"cycles.tournament_episodes_per_pair": episodes} if episodes else {}
        runner = _runner(ctx, config, seed, jobs, overrides)
        result = runner.tournament(agent, pool_dir, out)
        for agent_id, rating in result.ratings.items():
            click.echo(f"{agent_id}: {rating:.2f}")
        click.echo(f"评分已更新: {pool_dir}")
    except Exception as e:
        _fail(e)


@main.command()
@config_option
@click.option("--ego", "-e", "egos", multiple=True, required=True, help='Ego 权重文件或 "idm_mobil"，可重复')
@click.option("--npc", "-n", type=click.Path(exists=True, dir_okay=False), help="对抗 NPC 权重文件")
@seed_option
@episodes_option
@out_option
@click.pass_context
def speedtrace(ctx, config, egos: Tuple[str, ...], npc, seed, episodes, out):
    """
    行为预测实验: Ego 面对规则交通车与对抗 NPC 的速度分布
    """
    try:
        runner = _runner(ctx, config or "behind_left_overspeed", seed, None, {})
        result = runner.speed_trace(list(egos), npc, episodes, out)
        for summary in result.summaries:
            click.echo(
                f"{summary.ego} vs {summary.opponent}: 平均速度{summary.mean_speed:.3f}, "
                f"带内比例{summary.in_band_fraction:.3f}, 超速比例{summary.above_band_fraction:.3f}, "
                f"碰撞率{summary.crash_rate:.3f}"
            )
        if out:
            click.echo(f"结果已保存到: {out}")
    except Exception as e:
        _fail(e)


@main.command()
@click.argument("name", required=False)
def presets(name: Optional[str]):
    """
    列出内置预设，或输出某个预设的生效配置
    """
    try:
        if name is None:
            for preset in ConfigParser.list_presets():
                click.echo(preset)
        else:
            click.echo(ConfigParser.dump_yaml(ConfigParser.parse(name)))
    except Exception as e:
        _fail(e)


@main.command()
def examples():
    """
    显示使用示例
    """
    examples_text = """
使用示例:

1. 证伪 IDM+MOBIL 规划器:
   traffic-harden falsify --transitions 200000 --out runs/falsify

2. 证伪一个 DQN Ego:
   traffic-harden falsify -c falsify_dqn --planner runs/ego.mlpw --out runs/falsify_dqn

3. 两个循环的本地安全加固:
   traffic-harden harden --method local --cycles 2 --out runs/local

4. Elo 优先池安全加固，4 个进程:
   traffic-harden harden -c harden_prioritized --cycles 3 --jobs 4 --out runs/prioritized

5. 对阵评估:
   traffic-harden evaluate --ego runs/local/ego_pool/E_2.mlpw --npc runs/local/npc_pool/V_1.mlpw

6. 锦标赛:
   traffic-harden tournament --agent runs/new_npc.mlpw --pool runs/local/ego_pool

7. 行为预测实验:
   traffic-harden speedtrace -e runs/ego_plain.mlpw -e runs/ego_aug.mlpw --npc runs/npc.mlpw

8. 查看预设:
   traffic-harden presets harden_uniform

环境变量: CRASH_SEED, CRASH_JOBS, CRASH_LOG_LEVEL, CRASH_LOG_FORMAT
"""
    click.echo(examples_text)


if __name__ == "__main__":
    main()
