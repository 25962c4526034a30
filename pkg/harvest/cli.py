#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
命令行入口
子命令: solve | verify | simulate | sweep | validate

退出码: 0 成功, 2 输入错误, 3 假设检验失败, 4 求解失败, 5 模拟失败
"""

import copy
import functools
import json
import os
import sys
from typing import Any, Dict, Optional, Tuple

import click
import yaml
from loguru import logger

from harvest import ConfigError, HarvestError, load_config, setup_logging
from harvest.services.report_service import ReportService, from_jsonable, resolve_output_dir
from harvest.tasks import resolve_settings
from harvest.tasks.simulate_tasks import run_simulate, run_sweep
from harvest.tasks.solve_tasks import load_solution, run_solve, run_validate, run_verify
from harvest.utils.data_processor import DataProcessor

# 不影响产物的运行选项，不写入清单
VOLATILE_KEYS = ('workers',)


def read_config_file(path: str) -> Dict[str, Any]:
    """读取 JSON 或 YAML 配置文件，语法错误时给出行号"""
    if not path or not os.path.isfile(path):
        raise ConfigError(f"配置文件不存在: {path}", field='config')
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    if path.lower().endswith('.json'):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON 语法错误: {e.msg} (第{e.colno}列)", field='config', line=e.lineno)
    else:
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            line = mark.line + 1 if mark is not None else None
            raise ConfigError(f"YAML 语法错误: {getattr(e, 'problem', e)}", field='config', line=line)
    if not isinstance(data, dict):
        raise ConfigError("配置文件顶层必须是映射", field='config')
    return from_jsonable(data)


def load_run_settings(path: str, defaults: Dict[str, Any]) -> Tuple[Dict[str, Any], Optional[Dict[str, Any]]]:
    """读取运行配置；给定运行清单时直接复用其中的完整配置

    Returns:
        (完整运行配置, 清单字典或 None)
    """
    data = read_config_file(path)
    if 'manifest_version' in data:
        manifest = ReportService.load_manifest(path)
        settings = copy.deepcopy(manifest.model_config)
        settings['run'] = copy.deepcopy(manifest.run)
        logger.info(f"从运行清单复现: {path} (时间戳 {manifest.timestamp})")
        return settings, manifest.to_dict()
    if 'model' not in data:
        raise ConfigError("缺少 model 节", field='model')
    return resolve_settings(defaults, data), None


def apply_flags(settings: Dict[str, Any], **flags: Any) -> Dict[str, Any]:
    """命令行参数覆盖 run 节，未给出的参数不覆盖"""
    run = settings.setdefault('run', {})
    for key, value in flags.items():
        if value is not None:
            run[key] = value
    return settings


def _manifest_payload(settings: Dict[str, Any]) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    model_config = {k: copy.deepcopy(v) for k, v in settings.items() if k != 'run'}
    for key in VOLATILE_KEYS:
        (model_config.get('simulation') or {}).pop(key, None)
    run = {k: v for k, v in (settings.get('run') or {}).items() if k not in VOLATILE_KEYS}
    return model_config, run


def open_artifacts(command: str, settings: Dict[str, Any], output_dir: Optional[str],
                   manifest: Optional[Dict[str, Any]], defaults: Dict[str, Any]) -> ReportService:
    """准备输出目录并写出运行清单"""
    if manifest and not (output_dir or os.environ.get('HARVEST_OUTPUT_DIR')):
        directory = manifest['output_dir']
    else:
        directory = resolve_output_dir(output_dir, defaults)
    service = ReportService(directory)
    model_config, run = _manifest_payload(settings)
    tolerances = {
        'solver': model_config.get('solver', {}),
        'validation': model_config.get('validation', {}),
        'verify': model_config.get('verify', {}),
    }
    seed = run.get('seed', (model_config.get('simulation') or {}).get('seed'))
    service.write_manifest(ReportService.build_manifest(
        model_config=model_config,
        actions=[command],
        tolerances=tolerances,
        seeds={'seed': seed},
        output_dir=directory,
        run=run,
        timestamp=manifest.get('timestamp') if manifest else None,
    ))
    return service


def handle_errors(func):
    """把异常类映射为稳定的退出码"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except HarvestError as e:
            logger.error(f"{type(e).__name__}: {e}")
            click.echo(f"错误: {e}", err=True)
            sys.exit(e.exit_code)
    return wrapper


@click.group()
@click.option('--log-level', default=None, help='日志级别，覆盖配置文件')
@click.pass_context
def cli(ctx, log_level):
    """遍历型最优收获问题的求解、验证与模拟工具"""
    defaults = load_config()
    logging_config = dict(defaults.get('logging') or {})
    if log_level:
        logging_config['level'] = log_level.upper()
    setup_logging(logging_config)
    ctx.obj = {'defaults': defaults}


@cli.command()
@click.argument('config_path')
@click.option('--output-dir', default=None, help='输出目录')
@click.pass_context
@handle_errors
def validate(ctx, config_path, output_dir):
    """检验模型是否满足标准假设"""
    defaults = ctx.obj['defaults']
    settings, manifest = load_run_settings(config_path, defaults)
    service = open_artifacts('validate', settings, output_dir, manifest, defaults)
    _, report = run_validate(settings, service)
    click.echo(ReportService.assumption_table(report))
    if not report.passed:
        failed = ', '.join(c.name for c in report.failed_checks)
        click.echo(f"未通过: {failed}", err=True)
        sys.exit(3)


@cli.command()
@click.argument('config_path')
@click.option('--override-validation', is_flag=True, default=None, help='假设检验失败时仍继续求解')
@click.option('--output-dir', default=None, help='输出目录')
@click.pass_context
@handle_errors
def solve(ctx, config_path, override_validation, output_dir):
    """求解最优阈值 β* 与最优收益率 λ*"""
    defaults = ctx.obj['defaults']
    settings, manifest = load_run_settings(config_path, defaults)
    apply_flags(settings, override_validation=override_validation)
    service = open_artifacts('solve', settings, output_dir, manifest, defaults)
    solution = run_solve(settings, service, bool(settings['run'].get('override_validation', False)))
    click.echo(f"beta_star={solution.beta_star:.15g} lambda_star={solution.lambda_star:.15g} "
               f"theta_residual={solution.theta_residual:.3e} level_residual={solution.level_residual:.3e}")


@cli.command()
@click.argument('solution_path')
@click.option('--config', 'config_path', default=None, help='含 verify 节的配置文件或运行清单')
@click.option('--output-dir', default=None, help='输出目录')
@click.pass_context
@handle_errors
def verify(ctx, solution_path, config_path, output_dir):
    """在网格上验证 HJB 方程与光滑粘贴条件"""
    defaults = ctx.obj['defaults']
    manifest = None
    if config_path:
        data = read_config_file(config_path)
        if 'manifest_version' in data:
            settings, manifest = load_run_settings(config_path, defaults)
        else:
            settings = resolve_settings(defaults, data)
    else:
        settings = resolve_settings(defaults, {})
    apply_flags(settings, solution=solution_path)
    solution = load_solution(settings['run']['solution'])
    settings['model'] = solution.model
    service = open_artifacts('verify', settings, output_dir, manifest, defaults)
    report = run_verify(solution, settings, service)
    click.echo(ReportService.hjb_table(report))
    if not report.passed:
        failed = ', '.join(c.name for c in report.checks if c.applicable and not c.passed)
        click.echo(f"HJB 验证未通过: {failed}", err=True)
        sys.exit(4)


def _simulation_options(func):
    options = [
        click.option('--paths', 'n_paths', type=int, default=None, help='路径数，1 为路径型准则'),
        click.option('--horizon', type=float, default=None, help='模拟时长 T'),
        click.option('--dt', type=float, default=None, help='时间步长'),
        click.option('--seed', type=int, default=None, help='随机种子'),
        click.option('--workers', type=int, default=None, help='线程数，不影响结果'),
        click.option('--antithetic/--no-antithetic', default=None, help='对偶变量'),
        click.option('--calibrate/--no-calibrate', 'calibrate_dt', default=None, help='估计离散化常数 C_dt'),
        click.option('--solution', 'solution_path', default=None, help='解文件，用于取 β* 并与 λ* 比较'),
        click.option('--override-validation', is_flag=True, default=None, help='假设检验失败时仍继续'),
        click.option('--output-dir', default=None, help='输出目录'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _simulation_context(ctx, config_path, output_dir, command, solution_path, **flags):
    defaults = ctx.obj['defaults']
    settings, manifest = load_run_settings(config_path, defaults)
    apply_flags(settings, solution=solution_path, **flags)
    service = open_artifacts(command, settings, output_dir, manifest, defaults)
    path = settings['run'].get('solution')
    solution = load_solution(path) if path else None
    return settings, service, solution


@cli.command()
@click.argument('config_path')
@click.option('--beta', 'threshold', type=float, default=None, help='收获阈值 β，缺省取 β*，inf 为无控制')
@_simulation_options
@click.pass_context
@handle_errors
def simulate(ctx, config_path, threshold, n_paths, horizon, dt, seed, workers, antithetic, calibrate_dt,
             solution_path, override_validation, output_dir):
    """模拟阈值收获策略并估计长期平均收益"""
    settings, service, solution = _simulation_context(
        ctx, config_path, output_dir, 'simulate', solution_path, threshold=threshold, n_paths=n_paths,
        horizon=horizon, dt=dt, seed=seed, workers=workers, antithetic=antithetic, calibrate_dt=calibrate_dt,
        override_validation=override_validation)
    summary = run_simulate(settings, service, solution, bool(settings['run'].get('override_validation', False)))
    result = summary['result']
    line = (f"mode={result['mode']} beta={result['threshold']:.10g} estimate={result['mean']:.10g} "
            f"stderr={result['stderr']:.3e}")
    if 'comparison' in summary:
        comparison = summary['comparison']
        line += (f" lambda_star={comparison['lambda_star']:.10g} tolerance={comparison['tolerance']:.3e} "
                 f"within={comparison['within_tolerance']}")
    click.echo(line)
    if result['mode'] == 'pathwise':
        click.echo(f"trace_windows={len(result['trace'])} band={result['fluctuation_band']:.3e}")


@cli.command()
@click.argument('config_path')
@click.option('--beta-grid', default=None, help='逗号分隔的 β 网格')
@click.option('--relative/--absolute', default=None, help='网格按 β* 的倍数解释')
@_simulation_options
@click.pass_context
@handle_errors
def sweep(ctx, config_path, beta_grid, relative, n_paths, horizon, dt, seed, workers, antithetic, calibrate_dt,
          solution_path, override_validation, output_dir):
    """阈值扫描: 比较各 β 的估计、Λ(β) 与 λ*"""
    settings, service, solution = _simulation_context(
        ctx, config_path, output_dir, 'sweep', solution_path, beta_grid=beta_grid, relative=relative,
        n_paths=n_paths, horizon=horizon, dt=dt, seed=seed, workers=workers, antithetic=antithetic,
        calibrate_dt=calibrate_dt, override_validation=override_validation)
    table = run_sweep(settings, service, solution, bool(settings['run'].get('override_validation', False)))
    click.echo(ReportService.sweep_table(DataProcessor().sweep_frame(table)))
    click.echo(f"argmax_beta={table.argmax_beta:.10g} all_below_optimum={table.all_below_optimum} "
               f"maximal_at_optimum={table.maximal_at_optimum}")


def main():
    cli(obj={})


if __name__ == '__main__':
    main()
