#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
求解相关任务
假设检验、自由边界求解与 HJB 验证
"""

from typing import Any, Dict, Optional, Tuple

from loguru import logger

from harvest import ModelValidationError
from harvest.models import (AssumptionReport, HjbGridConfig, HjbReport, ModelSpec, SearchConfig,
                            SolverConfig, ThresholdSolution, ValidationConfig)
from harvest.services.free_boundary import solve_threshold, value_gradient, verify_hjb
from harvest.services.model_service import critical_points, model_from_config, validate_assumptions
from harvest.services.report_service import ReportService
from harvest.utils.data_processor import DataProcessor


def run_validate(settings: Dict[str, Any], service: Optional[ReportService] = None) -> Tuple[ModelSpec, AssumptionReport]:
    """构造模型并执行标准假设检验

    Args:
        settings: 完整运行配置
        service: 报告服务，为空时不写产物

    Returns:
        (模型, 检验报告)
    """
    # 附加条件交给检验报告判定，失败项在报告中可追溯
    model = model_from_config(settings['model'], strict=False)
    report = validate_assumptions(model, ValidationConfig.from_dict(settings.get('validation')))
    if service is not None:
        service.write_json('assumptions.json', report)
    if report.passed:
        logger.info(f"模型 {model.name} 通过全部标准假设检验")
    else:
        logger.warning(f"模型 {model.name} 未通过假设检验: {[c.name for c in report.failed_checks]}")
    if not report.pathwise_passed:
        logger.warning("路径型准则所需假设未通过，路径型断言将降级为告警")
    return model, report


def prepare_model(settings: Dict[str, Any], override_validation: bool = False,
                  service: Optional[ReportService] = None) -> Tuple[ModelSpec, AssumptionReport]:
    """检验通过或显式覆盖时返回模型，否则抛出 ModelValidationError"""
    model, report = run_validate(settings, service)
    if not report.passed:
        failed = [c.name for c in report.failed_checks]
        if not override_validation:
            logger.error(f"假设检验失败且未指定覆盖: {failed}")
            raise ModelValidationError(f"模型未通过假设检验: {', '.join(failed)}", failed_checks=failed)
        logger.warning(f"已覆盖假设检验失败项，继续运行: {failed}")
    return model, report


def run_solve(settings: Dict[str, Any], service: Optional[ReportService] = None,
              override_validation: bool = False) -> ThresholdSolution:
    """求解 β* 与 λ*，写出 solution.json"""
    model, _ = prepare_model(settings, override_validation, service)
    cp = critical_points(model, SearchConfig.from_dict(settings.get('search')))
    solution = solve_threshold(model, cp, SolverConfig.from_dict(settings.get('solver')))
    if service is not None:
        service.write_json('solution.json', solution)
    return solution


def run_verify(solution: ThresholdSolution, settings: Dict[str, Any],
               service: Optional[ReportService] = None) -> HjbReport:
    """由解文件重建模型与 w'，在网格上验证 HJB，写出报告与梯度表"""
    model = model_from_config(solution.model, strict=False)
    grid = HjbGridConfig.from_dict(settings.get('verify'))
    vg = value_gradient(model, solution)
    report = verify_hjb(model, solution, vg, grid)
    if service is not None:
        service.write_json('hjb_report.json', report)
        gradients = [vg.gradient(x) for x in report.grid]
        second = [vg.second_derivative(x) for x in report.grid]
        frame = DataProcessor().grid_frame(report.grid, gradient=gradients, second_derivative=second)
        service.write_csv('value_gradient.csv', frame)
    return report


def load_solution(path: str) -> ThresholdSolution:
    """读取解文件"""
    return ThresholdSolution.from_dict(ReportService.read_json(path))
