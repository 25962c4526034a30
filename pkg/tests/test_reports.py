#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
配置、日志、产物写出与数据处理测试
"""

import math

import numpy as np
import pytest
from loguru import logger

from harvest import ConfigError, load_config, setup_logging
from harvest.models import HjbCheck, HjbReport
from harvest.services.report_service import (MANIFEST_NAME, ReportService, dumps, from_jsonable,
                                             resolve_output_dir)
from harvest.tasks import deep_merge, resolve_settings
from harvest.utils.data_processor import DataProcessor


def test_load_config_defaults():
    config = load_config()
    assert config['solver']['residual_tol'] == 1e-8
    assert config['simulation']['n_paths'] == 256
    assert config['logging']['level'] == 'INFO'


def test_load_config_falls_back_to_config_classes(tmp_path, monkeypatch):
    monkeypatch.setenv('HARVEST_ENV', 'testing')
    config = load_config(str(tmp_path / 'missing.yaml'))
    assert config['simulation']['horizon'] == 20.0
    assert config['simulation']['calibrate_dt'] is False
    assert config['solver']['quadrature']['tail_patience'] == 5


def test_setup_logging_file_sink(tmp_path, monkeypatch):
    log_file = tmp_path / 'logs' / 'harvest.log'
    monkeypatch.setenv('HARVEST_LOG_FILE', str(log_file))
    monkeypatch.delenv('HARVEST_LOG_LEVEL', raising=False)
    setup_logging({'level': 'INFO', 'console_output': False})
    logger.info("写入日志文件")
    logger.remove()
    assert '写入日志文件' in log_file.read_text(encoding='utf-8')


def test_deep_merge_and_resolve_settings():
    defaults = {'solver': {'root_tol': 1e-10, 'quadrature': {'epsabs': 1e-10, 'epsrel': 1e-10}},
                'logging': {'level': 'INFO'}}
    merged = deep_merge(defaults, {'solver': {'quadrature': {'epsrel': 1e-8}}})
    assert merged['solver']['quadrature'] == {'epsabs': 1e-10, 'epsrel': 1e-8}
    assert defaults['solver']['quadrature']['epsrel'] == 1e-10

    settings = resolve_settings(defaults, {'model': {'kind': 'logistic'}, 'run': {'seed': 3}})
    assert settings['model'] == {'kind': 'logistic'}
    assert settings['run'] == {'seed': 3}
    assert settings['solver']['root_tol'] == 1e-10
    assert 'logging' not in settings
    assert settings['simulation'] == {}


def test_dumps_is_stable():
    text = dumps({'b': math.inf, 'a': [1, math.nan, np.float64(0.5)], 'c': -math.inf, 'd': np.int64(4)})
    assert text.endswith('\n')
    assert text.index('"a"') < text.index('"b"')
    assert '"inf"' in text and '"nan"' in text and '"-inf"' in text
    restored = from_jsonable({'b': 'inf', 'a': [1, 'nan'], 'c': '-inf'})
    assert restored['b'] == math.inf
    assert math.isnan(restored['a'][1])
    assert restored['c'] == -math.inf


def test_dumps_dataclass():
    report = HjbReport(beta_star=0.7, lambda_star=0.2,
                       checks=[HjbCheck('ode_branch', 1e-9, 1e-6, True)])
    text = dumps(report)
    assert '"ode_branch"' in text
    assert '"beta_star": 0.7' in text


def test_resolve_output_dir(monkeypatch):
    monkeypatch.delenv('HARVEST_OUTPUT_DIR', raising=False)
    assert resolve_output_dir('flag', {'output': {'dir': 'cfg'}}) == 'flag'
    assert resolve_output_dir(None, {'output': {'dir': 'cfg'}}) == 'cfg'
    assert resolve_output_dir(None, {}) == 'output'
    monkeypatch.setenv('HARVEST_OUTPUT_DIR', 'env')
    assert resolve_output_dir(None, {'output': {'dir': 'cfg'}}) == 'env'
    assert resolve_output_dir('flag', {}) == 'flag'


def test_read_json_errors(tmp_path):
    with pytest.raises(ConfigError):
        ReportService.read_json(str(tmp_path / 'missing.json'))
    bad = tmp_path / 'bad.json'
    bad.write_text('{\n  "a": 1,\n}', encoding='utf-8')
    with pytest.raises(ConfigError) as excinfo:
        ReportService.read_json(str(bad))
    assert excinfo.value.line == 3


def test_manifest_round_trip(tmp_path):
    service = ReportService(str(tmp_path / 'out'))
    manifest = ReportService.build_manifest(
        model_config={'model': {'kind': 'logistic'}}, actions=['solve'], tolerances={'solver': {}},
        seeds={'seed': 1}, output_dir=service.output_dir, run={'dt': 0.01}, timestamp='2024-01-01T00:00:00')
    path = service.write_manifest(manifest)
    assert path.endswith(MANIFEST_NAME)
    loaded = ReportService.load_manifest(path)
    assert loaded == manifest
    first = (tmp_path / 'out' / MANIFEST_NAME).read_bytes()
    service.write_manifest(loaded)
    assert (tmp_path / 'out' / MANIFEST_NAME).read_bytes() == first


def test_load_manifest_missing_fields(tmp_path):
    path = tmp_path / 'manifest.json'
    path.write_text('{"manifest_version": 1}', encoding='utf-8')
    with pytest.raises(ConfigError) as excinfo:
        ReportService.load_manifest(str(path))
    assert excinfo.value.field == 'manifest'


def test_write_csv_full_precision(tmp_path):
    service = ReportService(str(tmp_path))
    frame = DataProcessor().grid_frame([0.1, 1.0 / 3.0], value=[math.pi, 2.0])
    path = service.write_csv('grid.csv', frame)
    lines = open(path, encoding='utf-8').read().splitlines()
    assert lines[0] == 'x,value'
    assert float(lines[2].split(',')[0]) == 1.0 / 3.0
    assert float(lines[1].split(',')[1]) == math.pi


def test_sample_statistics():
    stats = DataProcessor.sample_statistics([1.0, 2.0, 3.0, 4.0])
    assert stats['mean'] == 2.5
    assert stats['stderr'] == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
    single = DataProcessor.sample_statistics([5.0])
    assert single['mean'] == 5.0
    assert math.isnan(single['stderr'])
    assert math.isnan(DataProcessor.sample_statistics([])['mean'])


def test_histogram_counts_clip_to_last_bin():
    counts = DataProcessor.histogram_counts(np.array([0.0, 0.1, 0.49, 0.5, 0.99, 1.0, 1.5]), 2, 1.0)
    assert counts.tolist() == [3, 4]
    assert counts.dtype == np.int64
    mass = DataProcessor.normalized_mass(counts)
    assert mass.sum() == pytest.approx(1.0)
    assert DataProcessor.normalized_mass([0, 0]).tolist() == [0.0, 0.0]


def test_running_trace():
    trace, band = DataProcessor.running_trace(np.array([[1.0, 3.0, 2.0], [1.0, 1.0, 2.0]]))
    # 按路径平均后窗口值为 1, 2, 2
    assert trace == pytest.approx([1.0, 1.5, 5.0 / 3.0])
    assert band == pytest.approx(np.std([1.0, 2.0, 2.0], ddof=1) / math.sqrt(3))
    empty, nan_band = DataProcessor.running_trace(np.full((1, 3), np.nan))
    assert empty == [] and math.isnan(nan_band)


def test_records_frame_fixed_columns():
    frame = DataProcessor.records_frame([{'b': 1, 'a': 2}], ['a', 'b', 'c'])
    assert list(frame.columns) == ['a', 'b', 'c']
    assert math.isnan(frame.loc[0, 'c'])
