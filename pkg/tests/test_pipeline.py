import json
import os

import pytest

from src.pipeline import Pipeline
from src.run_config import RunConfig
from src.spectral import find_crossing
from src.surrogates import make_case


def _pipeline(tmp_path, subcommand, problem=None, **sections):
    config = RunConfig({**sections, 'run': {'output_dir': str(tmp_path)}})
    pipeline = Pipeline(config, subcommand)
    if problem is not None:
        pipeline._problem = problem
    return pipeline


def _tiny_sections():
    return {'model': {'lambda': 5.0, 'A': [1.0, 0.0, 0.0, 2.0]},
            'spectral': {'method': 'shift-invert', 'n_shifts': 3, 'n_eigs': 6}}


def test_resonant_candidate_is_not_continued(tmp_path, monkeypatch):
    candidate = find_crossing(make_case('planted-resonance'), (2.0, 4.0), 0.5, 3.0)
    pipeline = _pipeline(tmp_path, 'branch')
    monkeypatch.setattr(pipeline, 'hopf', lambda lam_range=None: candidate)

    def continued(*args, **kwargs):
        raise AssertionError("branch continued for a rejected candidate")

    monkeypatch.setattr(pipeline, '_branch', continued)
    result = pipeline.branch()
    assert not result['accepted']
    assert 'nonresonant' in result['message']
    assert not os.path.exists(tmp_path / 'branch.csv')
    report = json.load(open(pipeline.finish(), encoding='utf-8'))
    assert report['branch']['accepted'] is False


def test_surrogate_rejected_by_simplicity_tolerance(tmp_path):
    pipeline = _pipeline(tmp_path, 'surrogate', spectral={'tol_simplicity': 2.0})
    result = pipeline.surrogate('planted')
    assert not result['accepted']
    assert 'simple' in result['message']
    assert not os.path.exists(tmp_path / 'branch.csv')


def test_hopf_on_tiny_mesh(tmp_path, problem):
    pipeline = _pipeline(tmp_path, 'hopf', problem, **_tiny_sections())
    candidate = pipeline.hopf()
    assert candidate.lam_o == 5.0
    assert 0.05 <= candidate.zeta0 <= 2.0
    body = json.load(open(tmp_path / 'hopf_candidate.json', encoding='utf-8'))
    assert body['lambda_o'] == 5.0
    assert 'passed' in body['guard']
    assert body['nonresonance']['margins']


def test_hopf_pipeline_on_tiny_mesh(tmp_path, problem):
    pipeline = _pipeline(tmp_path, 'hopf-pipeline', problem, **_tiny_sections())
    result = pipeline.hopf_pipeline()
    assert os.path.exists(tmp_path / 'steady.csv')
    assert os.path.exists(tmp_path / 'eigs.csv')
    guard = pipeline.report.sections['hopf']['guard']
    assert result['accepted'] == guard['passed']
    assert os.path.exists(tmp_path / 'branch.csv') == result['accepted']
    assert pytest.approx(5.0) == pipeline.report.sections['hopf']['lambda_o']
