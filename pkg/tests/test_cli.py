import json
import os

import pytest

from main import main
from src.reporting import read_csv, verify_manifest

TINY_MESH = '[mesh]\nR_trunc = 5.0\nresolution = 12\ngrading = 1.5\n'


def test_surrogate_branch_run(tmp_path, capsys):
    out = tmp_path / 'run'
    code = main(['surrogate', '--case', 'normal-form-super', '--output', str(out), '--points', '7'])
    assert code == 0
    assert '✓ normal-form-super' in capsys.readouterr().out
    branch = read_csv(str(out / 'branch.csv'))
    assert list(branch) == ['epsilon', 'mu', 'zeta', 'amplitude_L2', 'residual', 'iters']
    assert len(branch['mu']) == 7
    report = json.load(open(out / 'branch_report.json', encoding='utf-8'))
    assert report['criticality']['classification'] == 'supercritical'
    assert verify_manifest(str(out / 'run_report.json'))['passed']


def test_resonant_surrogate_is_rejected(tmp_path, capsys):
    code = main(['surrogate', '--case', 'planted-resonance', '--output', str(tmp_path), '-q'])
    assert code == 0
    assert '⚠' in capsys.readouterr().out
    result = json.load(open(tmp_path / 'surrogate_report.json', encoding='utf-8'))
    assert not result['accepted']
    assert not os.path.exists(tmp_path / 'branch.csv')


def test_unknown_config_key_exits_with_validation_code(tmp_path, capsys):
    config = tmp_path / 'run.toml'
    config.write_text('[branch]\nepsilon = 0.1\n', encoding='utf-8')
    code = main(['surrogate', '--case', 'normal-form-sub', '--config', str(config), '--output', str(tmp_path)])
    assert code == 2
    assert "branch.epsilon" in capsys.readouterr().err


def test_emit_plots_on_empty_directory(tmp_path):
    assert main(['emit-plots', str(tmp_path), '-q']) == 0


def test_emit_plots_on_missing_directory(tmp_path):
    assert main(['emit-plots', str(tmp_path / 'absent'), '-q']) == 2


def test_bad_arguments_exit_through_argparse():
    with pytest.raises(SystemExit):
        main(['eigs', '--window', '1.0'])


@pytest.mark.slow
def test_modes_on_a_coarse_mesh(tmp_path):
    config = tmp_path / 'run.toml'
    config.write_text(TINY_MESH + '[model]\nA = [1.0, 0.0, 0.0, 4.0]\n', encoding='utf-8')
    out = tmp_path / 'run'
    code = main(['modes', '--config', str(config), '--output', str(out), '--zeta', '0.5', '--lambda', '2.0',
                 '--kmax', '2', '-q'])
    assert code == 0
    assert os.path.exists(out / 'Kmat_2.json')
    report = json.load(open(out / 'run_report.json', encoding='utf-8'))
    assert report['modes']['energy_identity']['c_D_is_two']


@pytest.mark.slow
def test_simulate_on_a_coarse_mesh(tmp_path):
    config = tmp_path / 'run.toml'
    config.write_text(TINY_MESH, encoding='utf-8')
    out = tmp_path / 'run'
    code = main(['simulate', '--config', str(config), '--output', str(out), '--lambda', '5.0',
                 '--tfinal', '1.0', '--dt', '0.05', '-q'])
    assert code == 0
    trajectory = read_csv(str(out / 'trajectory.csv'))
    assert len(trajectory['t']) == 21
