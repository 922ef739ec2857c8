import json
import os

import numpy as np
import pytest

from src.integrity import IntegrityManager, integrity_manager
from src.reporting import RunReport, emit_plots, format_float, read_csv, verify_manifest, write_csv, write_json


def test_format_float_keeps_seventeen_digits():
    assert format_float(0.1) == '1.0000000000000001e-01'
    assert float(format_float(np.pi)) == np.pi


def test_sha256_of_known_file(tmp_path):
    path = tmp_path / 'abc.txt'
    path.write_bytes(b'abc')
    assert integrity_manager.digest_file(str(path)) == \
        'ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad'
    with pytest.raises(ValueError):
        IntegrityManager('md5')


def test_csv_layout(tmp_path):
    path = write_csv(str(tmp_path / 'branch.csv'), ['epsilon', 'mu', 'iters'], [[0.1, -0.01, 3], [0.2, -0.04, 4]])
    lines = open(path, encoding='utf-8').read().splitlines()
    assert lines[0] == 'epsilon,mu,iters'
    assert lines[1] == '1.0000000000000001e-01,-1.0000000000000000e-02,3'
    data = read_csv(path)
    np.testing.assert_allclose(data['mu'], [-0.01, -0.04])
    with pytest.raises(ValueError):
        write_csv(str(tmp_path / 'bad.csv'), ['a', 'b'], [[1.0]])


def test_json_encodes_complex_and_arrays(tmp_path):
    path = write_json(str(tmp_path / 'report.json'), {'nu0': 2j, 'entries': np.eye(2), 'flag': np.bool_(True)})
    body = json.load(open(path, encoding='utf-8'))
    assert body['schema_version'] == 1
    assert body['nu0'] == {'re': 0.0, 'im': 2.0}
    assert body['entries'] == [[1.0, 0.0], [0.0, 1.0]]
    assert body['flag'] is True


def test_manifest_detects_changes(tmp_path):
    report = RunReport(str(tmp_path), 'branch')
    table = report.add_file(write_csv(str(tmp_path / 'branch.csv'), ['epsilon', 'mu'], [[0.0, 0.0], [0.1, 0.01]]))
    report.set('branch', {'criticality': 'supercritical'})
    report.start('branch')
    report.stop('branch')
    path = report.write()
    body = json.load(open(path, encoding='utf-8'))
    assert 'branch.csv' in body['manifest']
    assert 'branch' in body['wall_times']
    assert verify_manifest(path)['passed']

    with open(table, 'a', encoding='utf-8') as handle:
        handle.write('tampered\n')
    result = verify_manifest(path)
    assert not result['passed']
    assert result['failures'] == ['branch.csv']


def test_emit_plots_skips_missing_tables(tmp_path):
    assert emit_plots(str(tmp_path)) == []
    write_csv(str(tmp_path / 'eigs.csv'), ['re', 'im'], [[0.1, 1.0]])
    written = emit_plots(str(tmp_path))
    assert [os.path.basename(p) for p in written] == ['plot_spectrum.py']
    assert 'matplotlib' in open(written[0], encoding='utf-8').read()
