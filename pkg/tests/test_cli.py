"""End-to-end runs of neural_field_tool through main(argv)."""

import csv
import json
import logging

import pytest

from neuralfield.neural_field_tool import main
from neuralfield.output_io import LOCK_FILE, LOG_FILE


SMALL = {
    'grid': {'bounds': [[-10.0, 10.0]], 'nodes': [41]},
    'solver': {'method': 'exp-euler', 'dt': 0.1, 't_end': 1.0},
    'initial': {'kind': 'gaussian-bump', 'params': {'amplitude': 1.0, 'width': 2.0}},
    'study': {'n_pairs': 20},
}


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ('NF_MODEL_GAMMA', 'NF_SEED', 'NF_THREADS', 'NF_OUTPUT_DIR'):
        monkeypatch.delenv(name, raising=False)
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'small.json'
    path.write_text(json.dumps(SMALL))
    return str(path)


def run_tool(*argv):
    with pytest.raises(SystemExit) as info:
        main(list(argv) + ['--quiet'])
    return info.value.code


def read_manifest(directory):
    return json.loads((directory / 'manifest.json').read_text())


def test_simulate_writes_outputs_and_manifest(tmp_path, config_file):
    out = tmp_path / 'sim'
    assert run_tool('simulate', '--config', config_file, '--out', str(out)) == 0
    manifest = read_manifest(out)
    assert set(manifest['checksums']) == {'trajectory.csv', 'bounds.csv'}
    assert manifest['error'] is None
    assert manifest['q'] is not None and manifest['q'] < 1.0
    with open(out / 'bounds.csv', newline='') as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 11
    assert all(float(r['sup_u']) <= float(r['bound']) for r in rows)


def test_reruns_reproduce_checksums(tmp_path, config_file):
    outs = [tmp_path / name for name in ('a', 'b', 'c')]
    assert run_tool('simulate', '--config', config_file, '--out', str(outs[0])) == 0
    assert run_tool('simulate', '--config', config_file, '--out', str(outs[1])) == 0
    assert run_tool('simulate', '--config', config_file, '--out', str(outs[2]), '--threads', '4') == 0
    checksums = [read_manifest(out)['checksums'] for out in outs]
    assert checksums[0] == checksums[1] == checksums[2]


def test_stationary_flow(tmp_path, config_file):
    out = tmp_path / 'stationary'
    assert run_tool('stationary', '--config', config_file, '--method', 'flow', '--out', str(out)) == 0
    summary = json.loads((out / 'stationary.json').read_text())
    assert summary['method'] == 'flow'
    assert summary['converged'] is True
    assert 'equicontinuity' in summary
    assert (out / 'u_inf.csv').exists()


def test_study_contraction_passes(tmp_path, config_file):
    out = tmp_path / 'contraction'
    assert run_tool('study', 'contraction', '--config', config_file, '--out', str(out)) == 0
    verdict = json.loads((out / 'verdict.json').read_text())
    assert verdict['pass'] is True
    assert read_manifest(out)['command'] == 'study contraction'


def test_bad_config_exits_with_config_code(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps({'model': {'gamma': -1.0}}))
    out = tmp_path / 'bad'
    assert run_tool('simulate', '--config', str(path), '--out', str(out)) == 2
    manifest = read_manifest(out)
    assert manifest['error']['type'] == 'SchemaError'
    assert manifest['error']['exit_code'] == 2
    assert not (out / 'trajectory.csv').exists()


def test_constants_and_validate(tmp_path, config_file):
    out = tmp_path / 'constants'
    assert run_tool('constants', '--config', config_file, '--out', str(out)) == 0
    summary = json.loads((out / 'constants.json').read_text())
    assert summary['gamma'] == 0.5
    assert 0.0 < summary['q'] < 1.0
    assert summary['constants']['L'] == 0.25

    out = tmp_path / 'validate'
    assert run_tool('validate', '--config', config_file, '--seed', '9', '--out', str(out)) == 0
    echo = json.loads((out / 'config_echo.json').read_text())
    assert echo['seed'] == 9
    assert echo['grid']['nodes'] == [41]


def test_schrodinger_square_well(tmp_path):
    out = tmp_path / 'schrodinger'
    assert run_tool('schrodinger', '--well', '1,2', '--out', str(out)) == 0
    summary = json.loads((out / 'schrodinger.json').read_text())
    assert summary['energies'][0] == pytest.approx(0.79, abs=0.01)
    assert abs(summary['ground_energy_difference']) < 1e-3
    assert not (out / 'crosscheck.json').exists()


def test_schrodinger_rejects_malformed_well(tmp_path):
    out = tmp_path / 'malformed'
    assert run_tool('schrodinger', '--well', '1', '--out', str(out)) == 2
    assert read_manifest(out)['error']['type'] == 'ConfigError'


def test_locked_output_directory_left_untouched(tmp_path, config_file):
    out = tmp_path / 'busy'
    out.mkdir()
    (out / LOCK_FILE).write_text('12345')
    (out / 'manifest.json').write_text(json.dumps({'owner': 'other run'}))
    assert run_tool('validate', '--config', config_file, '--out', str(out)) == 2
    assert read_manifest(out) == {'owner': 'other run'}
    assert (out / LOCK_FILE).read_text() == '12345'
    assert not (out / LOG_FILE).exists()
    assert not (out / 'config_echo.json').exists()
