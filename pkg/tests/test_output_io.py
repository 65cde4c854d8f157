"""Atomic writers, snapshot CSVs, the output lock and the run manifest."""

import csv
import json
import logging
import os

import numpy as np
import pytest

from neuralfield.discretization import FieldState, Grid
from neuralfield.errors import ConfigError
from neuralfield.output_io import (LOCK_FILE, LOG_FILE, OutputLock, RunManifest, atomic_write_csv,
                                   atomic_write_json, atomic_write_text, format_value, setup_logging,
                                   sha256_file, timestamp, write_state_csv, write_trajectory_csv)
from neuralfield.solver import Trajectory


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = tmp_path / 'out' / 'a.txt'
    atomic_write_text(str(path), 'first')
    atomic_write_text(str(path), 'second')
    assert path.read_text() == 'second'
    assert os.listdir(tmp_path / 'out') == ['a.txt']


def test_float_format_round_trips():
    value = 0.1 + 0.2
    assert float(format_value(value)) == value
    assert format_value(np.float64(1.0) / 3.0) == '0.33333333333333331'
    assert format_value(True) == 'true'
    assert format_value(None) == ''


def test_csv_columns_in_order(tmp_path):
    path = tmp_path / 'rows.csv'
    atomic_write_csv(str(path), ['b', 'a'], [{'a': 1, 'b': 0.5, 'ignored': 3}])
    assert path.read_text() == 'b,a\n0.5,1\n'


def test_json_replaces_non_finite_values(tmp_path):
    path = tmp_path / 'data.json'
    atomic_write_json(str(path), {'bound': float('inf'), 'values': np.array([1.0, 2.0]), 'n': np.int64(3)})
    data = json.loads(path.read_text())
    assert data == {'bound': 'inf', 'values': [1.0, 2.0], 'n': 3}


def test_state_and_trajectory_csv(tmp_path):
    grid = Grid(bounds=((0.0, 1.0),), nodes_per_axis=(3,))
    write_state_csv(str(tmp_path / 'u.csv'), grid, np.array([0.0, 0.5, 1.0]))
    with open(tmp_path / 'u.csv', newline='') as f:
        rows = list(csv.DictReader(f))
    assert [float(r['u']) for r in rows] == [0.0, 0.5, 1.0]
    assert [float(r['x']) for r in rows] == [0.0, 0.5, 1.0]

    traj = Trajectory(states=[FieldState(values=np.zeros(3), t=0.0), FieldState(values=np.ones(3), t=0.5)])
    write_trajectory_csv(str(tmp_path / 'traj.csv'), grid, traj)
    with open(tmp_path / 'traj.csv', newline='') as f:
        reader = csv.DictReader(f)
        assert reader.fieldnames == ['t', 'node_index', 'x', 'u']
        rows = list(reader)
    assert len(rows) == 6
    assert rows[-1]['t'] == '0.5' and rows[-1]['node_index'] == '2'


def test_two_dimensional_snapshot_has_y_column(tmp_path):
    grid = Grid(dimension=2, bounds=((0.0, 1.0), (0.0, 1.0)), nodes_per_axis=(3, 3))
    write_state_csv(str(tmp_path / 'u.csv'), grid, np.zeros(9))
    assert (tmp_path / 'u.csv').read_text().splitlines()[0] == 'x,y,u'


def test_output_lock_is_exclusive(tmp_path):
    first = OutputLock(str(tmp_path)).acquire()
    with pytest.raises(ConfigError, match='in use'):
        OutputLock(str(tmp_path)).acquire()
    first.release()
    assert not (tmp_path / LOCK_FILE).exists()
    with OutputLock(str(tmp_path)):
        assert (tmp_path / LOCK_FILE).exists()


def test_manifest_checksums_recorded_outputs(tmp_path):
    atomic_write_text(str(tmp_path / 'a.csv'), 'x\n1\n')
    manifest = RunManifest(command='simulate', config={'seed': 0}, tool_version='1.0.0',
                           started=timestamp('UTC'))
    manifest.record_output(str(tmp_path / 'a.csv'))
    manifest.record_output(str(tmp_path / 'a.csv'))
    manifest.record_output(str(tmp_path / 'missing.csv'))
    manifest.write(str(tmp_path))
    data = json.loads((tmp_path / 'manifest.json').read_text())
    assert data['checksums'] == {'a.csv': sha256_file(str(tmp_path / 'a.csv'))}
    assert data['command'] == 'simulate'
    assert data['error'] is None


def test_timestamp_uses_timezone():
    assert timestamp('Asia/Singapore').endswith('+08:00')


def test_setup_logging_writes_file(tmp_path):
    setup_logging(str(tmp_path), quiet=True)
    logging.info('hello from the test')
    assert 'hello from the test' in (tmp_path / LOG_FILE).read_text()
    for handler in list(logging.getLogger().handlers):
        logging.getLogger().removeHandler(handler)
        handler.close()
