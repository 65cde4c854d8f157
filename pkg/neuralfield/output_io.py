"""
output_io.py - Logging setup, atomic file output, output-directory lock and run manifest

Every file a run emits goes through atomic_write_* (temp file in the target
directory, flush + fsync, os.replace), so a crash never leaves a partially
written CSV behind. Floats are written with 17 significant digits.
"""

import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pytz

from .errors import ConfigError


LOG_FILE = 'neural_field.log'
LOCK_FILE = '.neural_field.lock'
MANIFEST_FILE = 'manifest.json'
FLOAT_FORMAT = '%.17g'


# ============================================================================
# Logging
# ============================================================================

class FlushFileHandler(logging.FileHandler):
    """File handler that flushes after every record."""

    def emit(self, record):
        super().emit(record)
        self.flush()


def setup_logging(output_dir: Optional[str], quiet: bool = False) -> logging.Logger:
    """Log to <output_dir>/neural_field.log (DEBUG) and stdout (INFO).

    Without an output directory only the console handler is installed.
    """
    console_formatter = logging.Formatter('%(levelname)s - %(message)s')

    logger = logging.getLogger()
    logger.setLevel(logging.DEBUG)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
        file_handler = FlushFileHandler(os.path.join(output_dir, LOG_FILE), mode='a', encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        logger.addHandler(file_handler)

    if not quiet:
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(console_formatter)
        logger.addHandler(console_handler)

    return logger


# ============================================================================
# Atomic Writers
# ============================================================================

def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    if value is None:
        return ''
    return str(value)


def atomic_write_text(path: str, text: str) -> str:
    """Write text to path via temp file + fsync + rename. Returns path."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp_', dir=directory)
    try:
        with os.fdopen(fd, 'w', newline='', encoding='utf-8') as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def atomic_write_csv(path: str, fieldnames: Sequence[str], rows: Iterable[Dict]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(fieldnames), extrasaction='ignore', lineterminator='\n')
    writer.writeheader()
    for row in rows:
        writer.writerow({key: format_value(row.get(key)) for key in fieldnames})
    return atomic_write_text(path, buffer.getvalue())


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    raise TypeError(f'Object of type {type(value).__name__} is not JSON serializable')


def _json_safe(value):
    """Replace non-finite floats (not valid JSON) with strings."""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (float, np.floating)) and not np.isfinite(value):
        return str(float(value))
    return value


def atomic_write_json(path: str, data: Dict) -> str:
    text = json.dumps(_json_safe(data), indent=2, default=_json_default)
    return atomic_write_text(path, text + '\n')


# ============================================================================
# Field Snapshots
# ============================================================================

def coordinate_columns(dimension: int) -> List[str]:
    return ['x'] if dimension == 1 else ['x', 'y']


def state_rows(grid, values: np.ndarray) -> List[Dict]:
    """CSV rows (node_index, x[, y], u) for one field snapshot."""
    columns = coordinate_columns(grid.dimension)
    nodes = grid.nodes
    rows = []
    for i, u in enumerate(values):
        row = {'node_index': i, 'u': float(u)}
        for axis, name in enumerate(columns):
            row[name] = float(nodes[i, axis])
        rows.append(row)
    return rows


def write_state_csv(path: str, grid, values: np.ndarray) -> str:
    return atomic_write_csv(path, coordinate_columns(grid.dimension) + ['u'], state_rows(grid, values))


def write_trajectory_csv(path: str, grid, trajectory) -> str:
    fieldnames = ['t', 'node_index'] + coordinate_columns(grid.dimension) + ['u']
    rows = []
    for state in trajectory.states:
        for row in state_rows(grid, state.values):
            row['t'] = float(state.t)
            rows.append(row)
    return atomic_write_csv(path, fieldnames, rows)


# ============================================================================
# Output Lock
# ============================================================================

class OutputLock:
    """Exclusive ownership of an output directory for one run."""

    def __init__(self, output_dir: str):
        self.path = os.path.join(output_dir, LOCK_FILE)
        self._fd: Optional[int] = None

    def acquire(self):
        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f'Output directory is in use by another run (lock file {self.path})')
        os.write(self._fd, str(os.getpid()).encode('ascii'))
        return self

    def release(self):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
            if os.path.exists(self.path):
                os.remove(self.path)

    def __enter__(self):
        return self.acquire()

    def __exit__(self, exc_type, exc, tb):
        self.release()
        return False


# ============================================================================
# Run Manifest
# ============================================================================

def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def timestamp(timezone: str = 'UTC') -> str:
    return datetime.now(pytz.timezone(timezone)).isoformat(timespec='seconds')


@dataclass
class RunManifest:
    command: str
    config: Dict
    tool_version: str
    started: str
    constants: Optional[Dict] = None
    q: Optional[float] = None
    rho: Optional[float] = None
    l1_contraction: Optional[float] = None
    wall_seconds: float = 0.0
    outputs: List[str] = field(default_factory=list)
    checksums: Dict[str, str] = field(default_factory=dict)
    error: Optional[Dict] = None

    def record_output(self, path: str):
        name = os.path.basename(path)
        if name not in self.outputs:
            self.outputs.append(name)

    def to_dict(self) -> Dict:
        return {
            'command': self.command,
            'tool_version': self.tool_version,
            'started': self.started,
            'wall_seconds': self.wall_seconds,
            'config': self.config,
            'constants': self.constants,
            'q': self.q,
            'rho': self.rho,
            'l1_contraction': self.l1_contraction,
            'checksums': self.checksums,
            'error': self.error,
        }

    def write(self, output_dir: str) -> str:
        """Checksum every recorded output, then write manifest.json atomically."""
        self.checksums = {}
        for name in sorted(self.outputs):
            path = os.path.join(output_dir, name)
            if os.path.exists(path):
                self.checksums[name] = sha256_file(path)
        return atomic_write_json(os.path.join(output_dir, MANIFEST_FILE), self.to_dict())
