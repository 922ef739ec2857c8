"""
Artifact persistence for Oscilla runs
Atomic writes, fixed-format CSV tables, JSON reports with a checksummed file manifest,
and self-contained plot scripts
"""
import json
import logging
import os
import tempfile
import time
from importlib import metadata
from typing import Dict, Iterable, List, Sequence

import numpy as np

from config.settings import SCHEMA_VERSION
from src.integrity import integrity_manager

logger = logging.getLogger(__name__)

VERSIONED_PACKAGES = ('numpy', 'scipy', 'scikit-fem', 'scikit-learn', 'cryptography')


def format_float(x) -> str:
    """17 significant digits, scientific notation"""
    return format(float(x), '.16e')


def atomic_write_text(path: str, text: str) -> str:
    """Write through a temporary file in the target directory, then rename"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Single header row, one line per record"""
    lines = [','.join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        lines.append(','.join(_cell(v) for v in row))
    return atomic_write_text(path, '\n'.join(lines) + '\n')


def read_csv(path: str) -> Dict[str, np.ndarray]:
    """Column dict of a CSV written by write_csv (numeric columns as float arrays)"""
    with open(path, encoding='utf-8') as handle:
        header = handle.readline().strip().split(',')
        rows = [line.strip().split(',') for line in handle if line.strip()]
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = np.array(col)
    return out


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {'re': float(np.real(value)), 'im': float(np.imag(value))}
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def write_json(path: str, payload: Dict) -> str:
    body = {'schema_version': SCHEMA_VERSION, **_jsonable(payload)}
    return atomic_write_text(path, json.dumps(body, indent=2, sort_keys=True) + '\n')


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'unknown'
    return versions


class RunReport:
    """Machine-readable summary of a run with a checksummed manifest"""

    def __init__(self, output_dir: str, subcommand: str):
        self.output_dir = output_dir
        self.subcommand = subcommand
        self.sections: Dict[str, Dict] = {}
        self.manifest: Dict[str, str] = {}
        self.wall_times: Dict[str, float] = {}
        self._started: Dict[str, float] = {}

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def add_file(self, path: str) -> str:
        """Register an artifact; the checksum is taken when the report is written"""
        rel = os.path.relpath(path, self.output_dir)
        self.manifest[rel] = ''
        return path

    def set(self, section: str, values: Dict):
        self.sections.setdefault(section, {}).update(values)

    def start(self, stage: str):
        self._started[stage] = time.perf_counter()

    def stop(self, stage: str):
        if stage in self._started:
            self.wall_times[stage] = time.perf_counter() - self._started.pop(stage)

    def finalize(self) -> Dict:
        manifest = {}
        for rel in sorted(self.manifest):
            full = os.path.join(self.output_dir, rel)
            if not os.path.exists(full):
                logger.warning("Manifest entry %s missing, dropped", rel)
                continue
            manifest[rel] = {'sha256': integrity_manager.digest_file(full), 'bytes': os.path.getsize(full)}
        return {
            'subcommand': self.subcommand,
            **self.sections,
            'manifest': manifest,
            'versions': package_versions(),
            'wall_times': self.wall_times,
        }

    def write(self, name: str = 'run_report.json') -> str:
        return write_json(self.path(name), self.finalize())


def verify_manifest(report_path: str) -> Dict:
    """Re-check every manifest entry of a written report"""
    with open(report_path, encoding='utf-8') as handle:
        report = json.load(handle)
    base = os.path.dirname(os.path.abspath(report_path))
    failures = [rel for rel, entry in report.get('manifest', {}).items()
                if not integrity_manager.verify_file(os.path.join(base, rel), entry['sha256'])]
    return {'passed': not failures, 'failures': failures,
            'message': 'manifest verified' if not failures else f"{len(failures)} files changed or missing"}


_PLOT_HEADER = '''"""Generated by oscilla emit-plots"""
import csv
import os

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    with open(os.path.join(HERE, name)) as handle:
        rows = list(csv.DictReader(handle))
    return {k: [float(r[k]) for r in rows] for k in rows[0]} if rows else {}

'''

_PLOT_BODIES = {
    'branch.csv': ('plot_bifurcation.py', '''
data = load('branch.csv')
fig, ax = plt.subplots()
ax.plot(data['mu'], data['amplitude_L2'], 'o-')
ax.set_xlabel('mu')
ax.set_ylabel('amplitude')
ax.set_title('Periodic branch')
fig.savefig(os.path.join(HERE, 'bifurcation.png'), dpi=150)
'''),
    'eigs.csv': ('plot_spectrum.py', '''
data = load('eigs.csv')
fig, ax = plt.subplots()
ax.plot(data['re'], data['im'], 'x')
ax.axvline(0.0, color='k', lw=0.5)
ax.set_xlabel('Re nu')
ax.set_ylabel('Im nu')
ax.set_title('Spectrum near the imaginary axis')
fig.savefig(os.path.join(HERE, 'spectrum.png'), dpi=150)
'''),
    'resonance.csv': ('plot_resonance.py', '''
data = load('resonance.csv')
fig, ax = plt.subplots()
ax.loglog(data['varpi'], data['xi_abs'], 'o-', label='|xi|')
ref = [data['xi_abs'][0] * data['varpi'][0] / v for v in data['varpi']]
ax.loglog(data['varpi'], ref, 'k--', label='slope -1')
ax.set_xlabel('varpi')
ax.set_ylabel('|xi|')
ax.legend()
fig.savefig(os.path.join(HERE, 'resonance.png'), dpi=150)
'''),
}


def emit_plots(artifact_dir: str) -> List[str]:
    """Write one plot script per recognized CSV; missing CSVs are skipped"""
    written = []
    for csv_name, (script, body) in _PLOT_BODIES.items():
        if not os.path.exists(os.path.join(artifact_dir, csv_name)):
            logger.warning("%s not found in %s, plot script skipped", csv_name, artifact_dir)
            continue
        written.append(atomic_write_text(os.path.join(artifact_dir, script), _PLOT_HEADER + body))
    if not written:
        logger.warning("No plot scripts emitted for %s", artifact_dir)
    return written
