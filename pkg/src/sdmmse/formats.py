"""File formats: equalizer dumps, link configuration, measurements, CSV.

Equalizer dump, binary layout (all little-endian)::

    offset  size  field
    0       8     magic  b"SDMWDUMP"
    8       2     version, uint16 (= 1)
    10      2     flags, uint16; bit 0 set when an SNR is stored
    12      4     D, uint32
    16      4     bins (Omega), uint32
    20      8     snr_linear, float64 (NaN when absent)
    28      ...   Omega * D * D complex128, bin-major then row-major,
                  each value as (real float64, imag float64)

The JSON variant is an object with the same fields:
``{"format": "sdmmse-equalizer-dump", "version": 1, "D": .., "bins": ..,
"snr_linear": .. | null, "w_real": [[[..]]], "w_imag": [[[..]]]}``.
"""
import csv
import dataclasses
import hashlib
import json
import math
import struct
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .channel import LinkBudget, LinkConfig
from .equalizer import EqualizerSnapshot
from .exceptions import ConfigError

__all__ = ['DUMP_MAGIC', 'write_dump', 'read_dump', 'dump_to_bytes', 'dump_from_bytes',
           'load_config', 'config_from_dict', 'config_to_dict', 'config_digest',
           'load_measurements', 'RunManifest', 'write_csv', 'read_csv', 'CSV_VERSION']

DUMP_MAGIC = b"SDMWDUMP"
DUMP_VERSION = 1
DUMP_JSON_FORMAT = 'sdmmse-equalizer-dump'
_HEADER = struct.Struct('<8sHHIId')
CSV_VERSION = 'sdmmse-csv v1'


# -- equalizer dumps -----------------------------------------------------------------

def dump_to_bytes(snap):
    w = np.ascontiguousarray(snap.w, dtype='<c16')
    flags = 1 if snap.snr_used is not None else 0
    snr = float(snap.snr_used) if snap.snr_used is not None else math.nan
    return _HEADER.pack(DUMP_MAGIC, DUMP_VERSION, flags, snap.mode_count, snap.bins, snr) + w.tobytes()


def dump_from_bytes(data):
    if len(data) < _HEADER.size:
        raise ConfigError("equalizer dump is truncated (no header)")
    magic, version, flags, D, bins, snr = _HEADER.unpack_from(data)
    if magic != DUMP_MAGIC:
        raise ConfigError("not an equalizer dump (bad magic)")
    if version != DUMP_VERSION:
        raise ConfigError(f"unsupported equalizer dump version {version}")
    if D == 0 or bins == 0:
        raise ConfigError("equalizer dump has zero modes or bins")
    expected = _HEADER.size + 16 * D * D * bins
    if len(data) != expected:
        raise ConfigError(f"equalizer dump size {len(data)} does not match header ({expected})")
    w = np.frombuffer(data, dtype='<c16', offset=_HEADER.size).reshape(bins, D, D)
    return EqualizerSnapshot(w.astype(complex), snr_used=float(snr) if flags & 1 else None)


def _dump_to_json(snap):
    return json.dumps({
        'format': DUMP_JSON_FORMAT, 'version': DUMP_VERSION,
        'D': snap.mode_count, 'bins': snap.bins, 'snr_linear': snap.snr_used,
        'w_real': snap.w.real.tolist(), 'w_imag': snap.w.imag.tolist(),
    })


def _dump_from_json(text):
    try:
        doc = json.loads(text)
        if doc.get('format') != DUMP_JSON_FORMAT:
            raise ConfigError("not an equalizer dump JSON document")
        if doc.get('version') != DUMP_VERSION:
            raise ConfigError(f"unsupported equalizer dump version {doc.get('version')!r}")
        w = np.asarray(doc['w_real'], dtype=float) + 1j * np.asarray(doc['w_imag'], dtype=float)
        if w.shape != (doc['bins'], doc['D'], doc['D']):
            raise ConfigError(f"dump matrices have shape {w.shape}, header says "
                              f"({doc['bins']}, {doc['D']}, {doc['D']})")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed equalizer dump JSON: {exc}") from None
    snr = doc.get('snr_linear')
    return EqualizerSnapshot(w, snr_used=None if snr is None else float(snr))


def write_dump(snap, path, fmt=None):
    """Write a snapshot; ``fmt`` is ``'bin'`` or ``'json'`` (default from suffix)."""
    path = Path(path)
    fmt = fmt or ('json' if path.suffix == '.json' else 'bin')
    if fmt == 'json':
        path.write_text(_dump_to_json(snap), encoding='utf-8')
    elif fmt == 'bin':
        path.write_bytes(dump_to_bytes(snap))
    else:
        raise ConfigError(f"unknown dump format {fmt!r}")
    return path


def read_dump(path):
    """Read a binary or JSON dump, detected from the leading bytes."""
    data = Path(path).read_bytes()
    if data.startswith(DUMP_MAGIC):
        return dump_from_bytes(data)
    try:
        return _dump_from_json(data.decode('utf-8'))
    except UnicodeDecodeError:
        raise ConfigError(f"{path}: neither a binary nor a JSON equalizer dump") from None


# -- configuration ---------------------------------------------------------------------

_CONFIG_KEYS = {
    'link': {f.name for f in dataclasses.fields(LinkConfig)},
    'budget': {f.name for f in dataclasses.fields(LinkBudget)},
    'analyze': {'sigma_mdg_db', 'snr_db', 'qam', 'ghq_points', 'modes'},
    'monitor': {'modes', 'n_snr', 'n_sigma', 'snr_range_db', 'sigma_range_db',
                'residual_limit'},
}
_TOP_KEYS = {'link', 'budget', 'snr_db', 'analyze', 'monitor'}


def _num(v):
    # JSON has no infinity; accept the strings "inf"/"-inf"
    if isinstance(v, str) and v.strip().lower() in ('inf', '+inf', 'infinity'):
        return math.inf
    return v


def config_from_dict(doc):
    """Validate a configuration document and return it with defaults filled in.

    Schema::

        {"link":   {LinkConfig fields},
         "budget": {"gsnr_db", "signal_bandwidth_hz", "snr_imp_db"},
         "snr_db": number   (overrides the budget when present),
         "analyze": {"sigma_mdg_db": [..], "snr_db": [..], "qam": [..], "ghq_points": [..],
                     "modes": int | "inf"},
         "monitor": {"modes": int | "inf", "n_snr": int, "n_sigma": int,
                     "snr_range_db": [lo, hi], "sigma_range_db": [lo, hi],
                     "residual_limit": number}}
    """
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    out = {k: dict(doc.get(k) or {}) for k in ('link', 'budget', 'analyze', 'monitor')}
    for section, keys in _CONFIG_KEYS.items():
        bad = set(out[section]) - keys
        if bad:
            raise ConfigError(f"unknown keys in '{section}': {sorted(bad)}")
        if section in ('link', 'budget'):
            out[section] = {k: _num(v) for k, v in out[section].items()}
    out['snr_db'] = doc.get('snr_db')
    return out


def config_to_dict(cfg_doc):
    def enc(v):
        if isinstance(v, float) and math.isinf(v):
            return 'inf' if v > 0 else '-inf'
        if isinstance(v, dict):
            return {k: enc(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [enc(x) for x in v]
        return v
    return enc(cfg_doc)


def load_config(path):
    if path is None:
        return config_from_dict({})
    try:
        with open(path, encoding='utf-8') as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(doc)


def config_digest(cfg_doc):
    text = json.dumps(config_to_dict(cfg_doc), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(text.encode()).hexdigest()


def load_measurements(path):
    """``(sinr_db_samples, sigma_mmse_db_samples)`` from a measurement JSON file."""
    try:
        with open(path, encoding='utf-8') as fh:
            doc = json.load(fh)
        s = [float(x) for x in doc['sinr_db_samples']]
        m = [float(x) for x in doc['sigma_mmse_db_samples']]
    except OSError as exc:
        raise ConfigError(f"cannot read measurements {path}: {exc}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed measurement file {path}: {exc!r}") from None
    return s, m


# -- run manifest and CSV -----------------------------------------------------------

@dataclasses.dataclass
class RunManifest:
    """Provenance record written next to every command's outputs."""

    command: str
    config_digest: str
    seed: int
    tool_version: str
    started: str = dataclasses.field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec='seconds'))
    finished: str = ''
    outputs: list = dataclasses.field(default_factory=list)

    def finish(self, path):
        self.finished = datetime.now(timezone.utc).isoformat(timespec='seconds')
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2), encoding='utf-8')
        return path


def write_csv(path, columns, rows, manifest_name=None):
    """CSV with a ``# sdmmse-csv v1`` comment line, then header and rows."""
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        tag = f"# {CSV_VERSION}" + (f" manifest={manifest_name}" if manifest_name else "")
        fh.write(tag + "\n")
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path):
    """``(version_line, columns, rows)``; values are left as strings."""
    with open(path, newline='', encoding='utf-8') as fh:
        first = fh.readline().rstrip('\n')
        if not first.startswith(f"# {CSV_VERSION}"):
            raise ConfigError(f"{path}: missing '{CSV_VERSION}' header line")
        reader = csv.reader(fh)
        cols = next(reader)
        return first, cols, list(reader)
