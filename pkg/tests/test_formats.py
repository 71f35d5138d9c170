import json
import math
import struct

import numpy as np
import pytest

from sdmmse.equalizer import EqualizerSnapshot
from sdmmse.exceptions import ConfigError
from sdmmse.formats import (DUMP_MAGIC, config_digest, config_from_dict, dump_from_bytes,
                            dump_to_bytes, load_config, load_measurements, read_csv, read_dump,
                            write_csv, write_dump)


def _snap(snr=12.5):
    rng = np.random.default_rng(0)
    w = rng.standard_normal((3, 2, 2)) + 1j * rng.standard_normal((3, 2, 2))
    return EqualizerSnapshot(w, snr_used=snr)


def test_binary_layout_is_byte_exact():
    snap = _snap()
    data = dump_to_bytes(snap)
    assert data[:8] == DUMP_MAGIC
    version, flags, D, bins, snr = struct.unpack_from('<HHIId', data, 8)
    assert (version, flags, D, bins, snr) == (1, 1, 2, 3, 12.5)
    assert len(data) == 28 + 3 * 2 * 2 * 16
    # first value is w[0, 0, 0], real then imaginary
    re, im = struct.unpack_from('<dd', data, 28)
    assert complex(re, im) == snap.w[0, 0, 0]
    # row-major: second value is w[0, 0, 1]
    re, im = struct.unpack_from('<dd', data, 44)
    assert complex(re, im) == snap.w[0, 0, 1]


@pytest.mark.parametrize('snr', [None, 40.0])
@pytest.mark.parametrize('suffix', ['.bin', '.json'])
def test_dump_roundtrip(tmp_path, snr, suffix):
    snap = _snap(snr)
    p = write_dump(snap, tmp_path / f'd{suffix}')
    back = read_dump(p)
    np.testing.assert_array_equal(back.w, snap.w)
    assert back.snr_used == snr


def test_dump_absent_snr_flag():
    data = dump_to_bytes(_snap(None))
    flags = struct.unpack_from('<H', data, 10)[0]
    assert flags == 0
    assert math.isnan(struct.unpack_from('<d', data, 20)[0])


def test_dump_corruption(tmp_path):
    data = dump_to_bytes(_snap())
    with pytest.raises(ConfigError):
        dump_from_bytes(data[:-1])
    with pytest.raises(ConfigError):
        dump_from_bytes(b'XXXXXXXX' + data[8:])
    with pytest.raises(ConfigError):
        dump_from_bytes(data[:10])
    bad = bytearray(data)
    struct.pack_into('<H', bad, 8, 7)
    with pytest.raises(ConfigError):
        dump_from_bytes(bytes(bad))
    p = tmp_path / 'x.json'
    p.write_text(json.dumps({'format': 'sdmmse-equalizer-dump', 'version': 1, 'D': 2,
                             'bins': 2, 'snr_linear': None,
                             'w_real': [[[1, 0], [0, 1]]], 'w_imag': [[[0, 0], [0, 0]]]}))
    with pytest.raises(ConfigError):
        read_dump(p)
    p.write_bytes(b'\xff\xfe\x00garbage')
    with pytest.raises(ConfigError):
        read_dump(p)


def test_config_schema(tmp_path):
    cfg = config_from_dict({'link': {'mode_count': 6, 'sigma_mdg_db': 3.0},
                            'budget': {'gsnr_db': 'inf', 'snr_imp_db': 20.0}})
    assert cfg['budget']['gsnr_db'] == math.inf
    with pytest.raises(ConfigError):
        config_from_dict({'lnk': {}})
    with pytest.raises(ConfigError):
        config_from_dict({'link': {'modes': 6}})
    with pytest.raises(ConfigError):
        config_from_dict([1, 2])
    p = tmp_path / 'c.json'
    p.write_text('{"link": {"trials": 3}}')
    assert load_config(p)['link'] == {'trials': 3}
    p.write_text('{oops')
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'missing.json')
    a = config_digest(config_from_dict({'snr_db': 20}))
    assert a == config_digest(config_from_dict({'snr_db': 20}))
    assert a != config_digest(config_from_dict({'snr_db': 21}))


def test_measurements(tmp_path):
    p = tmp_path / 'm.json'
    p.write_text(json.dumps({'sinr_db_samples': [10, 11], 'sigma_mmse_db_samples': [3, 3.5]}))
    assert load_measurements(p) == ([10.0, 11.0], [3.0, 3.5])
    p.write_text(json.dumps({'sinr_db_samples': [10]}))
    with pytest.raises(ConfigError):
        load_measurements(p)


def test_csv_roundtrip(tmp_path):
    p = write_csv(tmp_path / 'a.csv', ['x', 'y'], [[1, 0.1], [2, 1e-300]], manifest_name='m.json')
    head, cols, rows = read_csv(p)
    assert head == '# sdmmse-csv v1 manifest=m.json'
    assert cols == ['x', 'y']
    assert float(rows[0][1]) == 0.1 and float(rows[1][1]) == 1e-300
    (tmp_path / 'b.csv').write_text('x,y\n1,2\n')
    with pytest.raises(ConfigError):
        read_csv(tmp_path / 'b.csv')


def test_config_rejects_unknown_section_keys():
    with pytest.raises(ConfigError):
        config_from_dict({'analyze': {'sigma_db': [1.0]}})
    with pytest.raises(ConfigError):
        config_from_dict({'monitor': {'nsnr': 10}})
    assert config_from_dict({'monitor': {'n_snr': 10}})['monitor'] == {'n_snr': 10}
