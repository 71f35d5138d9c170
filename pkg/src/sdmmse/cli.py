"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 out-of-domain estimate.
"""
import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channel import LinkBudget, LinkConfig, effective_snr, ensemble_stats
from .exceptions import ConfigError, NumericalError, OutOfDomainError
from .formats import (RunManifest, config_digest, load_config, load_measurements,
                      read_dump, write_csv, write_dump)
from .monitor import (DEFAULT_RESIDUAL_LIMIT, MonitorLut, aggregate_measurements,
                      analytic_sigma_mmse, build_lut, estimate, jacobian_map,
                      snapshot_measurement)
from .randmat import INF, GueSpectrum
from .rates import (analytical_sinr, capacity_awgn, capacity_ml, capacity_mmse,
                    gauss_hermite_rule, mutual_information, prefec_ber, qam_constellation)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DOMAIN = 0, 2, 3, 4

ANALYZE_COLUMNS = ['sigma_mdg_db', 'snr_db', 'sinr_db', 'delta_db', 'c_mmse', 'c_ml', 'xi']
SIMULATE_COLUMNS = ['trial', 'bin', 'mode_index', 'lambda_db', 'sinr_db']
JACOBIAN_COLUMNS = ['snr_db', 'sigma_db', 'det', 'one_sided']


# -- argument helpers ---------------------------------------------------------------

def parse_sweep(text):
    """``"a"``, ``"a,b,c"`` or ``"start:stop:step"`` (stop inclusive) -> list of float."""
    try:
        if ':' not in text:
            return [float(p) for p in text.split(',') if p.strip()]
        start, stop, step = (float(p) for p in text.split(':'))
    except ValueError:
        raise ConfigError(f"cannot parse sweep {text!r}") from None
    if not step > 0 or stop < start:
        raise ConfigError(f"invalid sweep bounds {text!r}")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(n)]


def parse_modes(text):
    if str(text).lower() in ('inf', 'infinity'):
        return INF
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"--modes must be an integer or 'inf', got {text!r}") from None


def _int_list(text):
    try:
        return [int(p) for p in str(text).split(',') if p.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def _common(p):
    p.add_argument('--config', help="JSON configuration document")
    p.add_argument('--out', help="output file (stdout when omitted)")
    p.add_argument('--format', choices=('csv', 'json'), default='csv')


def _link_flags(p):
    p.add_argument('--seed', type=int)
    p.add_argument('--trials', type=int)
    p.add_argument('--modes')
    p.add_argument('--sections', type=int)
    p.add_argument('--bins', type=int, help="frequency bins per trial")
    p.add_argument('--sigma-g-db', type=float, help="per-section MDG")


def _budget_flags(p):
    p.add_argument('--gsnr-db', type=float)
    p.add_argument('--bandwidth-hz', type=float)
    p.add_argument('--snr-imp-db', type=float)


def build_parser():
    ap = argparse.ArgumentParser(prog='sdmmse', description=__doc__.splitlines()[0])
    ap.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = ap.add_subparsers(dest='command', required=True)

    p = sub.add_parser('analyze', help="analytic SINR, capacity, BER and MI sweeps")
    _common(p)
    _budget_flags(p)
    p.add_argument('--modes', help="mode count or 'inf' (default inf)")
    p.add_argument('--sigma-mdg-db', help="sweep, e.g. 0:16:1 or 3,6,10")
    p.add_argument('--snr-db', help="sweep, e.g. 20 or 0:30:5")
    p.add_argument('--qam', help="comma-separated QAM orders for BER/MI columns")
    p.add_argument('--ghq-points', help="comma-separated Gauss-Hermite sizes for MI columns")

    p = sub.add_parser('simulate', help="Monte-Carlo multi-section link")
    _common(p)
    _link_flags(p)
    _budget_flags(p)
    p.add_argument('--sigma-mdg-db', type=float)
    p.add_argument('--snr-db', type=float)
    p.add_argument('--dump-dir', help="write one equalizer dump per trial here")
    p.add_argument('--dump-format', choices=('bin', 'json'), default='bin')
    p.add_argument('--jobs', type=int)

    p = sub.add_parser('lut', help="monitoring lookup table")
    lsub = p.add_subparsers(dest='lut_command', required=True)
    b = lsub.add_parser('build')
    b.add_argument('--config')
    b.add_argument('--out', required=True)
    b.add_argument('--modes', help="mode count of the analytic model (default inf)")
    b.add_argument('--n-snr', type=int)
    b.add_argument('--n-sigma', type=int)
    b.add_argument('--jobs', type=int)
    i = lsub.add_parser('inspect')
    i.add_argument('path')

    p = sub.add_parser('estimate', help="invert measurements through a lookup table")
    p.add_argument('--config')
    p.add_argument('--lut', required=True)
    p.add_argument('--measurements', help="JSON with sinr_db_samples and sigma_mmse_db_samples")
    p.add_argument('--dump', nargs='+', help="equalizer dumps, one sample each")
    p.add_argument('--sinr-db', type=float, help="measured SINR (needed for dumps without SNR)")
    p.add_argument('--sigma-mmse-db', type=float)
    p.add_argument('--samples', type=int, default=10,
                   help="number of samples averaged before inversion (default 10)")
    p.add_argument('--residual-limit', type=float)
    p.add_argument('--out')

    p = sub.add_parser('jacobian', help="Jacobian determinant over the table grid")
    _common(p)
    p.add_argument('--lut', help="table to differentiate (built from config when omitted)")
    p.add_argument('--modes')
    return ap


# -- output --------------------------------------------------------------------------

def _emit_json(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if out:
        Path(out).write_text(text + '\n', encoding='utf-8')
    else:
        sys.stdout.write(text + '\n')


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _emit_table(args, columns, rows, manifest):
    if args.format == 'json':
        _emit_json({'columns': columns, 'rows': [list(r) for r in rows]}, args.out)
    elif args.out:
        write_csv(args.out, columns, rows, manifest_name=_manifest_path(args.out).name)
    else:
        import csv
        sys.stdout.write("# sdmmse-csv v1\n")
        w = csv.writer(sys.stdout, lineterminator='\n')
        w.writerow(columns)
        w.writerows(rows)
    if args.out:
        manifest.outputs.append(str(args.out))


def _manifest_path(out):
    return Path(str(out) + '.manifest.json')


def _finish(manifest, out):
    if out:
        manifest.finish(_manifest_path(out))


def _manifest(command, cfg, args, seed=0):
    # digest covers the config file and every flag override
    flags = {k: v for k, v in sorted(vars(args).items()) if v is not None}
    return RunManifest(command=command, config_digest=config_digest(dict(cfg, flags=flags)),
                       seed=int(seed), tool_version=__version__)


# -- config merging ------------------------------------------------------------------

def _budget(cfg, args):
    b = dict(cfg['budget'])
    for flag, key in (('gsnr_db', 'gsnr_db'), ('bandwidth_hz', 'signal_bandwidth_hz'),
                      ('snr_imp_db', 'snr_imp_db')):
        v = getattr(args, flag, None)
        if v is not None:
            b[key] = v
    return LinkBudget(**b)


def _snr_db_values(cfg, args):
    """SNR sweep in dB: flag, then config ``snr_db``, then the link budget."""
    raw = getattr(args, 'snr_db', None)
    if raw is not None:
        return parse_sweep(raw) if isinstance(raw, str) else [float(raw)]
    if cfg.get('snr_db') is not None:
        v = cfg['snr_db']
        return [float(x) for x in v] if isinstance(v, list) else [float(v)]
    return [10.0 * math.log10(effective_snr(_budget(cfg, args)))]


def _link_config(cfg, args):
    link = dict(cfg['link'])
    for flag, key in (('seed', 'seed'), ('trials', 'trials'), ('sections', 'section_count'),
                      ('bins', 'freq_bins'), ('sigma_mdg_db', 'sigma_mdg_db'),
                      ('sigma_g_db', 'sigma_g_db')):
        v = getattr(args, flag, None)
        if v is not None:
            link[key] = v
    if getattr(args, 'modes', None) is not None:
        link['mode_count'] = parse_modes(args.modes)
    if link.get('mode_count') == INF:
        raise ConfigError("simulation needs a finite mode count")
    if 'sigma_mdg_db' not in link and 'sigma_g_db' not in link:
        link['sigma_mdg_db'] = 6.0
    return LinkConfig(**link)


# -- commands ------------------------------------------------------------------------

def cmd_analyze(args):
    cfg = load_config(args.config)
    an = cfg['analyze']
    modes = parse_modes(args.modes if args.modes is not None else an.get('modes', 'inf'))
    sigmas = (parse_sweep(args.sigma_mdg_db) if args.sigma_mdg_db is not None
              else [float(x) for x in an.get('sigma_mdg_db', [0.0])])
    snrs = (parse_sweep(args.snr_db) if args.snr_db is not None
            else ([float(x) for x in an['snr_db']] if 'snr_db' in an else _snr_db_values(cfg, args)))
    qams = _int_list(args.qam) if args.qam is not None else [int(q) for q in an.get('qam', [])]
    ghqs = (_int_list(args.ghq_points) if args.ghq_points is not None
            else [int(j) for j in an.get('ghq_points', [10] if qams else [])])
    if not sigmas or not snrs:
        raise ConfigError("empty sweep")
    if any(s < 0 for s in sigmas):
        raise ConfigError("sigma_mdg_db sweep must be >= 0")
    for q in qams:
        qam_constellation(q)
    columns = ANALYZE_COLUMNS + [f'ber_m{q}' for q in qams] + \
        [f'mi_m{q}_j{j}' for q in qams for j in ghqs]
    rows = []
    for sigma in sigmas:
        spec = GueSpectrum(modes, sigma)
        for snr_db in snrs:
            snr = 10.0 ** (snr_db / 10.0)
            sinr = analytical_sinr(spec, snr)
            c_awgn = capacity_awgn(snr)
            c_mmse = capacity_mmse(spec, snr)
            row = [sigma, snr_db, 10.0 * math.log10(sinr), snr_db - 10.0 * math.log10(sinr),
                   c_mmse, capacity_ml(spec, snr), 1.0 - c_mmse / c_awgn]
            row += [prefec_ber(sinr, q) for q in qams]
            row += [mutual_information(sinr, q, gauss_hermite_rule(j)) for q in qams for j in ghqs]
            rows.append(row)
    man = _manifest('analyze', cfg, args)
    _emit_table(args, columns, rows, man)
    _finish(man, args.out)
    return EXIT_OK


def cmd_simulate(args):
    cfg = load_config(args.config)
    link = _link_config(cfg, args).resolve()
    snr_db = _snr_db_values(cfg, args)
    if len(snr_db) != 1:
        raise ConfigError("simulate takes a single SNR")
    snr = 10.0 ** (snr_db[0] / 10.0)
    keep = args.dump_dir is not None
    res = ensemble_stats(link, snr, n_jobs=args.jobs, keep_equalizers=keep)
    report, snaps = res if keep else (res, None)
    man = _manifest('simulate', cfg, args, link.seed)

    spec = GueSpectrum(link.mode_count, link.sigma_mdg_db)
    an_sinr = analytical_sinr(spec, snr)
    an_smmse = analytic_sigma_mmse(spec, snr)
    summary = dict(report.to_dict(), mode_count=link.mode_count, section_count=link.section_count,
                   freq_bins=link.freq_bins, trials=link.trials, seed=link.seed,
                   sigma_mdg_db=link.sigma_mdg_db, snr_db=snr_db[0],
                   analytic_sinr_db=10.0 * math.log10(an_sinr),
                   delta_sinr_db=float(report.mean_sinr_db) - 10.0 * math.log10(an_sinr),
                   analytic_sigma_mmse_db=an_smmse,
                   delta_sigma_mmse_db=report.sigma_mmse_db - an_smmse)

    if keep:
        d = Path(args.dump_dir)
        d.mkdir(parents=True, exist_ok=True)
        for t, snap in enumerate(snaps):
            p = write_dump(snap, d / f"trial{t:04d}.{'json' if args.dump_format == 'json' else 'bin'}",
                           args.dump_format)
            man.outputs.append(str(p))

    if args.format == 'json':
        summary['trial_band_sinr_db'] = (10 * np.log10(report.band_sinr)).tolist()
        _emit_json(summary, args.out)
        if args.out:
            man.outputs.append(str(args.out))
    else:
        sinr_db = 10.0 * np.log10(np.maximum(report.per_mode_sinr, 1e-300))
        lam = report.lambda_db
        T, B, D = sinr_db.shape
        rows = ([t, b, m, lam[t, b, m], sinr_db[t, b, m]]
                for t in range(T) for b in range(B) for m in range(D))
        _emit_table(args, SIMULATE_COLUMNS, rows, man)
        if args.out:
            summary_path = Path(str(args.out) + '.summary.json')
            _emit_json(summary, summary_path)
            man.outputs.append(str(summary_path))
    _finish(man, args.out)
    return EXIT_OK


def _lut_grid(cfg, args):
    mon = cfg['monitor']
    modes = parse_modes(args.modes if getattr(args, 'modes', None) is not None
                        else mon.get('modes', 'inf'))
    n_snr = getattr(args, 'n_snr', None) or int(mon.get('n_snr', 100))
    n_sigma = getattr(args, 'n_sigma', None) or int(mon.get('n_sigma', 100))
    lo, hi = mon.get('snr_range_db', (0.0, 30.0))
    slo, shi = mon.get('sigma_range_db', (0.0, 20.0))
    if n_snr < 2 or n_sigma < 2:
        raise ConfigError("LUT grids need at least 2 points per axis")
    snr_grid = 10.0 * np.log10(np.logspace(lo / 10.0, hi / 10.0, n_snr))
    return modes, snr_grid, np.linspace(slo, shi, n_sigma)


def cmd_lut(args):
    if args.lut_command == 'inspect':
        lut = MonitorLut.load(args.path)
        _emit_json({'metadata': lut.metadata, 'checksum': lut.checksum,
                    'snr_grid_db': [lut.snr_grid_db[0], lut.snr_grid_db[-1], lut.snr_grid_db.size],
                    'sigma_grid_db': [lut.sigma_grid_db[0], lut.sigma_grid_db[-1],
                                      lut.sigma_grid_db.size],
                    'sinr_db_range': [float(lut.sinr_db_table.min()), float(lut.sinr_db_table.max())],
                    'sigma_mmse_db_range': [float(lut.sigma_mmse_table.min()),
                                            float(lut.sigma_mmse_table.max())]}, None)
        return EXIT_OK
    cfg = load_config(args.config)
    modes, snr_grid, sigma_grid = _lut_grid(cfg, args)
    lut = build_lut(modes, snr_grid, sigma_grid, n_jobs=args.jobs)
    lut.save(args.out)
    man = _manifest('lut build', cfg, args)
    man.outputs.append(str(args.out))
    _finish(man, args.out)
    sys.stdout.write(f"wrote {args.out} checksum={lut.checksum}\n")
    return EXIT_OK


def cmd_estimate(args):
    cfg = load_config(args.config)
    lut = MonitorLut.load(args.lut)
    if args.measurements:
        s, m = load_measurements(args.measurements)
    elif args.dump:
        s, m = [], []
        for path in args.dump:
            snap = read_dump(path)
            if snap.snr_used is None and args.sinr_db is None:
                raise ConfigError(f"{path} carries no SNR; pass --sinr-db")
            sd, md = snapshot_measurement(snap, sinr_db=args.sinr_db)
            s.append(sd)
            m.append(md)
    elif args.sinr_db is not None and args.sigma_mmse_db is not None:
        s, m = [args.sinr_db], [args.sigma_mmse_db]
    else:
        raise ConfigError("give --measurements, --dump, or both --sinr-db and --sigma-mmse-db")
    if args.samples < 1:
        raise ConfigError("--samples must be >= 1")
    n = min(args.samples, len(s), len(m))
    sinr, sigma_mmse = aggregate_measurements(s[:n], m[:n])
    limit = args.residual_limit if args.residual_limit is not None else \
        float(cfg['monitor'].get('residual_limit', DEFAULT_RESIDUAL_LIMIT))
    res = estimate(lut, sinr, sigma_mmse, residual_limit=limit)

    modes = parse_modes(lut.metadata.get('mode_count', 'inf'))
    spec = GueSpectrum(modes, res.sigma_mdg_hat_db)
    snr = 10.0 ** (res.snr_hat_db / 10.0)
    sinr_at = analytical_sinr(spec, snr)
    out = dict(res.to_dict(), samples_used=n, sinr_measured_db=10.0 * math.log10(sinr),
               sigma_mmse_measured_db=sigma_mmse,
               delta_db_at_estimate=res.snr_hat_db - 10.0 * math.log10(sinr_at),
               xi_at_estimate=1.0 - math.log2(1.0 + sinr_at) / capacity_awgn(snr))
    _emit_json(out, args.out)
    if args.out:
        man = _manifest('estimate', cfg, args)
        man.outputs.append(str(args.out))
        _finish(man, args.out)
    if res.out_of_domain:
        sys.stderr.write(f"measurement outside table domain (residual {res.residual:.3g} dB^2)\n")
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_jacobian(args):
    cfg = load_config(args.config)
    if args.lut:
        lut = MonitorLut.load(args.lut)
    else:
        modes, snr_grid, sigma_grid = _lut_grid(cfg, args)
        lut = build_lut(modes, snr_grid, sigma_grid)
    jf = jacobian_map(lut)
    rows = [[jf.snr_grid_db[i], jf.sigma_grid_db[j], jf.det[i, j], int(jf.one_sided[i, j])]
            for i in range(jf.det.shape[0]) for j in range(jf.det.shape[1])]
    man = _manifest('jacobian', cfg, args)
    _emit_table(args, JACOBIAN_COLUMNS, rows, man)
    _finish(man, args.out)
    return EXIT_OK


COMMANDS = {'analyze': cmd_analyze, 'simulate': cmd_simulate, 'lut': cmd_lut,
            'estimate': cmd_estimate, 'jacobian': cmd_jacobian}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except OutOfDomainError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DOMAIN
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except (TypeError, ValueError) as exc:
        # bad config values rejected by constructors
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
