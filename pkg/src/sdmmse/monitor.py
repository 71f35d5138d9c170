"""MDG and SNR monitoring from equalizer statistics.

The equalizer inverse ``W^-1 = H + H^-H / SNR`` has dB eigenvalues

    lambda_W = lambda + 20 log10(1 + 10^(-lambda / 10) / SNR),

a map with its minimum ``10 log10(4 / SNR)`` at ``lambda = -10 log10 SNR``.
Pushing the channel gain density through that map gives the density of the
equalizer eigenvalues and, with it, their spread ``sigma_mmse``. Together
with the average SINR this is a forward model (SNR, sigma_mdg) ->
(SINR, sigma_mmse), tabulated once and inverted by least squares.
"""
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._quad import integrate_1d
from .exceptions import ChecksumError, ConfigError, NumericalError, OutOfDomainError
from .randmat import INF, GueSpectrum
from .rates import analytical_sinr

__all__ = ['map_gain_to_equalizer', 'equalizer_roots', 'equalizer_pdf',
           'analytic_sigma_mmse', 'analytic_mu_mmse', 'sigma_mmse_from_pdf',
           'rule_of_thumb_margin', 'MonitorLut', 'build_lut', 'default_snr_grid_db',
           'default_sigma_grid_db', 'EstimateResult', 'estimate', 'JacobianField',
           'jacobian_map', 'aggregate_measurements', 'snapshot_measurement',
           'MdgSnrEstimator', 'LUT_FORMAT', 'LUT_VERSION']

LUT_FORMAT = 'sdmmse-monitor-lut'
LUT_VERSION = 1
#: default objective residual (dB^2) above which an estimate is flagged
DEFAULT_RESIDUAL_LIMIT = 1.0
_EXACT_RESIDUAL = 1e-20


def _check_snr(snr_linear):
    if not (snr_linear > 0 and math.isfinite(snr_linear)):
        raise ConfigError(f"SNR must be positive and finite, got {snr_linear!r}")


# -- forward model -------------------------------------------------------------

def map_gain_to_equalizer(lambda_db, snr_linear):
    """dB eigenvalue of ``W^-1 (W^-1)^H`` for a channel dB gain ``lambda_db``."""
    _check_snr(snr_linear)
    lam = np.asarray(lambda_db, dtype=float)
    out = 20.0 * np.log10(10.0 ** (-lam / 10.0) / snr_linear + 1.0) + lam
    return float(out) if out.ndim == 0 else out


def support_edge_db(snr_linear):
    """Smallest equalizer eigenvalue, ``10 log10(4 / SNR)``."""
    return 10.0 * math.log10(4.0 / snr_linear)


def equalizer_roots(lambda_w_db, snr_linear):
    """Channel gains ``(g_plus, g_minus)`` that map onto ``lambda_w_db``.

    ``g_plus >= -10 log10 SNR >= g_minus``; both coincide at the support edge.
    """
    _check_snr(snr_linear)
    lw = np.asarray(lambda_w_db, dtype=float)
    if np.any(lw < support_edge_db(snr_linear)):
        raise ConfigError("equalizer eigenvalue below the support edge 10 log10(4/SNR)")
    lin = 10.0 ** (lw / 10.0)
    root = np.sqrt(np.clip(1.0 - 4.0 / (snr_linear * lin), 0.0, None))
    g_plus = 10.0 * np.log10(-1.0 / snr_linear + 0.5 * lin * (1.0 + root))
    # the minus branch cancels badly; use the product of roots, 1 / SNR^2
    g_minus = -20.0 * math.log10(snr_linear) - g_plus
    return g_plus, g_minus


def equalizer_pdf(spec, snr_linear, lambda_w_db):
    """Density of the unlabeled equalizer-inverse dB eigenvalues.

    Sum of the channel density at both pre-images, divided by the map's
    slope ``sqrt(1 - 4 / (SNR 10^(lambda_W / 10)))``. The slope vanishes at
    the support edge, so evaluation there (or below) raises instead of
    returning an infinite density.
    """
    _check_snr(snr_linear)
    if spec.is_degenerate:
        raise ConfigError("equalizer density of a zero-MDG spectrum is a delta")
    lw = np.asarray(lambda_w_db, dtype=float)
    if np.any(lw <= support_edge_db(snr_linear)):
        raise ConfigError("equalizer density is singular at and undefined below "
                          "10 log10(4/SNR)")
    g_plus, g_minus = equalizer_roots(lw, snr_linear)
    slope = np.sqrt(1.0 - 4.0 / snr_linear * 10.0 ** (-lw / 10.0))
    out = (spec.pdf(g_plus) + spec.pdf(g_minus)) / slope
    return float(out) if out.ndim == 0 else out


def analytic_mu_mmse(spec, snr_linear):
    """Mean of the equalizer-inverse dB eigenvalues."""
    _check_snr(snr_linear)
    return spec.expect(lambda x: map_gain_to_equalizer(x, snr_linear))


def analytic_sigma_mmse(spec, snr_linear):
    """Standard deviation (dB) of the equalizer-inverse dB eigenvalues.

    Moments are integrated on the channel-gain domain, where the integrand
    is smooth; :func:`sigma_mmse_from_pdf` gives the same number from the
    transformed density.
    """
    _check_snr(snr_linear)
    if spec.is_degenerate:
        return 0.0
    mean = analytic_mu_mmse(spec, snr_linear)
    var = spec.expect(lambda x: (map_gain_to_equalizer(x, snr_linear) - mean) ** 2,
                      epsabs=1e-11)
    return math.sqrt(max(var, 0.0))


def _equalizer_range(spec, snr_linear):
    lo, hi = spec.support()
    edge = support_edge_db(snr_linear)
    top = max(map_gain_to_equalizer(lo, snr_linear), map_gain_to_equalizer(hi, snr_linear))
    return edge, top


def sigma_mmse_from_pdf(spec, snr_linear):
    """``sigma_mmse`` by quadrature of :func:`equalizer_pdf` itself.

    The ``1/sqrt`` edge singularity is removed with ``lambda_W = edge + t^2``.
    """
    if spec.is_degenerate:
        return 0.0
    edge, top = _equalizer_range(spec, snr_linear)
    t_max = math.sqrt(top - edge)
    # sharp features of the pushed-forward density sit at the images of the
    # support bounds and of the fold
    marks = [map_gain_to_equalizer(x, snr_linear) for x in spec.support()]
    pts = sorted({math.sqrt(max(m - edge, 0.0)) for m in marks} - {0.0, t_max})

    def moment(k):
        def f(t):
            lw = edge + t * t
            if t == 0.0:
                return 0.0
            return 2.0 * t * lw ** k * equalizer_pdf(spec, snr_linear, lw)
        return integrate_1d(f, 0.0, t_max, points=pts or None, epsabs=1e-10)

    m0, m1, m2 = moment(0), moment(1), moment(2)
    mean = m1 / m0
    return math.sqrt(max(m2 / m0 - mean * mean, 0.0))


def rule_of_thumb_margin(spec, snr_linear):
    """How far (dB) the lowest channel gain sits above the map's fold.

    ``(mu - 2 sigma) + 10 log10 SNR``; large positive values mean the
    equalizer inverse tracks the channel and ``sigma_mmse ~ sigma_mdg``.
    """
    return spec.mu_db - 2.0 * spec.sigma_mdg_db + 10.0 * math.log10(snr_linear)


# -- lookup table ----------------------------------------------------------------

def default_snr_grid_db(n=100):
    """``n`` log-spaced linear SNRs from 0 to 30 dB, expressed in dB."""
    return 10.0 * np.log10(np.logspace(0.0, 3.0, n))


def default_sigma_grid_db(n=100):
    return np.linspace(0.0, 20.0, n)


def _table_digest(snr_grid, sigma_grid, sinr, sigma_mmse):
    h = hashlib.sha256()
    for a in (snr_grid, sigma_grid, sinr, sigma_mmse):
        h.update(np.ascontiguousarray(a, dtype='<f8').tobytes())
    return h.hexdigest()


@dataclass
class MonitorLut:
    """Forward model tabulated over the (SNR, sigma_mdg) grid.

    ``sinr_table[i, j]`` (linear) and ``sigma_mmse_table[i, j]`` (dB) belong
    to ``snr_grid_db[i]`` and ``sigma_grid_db[j]``.
    """

    snr_grid_db: np.ndarray
    sigma_grid_db: np.ndarray
    sinr_table: np.ndarray
    sigma_mmse_table: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def checksum(self):
        return _table_digest(self.snr_grid_db, self.sigma_grid_db,
                             self.sinr_table, self.sigma_mmse_table)

    @property
    def sinr_db_table(self):
        return 10.0 * np.log10(self.sinr_table)

    def validate(self):
        if not (np.all(np.isfinite(self.sinr_table)) and np.all(np.isfinite(self.sigma_mmse_table))):
            raise ConfigError("lookup table has non-finite entries")
        if np.any(self.sigma_mmse_table < 0):
            raise ConfigError("negative sigma_mmse in lookup table")
        shape = (self.snr_grid_db.size, self.sigma_grid_db.size)
        if self.sinr_table.shape != shape or self.sigma_mmse_table.shape != shape:
            raise ConfigError("lookup table shape does not match its grids")
        return self

    def to_json(self):
        """Deterministic JSON text (same tables give the same bytes)."""
        doc = {
            'format': LUT_FORMAT,
            'version': LUT_VERSION,
            'metadata': self.metadata,
            'snr_grid_db': self.snr_grid_db.tolist(),
            'sigma_grid_db': self.sigma_grid_db.tolist(),
            'sinr_table': self.sinr_table.tolist(),
            'sigma_mmse_table': self.sigma_mmse_table.tolist(),
            'checksum': self.checksum,
        }
        return json.dumps(doc, sort_keys=True, separators=(',', ':'))

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as fh:
            fh.write(self.to_json())

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"lookup table is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("lookup table must be a JSON object")
        if doc.get('format') != LUT_FORMAT:
            raise ConfigError("not a monitor lookup-table file")
        if doc.get('version') != LUT_VERSION:
            raise ConfigError(f"unsupported lookup-table version {doc.get('version')!r}")
        try:
            lut = cls(np.asarray(doc['snr_grid_db'], dtype=float),
                      np.asarray(doc['sigma_grid_db'], dtype=float),
                      np.asarray(doc['sinr_table'], dtype=float),
                      np.asarray(doc['sigma_mmse_table'], dtype=float),
                      doc.get('metadata', {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed lookup table: {exc!r}") from None
        if lut.checksum != doc.get('checksum'):
            raise ChecksumError("lookup-table checksum mismatch; file is corrupt or edited")
        return lut.validate()

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding='utf-8') as fh:
                text = fh.read()
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot read lookup table {path}: {exc}") from None
        return cls.from_json(text)


def _lut_column(mode_count, sigma_db, snr_grid_db):
    spec = GueSpectrum(mode_count, float(sigma_db))
    sinr = np.empty(snr_grid_db.size)
    smmse = np.empty(snr_grid_db.size)
    for i, snr_db in enumerate(snr_grid_db):
        snr = 10.0 ** (snr_db / 10.0)
        try:
            sinr[i] = analytical_sinr(spec, snr)
            smmse[i] = analytic_sigma_mmse(spec, snr)
        except NumericalError as exc:
            raise NumericalError(f"LUT node SNR={snr_db:.4g} dB, sigma_mdg={sigma_db:.4g} dB "
                                 f"failed: {exc}") from None
    return sinr, smmse


def build_lut(mode_count=INF, snr_grid_db=None, sigma_grid_db=None, *, n_jobs=None):
    """Tabulate average SINR and ``sigma_mmse`` on a (SNR, sigma_mdg) grid.

    Defaults to 100 log-spaced SNRs over 0-30 dB, 100 sigmas over 0-20 dB
    and the semicircle limit. ``n_jobs`` spreads sigma columns over joblib
    workers; the table does not depend on it.
    """
    snr_grid_db = default_snr_grid_db() if snr_grid_db is None else np.asarray(snr_grid_db, float)
    sigma_grid_db = (default_sigma_grid_db() if sigma_grid_db is None
                     else np.asarray(sigma_grid_db, float))
    if np.any(np.diff(snr_grid_db) <= 0) or np.any(np.diff(sigma_grid_db) <= 0):
        raise ConfigError("LUT grids must be strictly increasing")
    if np.any(sigma_grid_db < 0):
        raise ConfigError("sigma grid must be >= 0")
    if n_jobs and n_jobs != 1:
        from joblib import Parallel, delayed
        cols = Parallel(n_jobs=n_jobs)(
            delayed(_lut_column)(mode_count, s, snr_grid_db) for s in sigma_grid_db)
    else:
        cols = [_lut_column(mode_count, s, snr_grid_db) for s in sigma_grid_db]
    sinr = np.stack([c[0] for c in cols], axis=1)
    smmse = np.stack([c[1] for c in cols], axis=1)
    meta = {'mode_count': 'inf' if mode_count == INF else int(mode_count),
            'snr_db': [float(snr_grid_db[0]), float(snr_grid_db[-1]), int(snr_grid_db.size)],
            'sigma_mdg_db': [float(sigma_grid_db[0]), float(sigma_grid_db[-1]),
                             int(sigma_grid_db.size)]}
    return MonitorLut(snr_grid_db, sigma_grid_db, sinr, smmse, meta).validate()


# -- inversion -------------------------------------------------------------------

@dataclass
class EstimateResult:
    """Least-squares (SNR, sigma_mdg) estimate.

    ``residual`` is the objective in dB^2 at the estimate and ``iterations``
    the number of objective evaluations spent in the local refinement.
    """

    snr_hat_db: float
    sigma_mdg_hat_db: float
    residual: float
    iterations: int
    out_of_domain: bool = False

    def to_dict(self):
        return dict(snr_hat_db=self.snr_hat_db, sigma_mdg_hat_db=self.sigma_mdg_hat_db,
                    residual=self.residual, iterations=self.iterations,
                    out_of_domain=self.out_of_domain)


def _objective_table(lut, sinr_db, sigma_mmse_db):
    return (lut.sigma_mmse_table - sigma_mmse_db) ** 2 + (lut.sinr_db_table - sinr_db) ** 2


def _cell_refine(lut, i, j, sinr_db, sigma_mmse_db):
    """Bilinear refinement over the up to four cells touching node (i, j)."""
    x, y = lut.snr_grid_db, lut.sigma_grid_db
    a_tab, b_tab = lut.sinr_db_table, lut.sigma_mmse_table
    best = (math.inf, x[i], y[j], 0)
    for i0 in (i - 1, i):
        for j0 in (j - 1, j):
            if not (0 <= i0 < x.size - 1 and 0 <= j0 < y.size - 1):
                continue
            ca = a_tab[i0:i0 + 2, j0:j0 + 2]
            cb = b_tab[i0:i0 + 2, j0:j0 + 2]

            def interp(c, u, v):
                return ((1 - u) * (1 - v) * c[0, 0] + u * (1 - v) * c[1, 0]
                        + (1 - u) * v * c[0, 1] + u * v * c[1, 1])

            def obj(p):
                u, v = p
                return ((interp(ca, u, v) - sinr_db) ** 2
                        + (interp(cb, u, v) - sigma_mmse_db) ** 2)

            start = (float(i - i0), float(j - j0))
            res = minimize(obj, start, method='L-BFGS-B', bounds=[(0, 1), (0, 1)],
                           options={'ftol': 1e-15, 'gtol': 1e-12})
            if res.fun < best[0]:
                u, v = res.x
                best = (float(res.fun), x[i0] + u * (x[i0 + 1] - x[i0]),
                        y[j0] + v * (y[j0 + 1] - y[j0]), int(res.nfev))
    return best


def estimate(lut, sinr_hat_linear, sigma_mmse_hat_db, *, refine=True,
             residual_limit=DEFAULT_RESIDUAL_LIMIT, raise_out_of_domain=False):
    """Invert a measured (SINR, sigma_mmse) pair through the lookup table.

    Both residuals are taken in dB. The nearest grid node is refined by one
    bilinear-interpolation step over its neighbouring cells; an exact table
    value is returned unchanged.

    Parameters
    ----------
    lut : MonitorLut
    sinr_hat_linear : float
        Measured average SINR, linear.
    sigma_mmse_hat_db : float
        Measured spread of the equalizer-inverse dB eigenvalues.
    residual_limit : float
        Objective value (dB^2) above which the result is flagged out of domain.
    raise_out_of_domain : bool
        Raise :class:`OutOfDomainError` instead of only flagging.
    """
    if not (sinr_hat_linear > 0 and math.isfinite(sinr_hat_linear)):
        raise ConfigError(f"measured SINR must be positive and finite, got {sinr_hat_linear!r}")
    if not math.isfinite(sigma_mmse_hat_db):
        raise ConfigError("measured sigma_mmse must be finite")
    sinr_db = 10.0 * math.log10(sinr_hat_linear)
    obj = _objective_table(lut, sinr_db, sigma_mmse_hat_db)
    i, j = np.unravel_index(int(np.argmin(obj)), obj.shape)
    residual, snr_hat, sigma_hat, n_iter = float(obj[i, j]), lut.snr_grid_db[i], lut.sigma_grid_db[j], 0
    # anything below ~1e-20 dB^2 is round-off of an exact table entry
    if refine and residual > _EXACT_RESIDUAL:
        cand = _cell_refine(lut, i, j, sinr_db, sigma_mmse_hat_db)
        if cand[0] < residual:
            residual, snr_hat, sigma_hat, n_iter = cand
        else:
            n_iter = cand[3]
    result = EstimateResult(float(snr_hat), float(sigma_hat), residual, n_iter,
                            out_of_domain=residual > residual_limit)
    if result.out_of_domain and raise_out_of_domain:
        raise OutOfDomainError(f"measurement (SINR={sinr_db:.3f} dB, sigma_mmse="
                               f"{sigma_mmse_hat_db:.3f} dB) is outside the table "
                               f"(residual {residual:.3g} dB^2)")
    return result


# -- single-valuedness ------------------------------------------------------------

@dataclass
class JacobianField:
    """Jacobian determinant of (SINR_dB, sigma_mmse) w.r.t. (SNR_dB, sigma_mdg).

    ``one_sided`` marks grid-edge nodes where a one-sided difference was used.
    """

    snr_grid_db: np.ndarray
    sigma_grid_db: np.ndarray
    det: np.ndarray
    one_sided: np.ndarray

    @property
    def interior(self):
        return self.det[1:-1, 1:-1]


def jacobian_map(lut=None, *, mode_count=INF, snr_grid_db=None, sigma_grid_db=None):
    """Finite-difference Jacobian determinant over the table grid.

    Central differences in the interior, one-sided at the edges. Builds a
    table first when ``lut`` is not given.
    """
    if lut is None:
        lut = build_lut(mode_count, snr_grid_db, sigma_grid_db)
    x, y = lut.snr_grid_db, lut.sigma_grid_db
    f1, f2 = lut.sinr_db_table, lut.sigma_mmse_table
    d1_dx, d1_dy = np.gradient(f1, x, y, edge_order=1)
    d2_dx, d2_dy = np.gradient(f2, x, y, edge_order=1)
    det = d1_dx * d2_dy - d1_dy * d2_dx
    edge = np.zeros(det.shape, dtype=bool)
    edge[[0, -1], :] = True
    edge[:, [0, -1]] = True
    return JacobianField(x, y, det, edge)


# -- measurement aggregation -------------------------------------------------------

def aggregate_measurements(sinr_db_samples, sigma_mmse_db_samples):
    """Average independent measurement samples before inversion.

    SINR samples are averaged in linear units (the monitored quantity is a
    power ratio); spreads are averaged as given. Returns
    ``(sinr_linear, sigma_mmse_db)``.
    """
    s = np.asarray(sinr_db_samples, dtype=float).ravel()
    m = np.asarray(sigma_mmse_db_samples, dtype=float).ravel()
    if s.size == 0 or m.size == 0:
        raise ConfigError("need at least one SINR and one sigma_mmse sample")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(m))):
        raise ConfigError("measurement samples must be finite")
    if np.any(m < 0):
        raise ConfigError("sigma_mmse samples must be >= 0")
    return float(np.mean(10.0 ** (s / 10.0))), float(np.mean(m))


def snapshot_measurement(snap, sinr_db=None):
    """``(SINR dB, sigma_mmse dB)`` read from one equalizer snapshot.

    The spread always comes from the snapshot. Pass ``sinr_db`` when the
    receiver measures SINR itself (e.g. from decided symbols); otherwise it
    is recovered per bin and mode with :func:`equalizer.sinr_from_snapshot`
    and aggregated through the mean MSE, like :attr:`SinrReport.mean_sinr`.
    That recovery folds channel gains below ``1 / SNR`` onto the upper branch,
    so at low SNR with large MDG it overestimates the SINR.
    """
    from .equalizer import inverse_eigen_stats, sinr_from_snapshot
    sigma, _ = inverse_eigen_stats(snap)
    if sinr_db is not None:
        return float(sinr_db), sigma
    sinr = float(1.0 / np.mean(1.0 / (1.0 + sinr_from_snapshot(snap))) - 1.0)
    return 10.0 * math.log10(sinr), sigma


# -- estimator wrapper -------------------------------------------------------------

class MdgSnrEstimator(BaseEstimator):
    """Estimator-style wrapper around the lookup table.

    ``fit`` builds (or adopts) the table; ``predict`` maps rows
    ``[sinr_db, sigma_mmse_db]`` to ``[snr_db, sigma_mdg_db]``.

    Parameters
    ----------
    mode_count : int or inf
        Mode count of the analytic model behind the table.
    n_snr, n_sigma : int
        Grid sizes.
    snr_range_db, sigma_range_db : tuple of float
        Grid bounds.
    refine : bool
        Bilinear refinement after the nearest-node search.
    residual_limit : float
        Out-of-domain threshold in dB^2.
    lut : MonitorLut, optional
        Prebuilt table; skips the build in ``fit``.
    n_jobs : int, optional
    """

    def __init__(self, mode_count=INF, n_snr=100, n_sigma=100, snr_range_db=(0.0, 30.0),
                 sigma_range_db=(0.0, 20.0), refine=True,
                 residual_limit=DEFAULT_RESIDUAL_LIMIT, lut=None, n_jobs=None):
        self.mode_count = mode_count
        self.n_snr = n_snr
        self.n_sigma = n_sigma
        self.snr_range_db = snr_range_db
        self.sigma_range_db = sigma_range_db
        self.refine = refine
        self.residual_limit = residual_limit
        self.lut = lut
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        if self.lut is not None:
            self.lut_ = self.lut.validate()
        else:
            lo, hi = self.snr_range_db
            snr_grid = 10.0 * np.log10(np.logspace(lo / 10.0, hi / 10.0, self.n_snr))
            sigma_grid = np.linspace(*self.sigma_range_db, self.n_sigma)
            self.lut_ = build_lut(self.mode_count, snr_grid, sigma_grid, n_jobs=self.n_jobs)
        self.n_features_in_ = 2
        return self

    def estimate_many(self, X):
        check_is_fitted(self, 'lut_')
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ConfigError(f"expected 2 columns [sinr_db, sigma_mmse_db], got {X.shape[1]}")
        return [estimate(self.lut_, 10.0 ** (row[0] / 10.0), row[1], refine=self.refine,
                         residual_limit=self.residual_limit) for row in X]

    def predict(self, X):
        res = self.estimate_many(X)
        return np.array([[r.snr_hat_db, r.sigma_mdg_hat_db] for r in res]).reshape(-1, 2)

    def score(self, X, y):
        """Negative RMS error (dB) over both predicted parameters."""
        err = self.predict(X) - np.asarray(y, dtype=float)
        return -float(np.sqrt(np.mean(err ** 2)))
