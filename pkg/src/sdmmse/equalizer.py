"""MIMO MMSE equalizer matrices and the statistics read from them.

All functions accept either a single ``D x D`` matrix or a stack with a
leading frequency-bin axis.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ConfigError, NumericalError

__all__ = ['EqualizerSnapshot', 'SinrReport', 'mmse_matrix', 'per_mode_sinr',
           'per_mode_sinr_eigen', 'band_sinr', 'sinr_report', 'inverse_eigenvalues_db',
           'inverse_eigen_stats', 'snapshot_from_channel', 'sinr_from_snapshot']


def _as_stack(h, name="h"):
    h = np.asarray(h)
    if h.ndim not in (2, 3) or h.shape[-1] != h.shape[-2]:
        raise ConfigError(f"{name} must be a square matrix or a stack of them, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ConfigError(f"{name} has non-finite entries")
    return h.astype(complex, copy=False)


def _check_snr(snr_linear):
    if not (snr_linear > 0 and np.isfinite(snr_linear)):
        raise ConfigError(f"SNR must be positive and finite, got {snr_linear!r}")


def _hermitian(a):
    return np.conj(np.swapaxes(a, -1, -2))


@dataclass(frozen=True)
class EqualizerSnapshot:
    """Frequency-domain equalizer coefficients ``W[omega]``.

    ``snr_used`` is the linear SNR the MMSE solution was built with. It is
    ``None`` for dumps taken from hardware, in which case only the inverse
    eigenvalue statistics can be computed.
    """

    w: np.ndarray
    snr_used: Optional[float] = None

    def __post_init__(self):
        w = _as_stack(self.w, "w")
        if w.ndim == 2:
            w = w[None]
        object.__setattr__(self, 'w', w)

    @property
    def mode_count(self):
        return self.w.shape[-1]

    @property
    def bins(self):
        return self.w.shape[0]


@dataclass
class SinrReport:
    """Per-mode SINR and equalizer-inverse statistics.

    ``per_mode_sinr`` holds the per-bin SINR of every output, shape
    ``(trials, bins, D)``, linear. ``band_sinr`` is the SINR of each output
    stream over the whole band, shape ``(trials, D)``: signal power over
    error power summed across bins, i.e. ``1 / mean_bins(1 / (1 + SINR)) - 1``.
    With a single bin the two coincide. ``mean_sinr`` averages the MSE
    ``1 / (1 + SINR)`` over trials, bins and modes and converts back, which
    is the aggregate the trace identity ties to the analytic average SINR.
    ``sinr_std_db`` is the spread of ``band_sinr`` in dB. The ``trial_*``
    arrays hold one value per trial, i.e. what a receiver would report from
    one equalizer snapshot.
    """

    per_mode_sinr: np.ndarray
    band_sinr: np.ndarray
    mean_sinr: float
    sinr_std_db: float
    sigma_mmse_db: float
    mu_mmse_db: float
    mu_mmse_linear: float = float('nan')
    lambda_db: Optional[np.ndarray] = None
    trial_mean_sinr: Optional[np.ndarray] = None
    trial_sigma_mmse_db: Optional[np.ndarray] = None
    trial_mu_mmse_db: Optional[np.ndarray] = None
    snr_linear: Optional[float] = None
    sigma_g_db: Optional[float] = None

    @property
    def mean_sinr_db(self):
        return 10.0 * np.log10(self.mean_sinr)

    def to_dict(self):
        """JSON-friendly summary (per-sample arrays are left to the CSV writer)."""
        out = {
            'mean_sinr': self.mean_sinr,
            'mean_sinr_db': float(self.mean_sinr_db),
            'sinr_std_db': self.sinr_std_db,
            'sigma_mmse_db': self.sigma_mmse_db,
            'mu_mmse_db': self.mu_mmse_db,
            'mu_mmse_linear': self.mu_mmse_linear,
            'shape': list(self.per_mode_sinr.shape),
        }
        if self.trial_mean_sinr is not None:
            out['trial_mean_sinr_db'] = (10 * np.log10(self.trial_mean_sinr)).tolist()
            out['trial_sigma_mmse_db'] = np.asarray(self.trial_sigma_mmse_db).tolist()
            out['trial_mu_mmse_db'] = np.asarray(self.trial_mu_mmse_db).tolist()
        if self.snr_linear is not None:
            out['snr_db'] = float(10 * np.log10(self.snr_linear))
        if self.sigma_g_db is not None:
            out['sigma_g_db'] = self.sigma_g_db
        return out


def band_sinr(per_bin_sinr):
    """Stream SINR over all bins from per-bin SINR (bins on axis ``-2``)."""
    mse = np.mean(1.0 / (1.0 + np.asarray(per_bin_sinr, dtype=float)), axis=-2)
    return 1.0 / mse - 1.0


def sinr_report(per_bin_sinr, inverse_db=None, **extra):
    """Aggregate per-bin SINR of shape ``(trials, bins, D)`` into a report."""
    sinr = np.asarray(per_bin_sinr, dtype=float)
    if sinr.ndim == 2:
        sinr = sinr[None]
    band = band_sinr(sinr)
    band_db = 10.0 * np.log10(band)
    fields = dict(
        per_mode_sinr=sinr,
        band_sinr=band,
        mean_sinr=float(1.0 / np.mean(1.0 / (1.0 + sinr)) - 1.0),
        sinr_std_db=float(np.std(band_db, ddof=1)) if band.size > 1 else 0.0,
        trial_mean_sinr=1.0 / np.mean(1.0 / (1.0 + sinr), axis=(1, 2)) - 1.0,
        sigma_mmse_db=float('nan'),
        mu_mmse_db=float('nan'),
    )
    if inverse_db is not None:
        eq = np.asarray(inverse_db, dtype=float).reshape(sinr.shape[0], -1)
        ddof = 1 if eq.shape[1] > 1 else 0
        fields.update(
            sigma_mmse_db=float(np.std(eq, ddof=1)) if eq.size > 1 else 0.0,
            mu_mmse_db=float(eq.mean()),
            mu_mmse_linear=float(np.mean(10.0 ** (eq / 10.0))),
            trial_sigma_mmse_db=np.std(eq, axis=1, ddof=ddof),
            trial_mu_mmse_db=eq.mean(axis=1),
        )
    fields.update(extra)
    return SinrReport(**fields)


def mmse_matrix(h, snr_linear):
    """MMSE equalizer ``W = (H^H H + I / SNR)^-1 H^H``.

    Parameters
    ----------
    h : array_like, shape (D, D) or (bins, D, D)
        Channel transfer matrix.
    snr_linear : float
        Total signal to total noise power ratio, linear.

    Returns
    -------
    numpy.ndarray
        Equalizer matrix with the same shape as ``h``.
    """
    h = _as_stack(h)
    _check_snr(snr_linear)
    hh = _hermitian(h)
    eye = np.eye(h.shape[-1])
    # solve instead of inv: (H^H H + I/SNR) W = H^H
    return np.linalg.solve(hh @ h + eye / snr_linear, hh)


def per_mode_sinr(h, snr_linear):
    """Instantaneous SINR of every equalizer output.

    ``SINR_i = 1 / [(I + SNR H^H H)^-1]_ii - 1``, linear, shape ``h.shape[:-1]``.
    """
    h = _as_stack(h)
    _check_snr(snr_linear)
    a = np.eye(h.shape[-1]) + snr_linear * (_hermitian(h) @ h)
    d = np.diagonal(np.linalg.inv(a), axis1=-2, axis2=-1).real
    return np.clip(1.0 / d - 1.0, 0.0, None)


def per_mode_sinr_eigen(h, snr_linear):
    """Per-mode SINR through the eigendecomposition of ``H^H H``.

    ``SINR_i = (sum_j |Q_ij|^2 / (1 + SNR lambda_j))^-1 - 1`` with ``Q`` the
    eigenvector matrix. Algebraically identical to :func:`per_mode_sinr`;
    kept as an independent route for cross-checks.
    """
    h = _as_stack(h)
    _check_snr(snr_linear)
    lam, q = np.linalg.eigh(_hermitian(h) @ h)
    weights = np.abs(q) ** 2
    s = np.einsum('...ij,...j->...i', weights, 1.0 / (1.0 + snr_linear * lam))
    return 1.0 / s - 1.0


def snapshot_from_channel(h, snr_linear):
    """Equalizer snapshot an ideal MMSE receiver would converge to."""
    h = _as_stack(h)
    return EqualizerSnapshot(mmse_matrix(h, snr_linear), snr_used=float(snr_linear))


def inverse_eigenvalues_db(snap):
    """dB eigenvalues of ``W^-1 (W^-1)^H`` per bin, shape ``(bins, D)``."""
    w = snap.w
    cond = np.linalg.cond(w)
    bad = np.flatnonzero(~np.isfinite(cond) | (cond > 1e14))
    if bad.size:
        raise NumericalError(f"equalizer matrix of bin {int(bad[0])} is singular "
                             f"(condition number {cond[bad[0]]:.3g})")
    winv = np.linalg.inv(w)
    lam = np.linalg.eigvalsh(winv @ _hermitian(winv))
    if np.any(lam <= 0):
        b = int(np.flatnonzero((lam <= 0).any(axis=-1))[0])
        raise NumericalError(f"non-positive inverse eigenvalue in bin {b}")
    return 10.0 * np.log10(lam)


def inverse_eigen_stats(snap, *, return_linear_mean=False):
    """Spread and mean of the pooled equalizer-inverse eigenvalues.

    Eigenvalues of every bin and mode are pooled and converted to dB. The
    spread uses the ``bins * D - 1`` denominator.

    Returns
    -------
    sigma_mmse_db : float
        Sample standard deviation of the dB eigenvalues.
    mu_mmse_db : float
        Mean of the dB eigenvalues.
    mu_mmse_linear : float
        Mean of the linear eigenvalues, only with ``return_linear_mean``.
    """
    lam_db = inverse_eigenvalues_db(snap).ravel()
    sigma = float(np.std(lam_db, ddof=1)) if lam_db.size > 1 else 0.0
    mu = float(lam_db.mean())
    if return_linear_mean:
        return sigma, mu, float(np.mean(10.0 ** (lam_db / 10.0)))
    return sigma, mu


def sinr_from_snapshot(snap):
    """Per-mode SINR recovered from MMSE coefficients and their SNR alone.

    With ``M = (H^H H + I / SNR)^-1`` one has ``W W^H = M - M^2 / SNR`` and
    ``SINR_i = SNR / M_ii - 1``. The quadratic has two roots per eigenvalue;
    the one for channel gains above ``1 / SNR`` is taken, which is exact
    whenever no channel eigenvalue falls below the noise floor.
    """
    if snap.snr_used is None:
        raise ConfigError("equalizer snapshot carries no SNR; SINR cannot be recovered")
    s = snap.snr_used
    nu, q = np.linalg.eigh(snap.w @ _hermitian(snap.w))
    disc = np.clip(1.0 - 4.0 * nu / s, 0.0, None)
    # s/2 (1 - sqrt(disc)) rewritten to avoid cancellation
    m = 2.0 * nu / (1.0 + np.sqrt(disc))
    diag = np.einsum('...ij,...j->...i', np.abs(q) ** 2, m)
    return np.clip(s / diag - 1.0, 0.0, None)
