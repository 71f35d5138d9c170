"""Fixed-trace GUE statistics of decibel channel gains.

Under strong coupling the dB eigenvalues of ``H H^H`` behave like the
spectrum of a traceless Gaussian unitary ensemble. This module provides the
unlabeled (index-free) density of those dB gains for a finite mode count and
for the semicircle limit, the mean shift that makes the average linear gain
unity, and the random-unitary sampling used by the channel simulator.

Finite-D densities are built from the Hermite-function expansion of the
``D x D`` GUE eigenvalue density. The trace of a GUE matrix is Gaussian and
independent of its traceless part, so removing it is a Gaussian
deconvolution; the result keeps the ``exp(-(D+1) z^2 / 2) * poly(z^2)`` form
in the standardized variable ``z = (lambda_dB - mu) / sigma``. For large D
the power-series form loses all precision to cancellation, so those
densities are evaluated by Fourier inversion of the characteristic function
``exp(-t^2 (D-1) / 4D) L^{(1)}_{D-1}(t^2 / 2) / D`` instead.
"""
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import hermite_e, polynomial
from scipy.special import eval_genlaguerre, gammaln

from ._quad import integrate_1d
from .exceptions import ConfigError

INF = math.inf

#: largest finite mode count evaluated with the closed polynomial form
POLY_MAX_MODES = 12
#: largest finite mode count supported at all; use ``INF`` beyond this
MAX_FINITE_MODES = 128
#: finite-D densities are truncated to ``mu +/- TAIL_SIGMAS * sigma``
TAIL_SIGMAS = 6.0

__all__ = ['INF', 'GueSpectrum', 'pdf_db_gain', 'solve_mu_unit_gain',
           'sample_haar_unitary', 'sample_db_gains',
           'eigenvector_element_moments', 'standard_pdf']


def _check_modes(mode_count):
    if mode_count == INF:
        return INF
    if mode_count != int(mode_count) or mode_count < 2:
        raise ConfigError(f"mode count must be an integer >= 2, got {mode_count!r}")
    if mode_count > MAX_FINITE_MODES:
        raise ConfigError(
            f"finite mode count {mode_count} exceeds {MAX_FINITE_MODES}; "
            "use the semicircle limit (INF) instead")
    return int(mode_count)


# -- standardized densities -------------------------------------------------

@lru_cache(maxsize=None)
def _hermite_square_sum(D):
    """Coefficients c_n with sum_k phi_k(x)^2 / D = exp(-x^2) sum_n c_n H_n(x).

    Uses the positive linearization H_k^2 = sum_j 2^j j! C(k,j)^2 H_{2k-2j}.
    """
    c = np.zeros(2 * D - 1)
    for k in range(D):
        j = np.arange(k + 1)
        log_terms = ((j - k) * math.log(2.0) + gammaln(j + 1)
                     + 2 * (gammaln(k + 1) - gammaln(j + 1) - gammaln(k - j + 1))
                     - gammaln(k + 1))
        np.add.at(c, 2 * k - 2 * j, np.exp(log_terms))
    return c / (D * math.sqrt(math.pi))


@lru_cache(maxsize=None)
def _poly_form(D):
    """(alpha, beta) of the standardized traceless density for small D."""
    c = _hermite_square_sum(D)
    w = (D - 1) / (2.0 * D)          # variance of the deconvolved Gaussian
    n = np.arange(c.size)
    # rho_0(y) = N(y; 0, w) * sum_n b_n He_n(y / sqrt(w))
    b = math.sqrt(math.pi) * c * w ** (-n / 2.0)
    # y / sqrt(w) = sqrt(D + 1) * z once y is standardized
    p = hermite_e.herme2poly(b) * (D + 1) ** (n / 2.0)
    beta = p[::2].copy()
    beta[np.abs(beta) < 1e-12 * np.abs(beta).max()] = 0.0

    def unnormalized(z):
        return math.exp(-(D + 1) * z * z / 2.0) * polynomial.polyval(z * z, beta)

    area = integrate_1d(unnormalized, -TAIL_SIGMAS, TAIL_SIGMAS, epsabs=1e-14)
    return 1.0 / area, tuple(beta)


@lru_cache(maxsize=None)
def _fourier_form(D):
    """Trapezoid nodes and weighted characteristic function for large D."""
    s = math.sqrt((D * D - 1) / (2.0 * D))     # std. dev. of traceless eigenvalues
    t_max = math.sqrt(2.0 * (8 * D + 200))
    step = math.pi / (24.0 * s)     # alias period well beyond the tails
    t = np.linspace(0.0, t_max, int(math.ceil(t_max / step)) + 1)
    with np.errstate(over='ignore', invalid='ignore'):
        phi = (np.exp(-t * t * (D - 1) / (4.0 * D))
               * eval_genlaguerre(D - 1, 1, t * t / 2.0) / D)
    phi = np.where(np.isfinite(phi), phi, 0.0)
    weights = np.full(t.size, t[1] - t[0])
    weights[0] *= 0.5
    weights[-1] *= 0.5
    # z -> y = s z, and rho_0(y) = (1/pi) int_0^inf phi(t) cos(t y) dt
    return t * s, phi * weights * s / math.pi


def standard_pdf(z, mode_count):
    """Unit-variance, zero-mean unlabeled density of the traceless GUE.

    Parameters
    ----------
    z : float or array_like
        Standardized dB gain ``(lambda_dB - mu) / sigma``.
    mode_count : int or INF
        Number of modes; ``INF`` gives the semicircle on ``[-2, 2]``.
    """
    z = np.asarray(z, dtype=float)
    D = _check_modes(mode_count)
    if D == INF:
        return np.sqrt(np.clip(4.0 - z * z, 0.0, None)) / (2.0 * math.pi)
    if D <= POLY_MAX_MODES:
        alpha, beta = _poly_form(D)
        out = alpha * np.exp(-(D + 1) * z * z / 2.0) * polynomial.polyval(z * z, beta)
        return np.clip(out, 0.0, None)
    freqs, coef = _fourier_form(D)
    out = np.cos(np.multiply.outer(z, freqs)) @ coef
    return np.clip(out, 0.0, None)


# -- spectrum object --------------------------------------------------------

@dataclass(frozen=True)
class GueSpectrum:
    """Unlabeled density of dB channel gains.

    Parameters
    ----------
    mode_count : int or INF
        Number of modes D. ``INF`` selects the semicircle limit.
    sigma_mdg_db : float
        Standard deviation of the unlabeled dB gains.
    mu_db : float, optional
        Mean dB gain. When omitted it is solved so that the average linear
        gain is one (see :func:`solve_mu_unit_gain`).

    Attributes
    ----------
    normalization : float or None
        Density normalization ``alpha`` of the polynomial form, in
        standardized units (``None`` for the semicircle and Fourier forms).
    poly_coeffs : tuple of float or None
        ``beta_k`` multiplying ``z^(2k)``, k = 0..D-1, for small D.
    """

    mode_count: float
    sigma_mdg_db: float
    mu_db: float = None
    normalization: float = field(init=False, default=None, repr=False)
    poly_coeffs: tuple = field(init=False, default=None, repr=False)

    def __post_init__(self):
        D = _check_modes(self.mode_count)
        object.__setattr__(self, 'mode_count', D)
        if not (self.sigma_mdg_db >= 0 and math.isfinite(self.sigma_mdg_db)):
            raise ConfigError(f"sigma_mdg_db must be finite and >= 0, got {self.sigma_mdg_db!r}")
        object.__setattr__(self, 'sigma_mdg_db', float(self.sigma_mdg_db))
        if D != INF and D <= POLY_MAX_MODES:
            alpha, beta = _poly_form(D)
            object.__setattr__(self, 'normalization', alpha)
            object.__setattr__(self, 'poly_coeffs', beta)
        if self.mu_db is None:
            object.__setattr__(self, 'mu_db', solve_mu_unit_gain(D, self.sigma_mdg_db))
        else:
            object.__setattr__(self, 'mu_db', float(self.mu_db))

    @property
    def is_limit(self):
        return self.mode_count == INF

    @property
    def is_degenerate(self):
        """True when sigma is zero and every gain equals ``mu_db``."""
        return self.sigma_mdg_db == 0.0

    def support(self):
        """Integration bounds: exact for the semicircle, truncated otherwise."""
        half = 2.0 if self.is_limit else TAIL_SIGMAS
        return (self.mu_db - half * self.sigma_mdg_db,
                self.mu_db + half * self.sigma_mdg_db)

    def pdf(self, lambda_db):
        return pdf_db_gain(self, lambda_db)

    def expect(self, func, *, epsabs=1e-9):
        """Expectation of ``func(lambda_db)`` under this density.

        The degenerate ``sigma = 0`` case returns ``func(mu_db)``.
        """
        if self.is_degenerate:
            return float(func(self.mu_db))
        lo, hi = self.support()
        if self.is_limit:
            # sqrt((x - lo)(hi - x)) is handled exactly by the algebraic weight
            scale = 1.0 / (2.0 * math.pi * self.sigma_mdg_db ** 2)
            return scale * integrate_1d(func, lo, hi, weight='alg',
                                        wvar=(0.5, 0.5), epsabs=epsabs / scale)
        return integrate_1d(lambda x: func(x) * float(self.pdf(x)), lo, hi,
                            epsabs=epsabs)

    def sample(self, n, rng):
        return sample_db_gains(self, n, rng)


def pdf_db_gain(spec, lambda_db):
    """Density of the unlabeled dB gain at ``lambda_db``.

    Zero outside ``[mu - 2 sigma, mu + 2 sigma]`` for the semicircle limit.
    Raises :class:`ConfigError` for ``sigma = 0``, where the density is a
    point mass and callers have to branch on :attr:`GueSpectrum.is_degenerate`.
    """
    if spec.is_degenerate:
        raise ConfigError("density of a zero-MDG spectrum is a delta; branch on is_degenerate")
    z = (np.asarray(lambda_db, dtype=float) - spec.mu_db) / spec.sigma_mdg_db
    return standard_pdf(z, spec.mode_count) / spec.sigma_mdg_db


def solve_mu_unit_gain(mode_count, sigma_mdg_db):
    """Mean dB gain giving ``E{10^(lambda_dB / 10)} = 1``.

    A shift of the mean multiplies every linear gain by the same factor, so
    the root is ``-10 log10 E{10^(sigma z / 10)}`` with ``z`` standardized.
    """
    D = _check_modes(mode_count)
    if not sigma_mdg_db >= 0:
        raise ConfigError(f"sigma_mdg_db must be >= 0, got {sigma_mdg_db!r}")
    if sigma_mdg_db == 0:
        return 0.0
    unit = GueSpectrum(D, 1.0, mu_db=0.0)
    a = sigma_mdg_db / 10.0
    # E{10^(a z)} on the unit-variance density; the tilted mass sits near the
    # spectral edge z = 2, so factor 10^(2a) out to keep the integral O(1)
    m = unit.expect(lambda z: 10.0 ** (a * (z - 2.0)), epsabs=1e-10)
    return -10.0 * (2.0 * a + math.log10(m))


# -- sampling ---------------------------------------------------------------

def sample_haar_unitary(D, rng, size=None):
    """Haar-distributed ``D x D`` unitary matrix (or a stack of them).

    QR of a complex Ginibre matrix, with the phases of ``diag(R)`` folded
    back into ``Q`` so the distribution is exactly Haar.

    Parameters
    ----------
    D : int
        Matrix dimension, at least 2.
    rng : numpy.random.Generator
    size : int, optional
        Number of matrices; returns shape ``(size, D, D)`` when given.
    """
    if D < 2:
        raise ConfigError("unitary dimension must be >= 2")
    shape = (D, D) if size is None else (size, D, D)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    return q * (d / np.abs(d))[..., None, :]


def sample_db_gains(spec, n, rng):
    """Draw ``n`` unlabeled dB gains from ``spec``.

    The semicircle is sampled exactly through ``(z + 2) / 4 ~ Beta(3/2, 3/2)``.
    Finite D draws traceless GUE matrices and pools their eigenvalues, so
    consecutive groups of D samples are correlated (as in a real channel).
    """
    if spec.is_degenerate:
        return np.full(n, spec.mu_db)
    if spec.is_limit:
        z = 4.0 * rng.beta(1.5, 1.5, size=n) - 2.0
    else:
        D = spec.mode_count
        m = -(-n // D)
        a = rng.standard_normal((m, D, D)) + 1j * rng.standard_normal((m, D, D))
        h = (a + np.conj(np.swapaxes(a, -1, -2))) / 2.0
        ev = np.linalg.eigvalsh(h)
        ev -= ev.mean(axis=1, keepdims=True)
        # E tr(H0^2) = D^2 - 1 for this scaling of the entries
        ev /= math.sqrt((D * D - 1) / D)
        z = ev.ravel()[:n]
    return spec.mu_db + spec.sigma_mdg_db * z


def eigenvector_element_moments(samples):
    """Mean squared modulus of unitary entries and its CDF fit error.

    Every entry ``|v_ij|^2`` of a Haar unitary (equivalently, of a uniformly
    distributed unit eigenvector) has CDF ``1 - (1 - x)^(D - 1)``.

    Parameters
    ----------
    samples : array_like, shape (n, D, D) or (D, D)

    Returns
    -------
    mean_sq : float
        Sample mean of all ``|v_ij|^2``; exactly ``1/D`` for each unitary.
    fit_error : float
        Largest gap between the empirical CDF of the pooled entries and the
        analytic CDF. Entries of one matrix are dependent, so this is a
        Kolmogorov-type distance rather than a calibrated test statistic.
    """
    u = np.asarray(samples)
    if u.size == 0:
        raise ConfigError("no unitary samples given")
    if u.ndim == 2:
        u = u[None]
    D = u.shape[-1]
    x = np.sort((np.abs(u) ** 2).ravel())
    n = x.size
    cdf = 1.0 - (1.0 - np.clip(x, 0.0, 1.0)) ** (D - 1)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(n) / n
    return float(x.mean()), float(max(upper.max(), lower.max()))
