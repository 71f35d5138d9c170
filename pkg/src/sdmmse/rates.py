"""Analytical information rates of MDG-impaired links behind an MMSE equalizer.

The central quantity is the average post-MMSE SINR

    SINR = E{(1 + SNR * lambda)^-1}^-1 - 1,

with the expectation taken over the unlabeled linear channel gains. It is
exact in the limit of infinitely many modes and a close approximation of the
mode-averaged SINR for practical mode counts. Everything else here (SNR
loss, capacities, BER, constrained capacity) is a function of it.
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import erfc, logsumexp

from ._quad import integrate_1d
from .exceptions import ConfigError

__all__ = ['Constellation', 'QuadratureRule', 'qam_constellation',
           'gauss_hermite_rule', 'analytical_sinr', 'analytical_sinr_unit_interval',
           'effective_snr_loss', 'capacity_mmse', 'capacity_ml', 'capacity_awgn',
           'capacity_loss', 'qfunc', 'prefec_ber', 'mutual_information',
           'SUPPORTED_QAM']

SUPPORTED_QAM = (4, 16, 64, 256)
LN10 = math.log(10.0)


def _check_snr(snr_linear):
    if not (snr_linear > 0 and math.isfinite(snr_linear)):
        raise ConfigError(f"SNR must be positive and finite, got {snr_linear!r}")


# -- average SINR ------------------------------------------------------------

def analytical_sinr(spec, snr_linear):
    """Average post-MMSE SINR (linear) for the gain density ``spec``.

    Integrated on the dB-gain domain, ``E{1 / (1 + SNR 10^(lambda_dB/10))}``,
    which avoids the endpoint singularity of the unit-interval form. A zero
    MDG spectrum returns ``SNR`` exactly.

    Parameters
    ----------
    spec : GueSpectrum
    snr_linear : float
    """
    _check_snr(snr_linear)
    if spec.is_degenerate:
        return float(snr_linear)

    def mmse(x):
        return 1.0 / (1.0 + snr_linear * 10.0 ** (x / 10.0))

    return 1.0 / spec.expect(mmse) - 1.0


def analytical_sinr_unit_interval(spec, snr_linear):
    """Same average SINR through the substitution ``x = 1 / (1 + SNR lambda)``.

    ``SINR = [int_0^1 10 f(10 log10((1 - x) / (SNR x))) / (ln 10 (1 - x)) dx]^-1 - 1``.
    Slower and less robust near ``x -> 1``; used to cross-check
    :func:`analytical_sinr`.
    """
    _check_snr(snr_linear)
    if spec.is_degenerate:
        return float(snr_linear)
    lo, hi = spec.support()

    def lam_db(x):
        return 10.0 * math.log10((1.0 - x) / (snr_linear * x))

    def integrand(x):
        return 10.0 * float(spec.pdf(lam_db(x))) / (LN10 * (1.0 - x))

    # restrict x to the image of the gain support so the integrand is nonzero
    x_lo = 1.0 / (1.0 + snr_linear * 10.0 ** (hi / 10.0))
    x_hi = 1.0 / (1.0 + snr_linear * 10.0 ** (lo / 10.0))
    val = integrate_1d(integrand, x_lo, x_hi)
    return 1.0 / val - 1.0


def effective_snr_loss(spec, snr_linear):
    """SNR penalty ``10 log10 SNR - 10 log10 SINR`` in dB."""
    return 10.0 * math.log10(snr_linear) - 10.0 * math.log10(analytical_sinr(spec, snr_linear))


def capacity_awgn(snr_linear):
    """Per-mode capacity of the MDG-free reference link, bits/s/Hz/mode."""
    return math.log2(1.0 + snr_linear)


def capacity_mmse(spec, snr_linear):
    """Per-mode capacity behind the MMSE equalizer, ``log2(1 + SINR)``."""
    return math.log2(1.0 + analytical_sinr(spec, snr_linear))


def capacity_ml(spec, snr_linear):
    """Per-mode capacity with ideal ML detection, ``E{log2(1 + SNR lambda)}``."""
    _check_snr(snr_linear)
    if spec.is_degenerate:
        return capacity_awgn(snr_linear)
    return spec.expect(lambda x: math.log2(1.0 + snr_linear * 10.0 ** (x / 10.0)))


def capacity_loss(spec, snr_linear):
    """Fractional capacity loss ``1 - C_mmse / C_awgn``."""
    return 1.0 - capacity_mmse(spec, snr_linear) / capacity_awgn(snr_linear)


# -- modulation-specific metrics ----------------------------------------------

def qfunc(x):
    """Gaussian tail probability, ``erfc(x / sqrt 2) / 2``."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def _check_qam(order):
    if order not in SUPPORTED_QAM:
        raise ConfigError(f"unsupported QAM order {order!r}; use one of {SUPPORTED_QAM}")


def prefec_ber(sinr_linear, order):
    """Approximate Gray-mapped square-QAM bit error rate.

    ``b_e = 2 (M - 1) / (M log2 M) * Q(sqrt(6 SINR / (M^2 - 1)))``.
    """
    _check_qam(order)
    sinr = np.asarray(sinr_linear, dtype=float)
    if np.any(sinr < 0):
        raise ConfigError("SINR must be >= 0")
    pref = 2.0 * (order - 1) / (order * math.log2(order))
    out = pref * qfunc(np.sqrt(6.0 * sinr / (order ** 2 - 1)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Constellation:
    """Square QAM with unit average energy and Gray labels."""

    order: int
    points: np.ndarray
    gray_map: np.ndarray

    @property
    def bits(self):
        return int(math.log2(self.order))


@lru_cache(maxsize=None)
def qam_constellation(order):
    """Gray-mapped square ``order``-QAM normalized to unit average power.

    Each axis carries a Gray-coded PAM; labels are ``(I bits, Q bits)``.
    """
    _check_qam(order)
    side = int(round(math.sqrt(order)))
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    gray = np.arange(side) ^ (np.arange(side) >> 1)
    half = int(math.log2(side))
    i_idx, q_idx = np.meshgrid(np.arange(side), np.arange(side), indexing='ij')
    points = (levels[i_idx] + 1j * levels[q_idx]).ravel()
    labels = ((gray[i_idx] << half) | gray[q_idx]).ravel()
    points = points / math.sqrt(2.0 * (order - 1) / 3.0)
    return Constellation(order, points, labels)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite nodes and weights for the weight ``exp(-x^2)``."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self):
        return self.nodes.size

    def integrate(self, func):
        return float(np.sum(self.weights * func(self.nodes)))


@lru_cache(maxsize=None)
def gauss_hermite_rule(J):
    """J-point Gauss-Hermite rule from the Jacobi matrix (Golub-Welsch).

    The three-term recurrence of the Hermite polynomials has zero diagonal
    and off-diagonal ``sqrt(k / 2)``; nodes are its eigenvalues and weights
    ``sqrt(pi)`` times the squared first eigenvector components.
    """
    if J < 1 or J != int(J):
        raise ConfigError("J must be a positive integer")
    if J == 1:
        return QuadratureRule(np.zeros(1), np.array([math.sqrt(math.pi)]))
    off = np.sqrt(np.arange(1, J) / 2.0)
    nodes, vecs = eigh_tridiagonal(np.zeros(J), off)
    weights = math.sqrt(math.pi) * vecs[0] ** 2
    # exact symmetry about zero
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule(nodes, weights)


def mutual_information(sinr_linear, constellation, rule=None, *, clip=True):
    """Constrained capacity (bits/symbol) of a QAM over AWGN at ``sinr_linear``.

    Two-dimensional Gauss-Hermite approximation of

        I = log2 M - 1/M sum_i E_n log2 sum_j exp(-SINR |d_ij|^2 + 2 sqrt(SINR) Re{n* d_ij})

    with ``d_ij`` the difference of unit-power points. The quadrature can
    overshoot by a hair at extreme SINR, so the result is clipped to
    ``[0, log2 M]`` unless ``clip=False``.
    """
    if rule is None:
        rule = gauss_hermite_rule(10)
    if isinstance(constellation, int):
        constellation = qam_constellation(constellation)
    if not sinr_linear >= 0:
        raise ConfigError("SINR must be >= 0")
    M = constellation.order
    if math.isinf(sinr_linear):
        return math.log2(M)
    x = constellation.points
    d = x[:, None] - x[None, :]
    chi1, chi2 = np.meshgrid(rule.nodes, rule.nodes, indexing='ij')
    w2 = np.outer(rule.weights, rule.weights)
    proj = chi1[..., None, None] * d.real + chi2[..., None, None] * d.imag
    expo = -sinr_linear * np.abs(d) ** 2 + 2.0 * math.sqrt(sinr_linear) * proj
    inner = logsumexp(expo, axis=-1) / math.log(2.0)      # shape (J, J, M)
    value = math.log2(M) - float(np.sum(w2[..., None] * inner)) / (M * math.pi)
    if clip:
        return min(max(value, 0.0), math.log2(M))
    return value
