"""Thin wrapper around QUADPACK that turns warnings into exceptions."""
import warnings

from scipy import integrate

from .exceptions import NumericalError

EPSABS = 1e-9
EPSREL = 1e-10
LIMIT = 400


def integrate_1d(func, a, b, *, epsabs=EPSABS, epsrel=EPSREL, **kwargs):
    """Adaptive Gauss-Kronrod integral of ``func`` over ``[a, b]``.

    Extra keyword arguments (``weight``, ``wvar``, ``points``) are passed to
    :func:`scipy.integrate.quad`. A :class:`NumericalError` carrying the
    achieved error estimate is raised when QUADPACK reports a problem and the
    estimate is worse than ten times the requested absolute tolerance.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        res = integrate.quad(func, a, b, epsabs=epsabs, epsrel=epsrel,
                             limit=LIMIT, full_output=1, **kwargs)
    value, abserr = res[0], res[1]
    if len(res) > 3 and abserr > 10 * epsabs:
        raise NumericalError(
            f"quadrature over [{a:.6g}, {b:.6g}] did not converge: "
            f"achieved abs. error {abserr:.3g} ({res[3].splitlines()[0]})")
    return value
