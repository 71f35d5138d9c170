"""Statistics, information rates and monitoring for MMSE-equalized
mode-division multiplexed links with mode-dependent gain (MDG)."""
from .exceptions import (ChecksumError, ConfigError, NumericalError,
                         OutOfDomainError, SdmMmseError)
from .randmat import GueSpectrum, pdf_db_gain, solve_mu_unit_gain, standard_pdf
from .channel import LinkBudget, LinkConfig, ensemble_stats, sample_channel
from .equalizer import EqualizerSnapshot, SinrReport, inverse_eigen_stats, per_mode_sinr
from .rates import (analytical_sinr, capacity_mmse, capacity_ml, mutual_information,
                    prefec_ber)
from .monitor import (MonitorLut, analytic_sigma_mmse, build_lut, estimate,
                      jacobian_map)

__version__ = "0.1.0"
