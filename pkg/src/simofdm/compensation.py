"""Transmit-side Doppler pre-compensation and the power-split trade-off.

The sensed per-path delays and Dopplers rebuild the frequency-domain channel
matrix; its Frobenius-normalized inverse is applied before the IFFT so the
effective channel collapses toward the identity.  The residual mismatch sets
a per-subcarrier SINR, which in turn yields the min-SINR-optimal power split
and the largest split that keeps the waveform no worse than plain OFDM.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .channel import PathSet, freq_channel_matrix
from .errors import InputError, NumericalError
from .sensing import EstimateSet
from .waveform import WaveformConfig

__all__ = [
    "SensedChannelEstimate",
    "SinrReport",
    "reconstruct_channel",
    "build_compensator",
    "equivalent_channel",
    "sinr_per_subcarrier",
    "optimize_rho",
    "rho_max",
    "rho_max_static",
    "comm_gain_gc",
]

MAX_CONDITION = 1e12


@dataclass
class SensedChannelEstimate:
    """Per-path channel parameters recovered from sensing.

    Delays and Dopplers are one-way quantities: range r maps to tau = r/c and
    velocity v to f = fc*v/c (the round-trip factor 2 is already absorbed by
    the sensing normalization).  Gains come from a separate estimator and are
    genie-provided here by default.
    """

    gains: np.ndarray
    delays_s: np.ndarray
    dopplers_hz: np.ndarray
    provenance: str = "sensed"

    def __post_init__(self):
        self.gains = np.atleast_1d(np.asarray(self.gains, dtype=np.complex128))
        self.delays_s = np.atleast_1d(np.asarray(self.delays_s, dtype=float))
        self.dopplers_hz = np.atleast_1d(np.asarray(self.dopplers_hz, dtype=float))
        if not (len(self.gains) == len(self.delays_s) == len(self.dopplers_hz)):
            raise InputError("estimate arrays must share length")
        if len(self.gains) == 0:
            raise InputError("estimate set is empty; nothing to reconstruct")

    @classmethod
    def from_estimates(cls, estimates: EstimateSet, gains,
                       config: WaveformConfig, provenance: str = "sensed",
                       delay_grid_spacing_s: float | None = None):
        """Convert (range, velocity) estimates to path parameters.

        ``delay_grid_spacing_s`` snaps delays onto a known tap grid (standard
        when the channel is known to be tap-spaced); velocities stay
        continuous since Doppler is the quantity compensation is sensitive to.
        """
        delays = estimates.range_m / SPEED_OF_LIGHT
        if delay_grid_spacing_s:
            delays = np.round(delays / delay_grid_spacing_s) * delay_grid_spacing_s
        dopplers = config.carrier_freq_hz * estimates.velocity_mps / SPEED_OF_LIGHT
        return cls(np.asarray(gains), delays, dopplers, provenance=provenance)

    @classmethod
    def genie(cls, paths: PathSet):
        return cls(paths.gains.copy(), paths.delays_s.copy(), paths.dopplers_hz.copy(),
                   provenance="genie")

    def perturbed(self, gain_error_std: float, rng: np.random.Generator):
        """Multiplicative complex perturbation of the gains (sensitivity knob)."""
        noise = 1.0 + gain_error_std / np.sqrt(2.0) * (
            rng.standard_normal(len(self.gains)) + 1j * rng.standard_normal(len(self.gains)))
        return SensedChannelEstimate(self.gains * noise, self.delays_s.copy(),
                                     self.dopplers_hz.copy(), provenance="perturbed")


@dataclass
class SinrReport:
    """Per-subcarrier SINR (linear) and interference profile."""

    sinr: np.ndarray
    omega: np.ndarray

    @property
    def min_sinr(self) -> float:
        return float(np.min(self.sinr))

    @property
    def argmin_subcarrier(self) -> int:
        return int(np.argmin(self.sinr))


def reconstruct_channel(estimate: SensedChannelEstimate, config: WaveformConfig) -> np.ndarray:
    """Rebuild the channel matrix from sensed (gain, delay, Doppler) triples."""
    paths = PathSet(estimate.gains, estimate.delays_s, estimate.dopplers_hz)
    return freq_channel_matrix(paths, config)


def build_compensator(h_reconstructed: np.ndarray) -> np.ndarray:
    """Pre-compensator U: inverse of the reconstruction, Frobenius-normalized."""
    if np.linalg.cond(h_reconstructed) > MAX_CONDITION:
        raise NumericalError("reconstructed channel is numerically singular")
    inv = np.linalg.inv(h_reconstructed)
    return inv / np.linalg.norm(inv)


def equivalent_channel(h: np.ndarray, h_reconstructed: np.ndarray) -> np.ndarray:
    """Effective channel after pre-compensation: (I + (H~ - H) H^-1)^-1."""
    m = h.shape[0]
    delta = h_reconstructed - h
    try:
        return np.linalg.inv(np.eye(m) + delta @ np.linalg.inv(h))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("equivalent channel is singular") from exc


def _omega(h_bar: np.ndarray, rho: float) -> np.ndarray:
    """Per-subcarrier interference ratio of the compensated channel."""
    diag = np.diag(h_bar)
    off_power = np.sum(np.abs(h_bar) ** 2, axis=1) - np.abs(diag) ** 2
    mismatch = np.abs(diag - np.linalg.norm(h_bar) / np.sqrt(h_bar.shape[0])) ** 2
    num = off_power
    if rho > 0.0:
        num = off_power + rho / (1.0 - rho) * mismatch
    return num / np.abs(diag) ** 2


def sinr_per_subcarrier(h_bar: np.ndarray, h: np.ndarray, rho: float,
                        transmit_power_w: float, noise_var: float) -> SinrReport:
    """Post-subtraction SINR of each subcarrier at power split ``rho``.

    SINR_m = 1 / (Omega_m + ||H^-1||_F^2 sigma^2 / ((1-rho) |Hbar_mm|^2 Pt)),
    where Omega_m collects residual ICI and the sense-residual mismatch.
    Subcarriers with a vanishing compensated diagonal report SINR 0.
    """
    if not 0.0 <= rho < 1.0:
        raise InputError(f"rho={rho} outside [0, 1)")
    diag = np.abs(np.diag(h_bar)) ** 2
    inv_norm_sq = np.linalg.norm(np.linalg.inv(h)) ** 2
    dead = diag < np.finfo(float).tiny
    if np.any(dead):
        warnings.warn("compensated channel has a vanishing diagonal entry",
                      RuntimeWarning, stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        omega = _omega(h_bar, rho)
        noise_term = inv_norm_sq * noise_var / ((1.0 - rho) * diag * transmit_power_w)
        sinr = 1.0 / (omega + noise_term)
    sinr = np.where(dead, 0.0, sinr)
    omega = np.where(dead, np.inf, omega)
    return SinrReport(sinr, omega)


def optimize_rho(h_bar: np.ndarray, h: np.ndarray, transmit_power_w: float,
                 noise_var: float, step: float = 0.01) -> float:
    """Power split maximizing the worst-subcarrier SINR (grid search).

    Scans rho in {0, step, ..., 1-step}; ties resolve to the smaller rho.
    """
    grid = np.arange(0.0, 1.0 - step / 2, step)
    best_rho, best = 0.0, -np.inf
    for rho in grid:
        value = sinr_per_subcarrier(h_bar, h, rho, transmit_power_w, noise_var).min_sinr
        if value > best:
            best, best_rho = value, float(rho)
    return best_rho


def rho_max(h_bar: np.ndarray, h: np.ndarray, comm_gain_db: float,
            transmit_power_w: float, noise_var: float) -> float:
    """Largest power split at which the waveform still beats plain OFDM.

    Evaluates the printed bound (with its squared-power noise terms) using
    the split-independent part of Omega; in static channels with perfect
    compensation it reduces exactly to 1 - 10^(-Gc/10).  A negative bound is
    clamped to 0 with a warning (no communication gain left to spend).
    """
    if comm_gain_db < 0:
        raise InputError("communication gain must be >= 0 dB")
    gain = 10.0 ** (comm_gain_db / 10.0)
    diag = np.abs(np.diag(h_bar)) ** 2
    inv_norm_sq = np.linalg.norm(np.linalg.inv(h)) ** 2
    omega = _omega(h_bar, rho=0.0)
    p2 = transmit_power_w ** 2
    denom = gain * (omega + inv_norm_sq * noise_var / (p2 * diag)) * diag * p2
    bound = 1.0 - float(np.max(inv_norm_sq * noise_var / denom))
    if bound < 0.0:
        warnings.warn("rho_max bound is negative; clamping to 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return bound


def rho_max_static(comm_gain_db: float) -> float:
    """Closed-form static-channel bound: 1 - 10^(-Gc/10)."""
    if comm_gain_db < 0:
        raise InputError("communication gain must be >= 0 dB")
    return 1.0 - 10.0 ** (-comm_gain_db / 10.0)


def comm_gain_gc(snr_db_im, ber_im, snr_db_ofdm, ber_ofdm, target_ber: float) -> float:
    """SNR gap (dB) between two BER curves at a common target BER.

    Each curve is crossed at ``target_ber`` by log-linear interpolation of
    log10(BER) against SNR; the gain is SNR_ofdm - SNR_im at the crossing.
    """
    return _cross_snr(snr_db_ofdm, ber_ofdm, target_ber) - _cross_snr(snr_db_im, ber_im, target_ber)


def _cross_snr(snr_db, ber, target: float) -> float:
    snr_db = np.asarray(snr_db, dtype=float)
    ber = np.asarray(ber, dtype=float)
    if snr_db.size != ber.size or snr_db.size < 2:
        raise InputError("curve needs matching SNR/BER arrays of length >= 2")
    if target <= 0:
        raise InputError("target BER must be positive")
    for i in range(ber.size - 1):
        hi, lo = ber[i], ber[i + 1]
        if hi >= target > lo:
            lo = max(lo, 1e-300)  # measured-zero points interpolate steeply
            t = (np.log10(hi) - np.log10(target)) / (np.log10(hi) - np.log10(lo))
            return float(snr_db[i] + t * (snr_db[i + 1] - snr_db[i]))
    raise InputError(f"BER {target} is not bracketed by the curve")
