"""Radar echo synthesis and time-varying multipath communication channels.

The mono-static sensing channel multiplies the transmitted frame elementwise
by a target response built from round-trip delay/Doppler phase ramps.  The
communication channel is an M x M frequency-domain matrix whose off-diagonal
energy is the inter-carrier interference caused by per-path Doppler; it is
derived in closed form from the tap-domain impulse response and cross-checked
against a brute-force time-domain simulation in the tests.

Indices are 0-based throughout: subcarriers m, j in 0..M-1, symbols n in
0..N_s-1.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import ConfigurationError, InputError, NumericalError
from .waveform import WaveformConfig

__all__ = [
    "TargetSet",
    "PathSet",
    "sample_paths",
    "sample_channel",
    "freq_channel_matrix",
    "cir_taps",
    "target_response",
    "generate_echo",
    "apply_comm_channel",
]

CHANNEL_MODELS = ("los", "rician", "rayleigh")
MAX_CONDITION = 1e12


@dataclass
class TargetSet:
    """Radar targets: complex reflectivity, range (m) and radial velocity (m/s)."""

    reflectivity: np.ndarray
    range_m: np.ndarray
    velocity_mps: np.ndarray

    def __post_init__(self):
        self.reflectivity = np.atleast_1d(np.asarray(self.reflectivity, dtype=np.complex128))
        self.range_m = np.atleast_1d(np.asarray(self.range_m, dtype=float))
        self.velocity_mps = np.atleast_1d(np.asarray(self.velocity_mps, dtype=float))
        if not (len(self.reflectivity) == len(self.range_m) == len(self.velocity_mps)):
            raise InputError("target arrays must share length")
        if len(self.range_m) < 1:
            raise InputError("need at least one target")
        if np.any(self.range_m < 0):
            raise InputError("target ranges must be non-negative")

    def __len__(self):
        return len(self.range_m)

    def normalized_delay(self, config: WaveformConfig) -> np.ndarray:
        """Round-trip per-subcarrier phase increment: 4*pi*df*r/c."""
        return 4.0 * np.pi * config.subcarrier_spacing_hz * self.range_m / SPEED_OF_LIGHT

    def normalized_doppler(self, config: WaveformConfig) -> np.ndarray:
        """Round-trip per-symbol Doppler: 2*fc*v*Ts/c."""
        return (2.0 * config.carrier_freq_hz * self.velocity_mps
                * config.symbol_duration_s / SPEED_OF_LIGHT)

    @classmethod
    def from_paths(cls, paths: "PathSet", config: WaveformConfig, reflectivity=None):
        """View one-way propagation paths as mono-static scatterers.

        Sensing sees the scatterer behind path p at range c*tau_p and radial
        velocity c*f_p/fc.  By default the radar reflectivity is the path
        gain itself (same physical scatterer).
        """
        gamma = paths.gains if reflectivity is None else reflectivity
        return cls(gamma, SPEED_OF_LIGHT * paths.delays_s,
                   SPEED_OF_LIGHT * paths.dopplers_hz / config.carrier_freq_hz)


@dataclass
class PathSet:
    """One-way propagation paths: complex gain, delay (s), Doppler (Hz)."""

    gains: np.ndarray
    delays_s: np.ndarray
    dopplers_hz: np.ndarray
    model: str = "rician"
    n_taps: int = 1

    def __post_init__(self):
        self.gains = np.atleast_1d(np.asarray(self.gains, dtype=np.complex128))
        self.delays_s = np.atleast_1d(np.asarray(self.delays_s, dtype=float))
        self.dopplers_hz = np.atleast_1d(np.asarray(self.dopplers_hz, dtype=float))
        if not (len(self.gains) == len(self.delays_s) == len(self.dopplers_hz)):
            raise InputError("path arrays must share length")

    def __len__(self):
        return len(self.gains)

    def tap_indices(self, config: WaveformConfig) -> np.ndarray:
        """Delay-tap index of each path on the grid {0..N_d-1}*Ts/M."""
        spacing = config.symbol_duration_s / config.n_subcarriers
        idx = self.delays_s / spacing
        return np.round(idx).astype(int)


def sample_paths(config: WaveformConfig, model: str, n_paths: int, n_taps: int,
                 velocity_std_mps: float, rng: np.random.Generator,
                 rice_factor: float = 2.0) -> PathSet:
    """Draw a random multipath realization.

    Scattered gains are CN(0, 1).  ``rician`` makes path 0 deterministic with
    power ``rice_factor`` relative to one scattered path; ``los`` returns a
    single deterministic unit-power path (random phase).  Delays are drawn
    without replacement on the tap grid {0..N_d-1}*Ts/M so distinct
    scatterers stay distinguishable in delay; velocities are N(0, std^2) and
    map to Doppler via fc*v/c.
    """
    if model not in CHANNEL_MODELS:
        raise ConfigurationError(f"unknown channel model {model!r}; pick from {CHANNEL_MODELS}")
    if n_paths < 1:
        raise ConfigurationError("n_paths must be >= 1")
    if model == "los":
        n_paths = 1
    if n_taps < n_paths:
        raise ConfigurationError(f"n_taps={n_taps} must be >= n_paths={n_paths}")

    gains = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) / np.sqrt(2.0)
    if model == "los":
        gains = np.exp(2j * np.pi * rng.random(1))
    elif model == "rician":
        gains[0] = np.sqrt(rice_factor) * np.exp(2j * np.pi * rng.random())

    taps = rng.choice(n_taps, size=n_paths, replace=False)
    delays = taps * config.symbol_duration_s / config.n_subcarriers
    velocities = velocity_std_mps * rng.standard_normal(n_paths)
    dopplers = config.carrier_freq_hz * velocities / SPEED_OF_LIGHT
    return PathSet(gains, delays, dopplers, model=model, n_taps=n_taps)


def _dirichlet_kernel(z: np.ndarray, m: int) -> np.ndarray:
    """sum_{q=0}^{M-1} exp(2j*pi*q*z/M), with the limit M at z = 0 mod M."""
    zmod = np.mod(z, m)
    singular = np.minimum(zmod, m - zmod) < 1e-12
    safe = np.where(singular, 1.0, z)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.sin(np.pi * safe) / np.sin(np.pi * safe / m)
    out = np.exp(1j * np.pi * safe * (m - 1) / m) * ratio
    return np.where(singular, float(m), out)


def freq_channel_matrix(paths: PathSet, config: WaveformConfig) -> np.ndarray:
    """Frequency-domain channel matrix H of a Doppler-shifted multipath channel.

    H[i, j] = (1/M) * sum_p a_p * exp(-2j*pi*tau_p*j/Ts)
              * D_M(f_p*Ts - i + j)
    where D_M is the length-M geometric (Dirichlet) sum.  Paths with zero
    Doppler contribute exactly diagonal terms.
    """
    m = config.n_subcarriers
    ts = config.symbol_duration_s
    j_idx = np.arange(m)
    diff = j_idx[None, :] - j_idx[:, None]  # j - i
    h = np.zeros((m, m), dtype=np.complex128)
    for gain, tau, doppler in zip(paths.gains, paths.delays_s, paths.dopplers_hz):
        eps = doppler * ts
        col_phase = np.exp(-2j * np.pi * tau * j_idx / ts)
        if eps == 0.0:
            # exact diagonal: kernel is M at i == j, 0 elsewhere
            h[j_idx, j_idx] += gain * col_phase
        else:
            h += (gain / m) * _dirichlet_kernel(eps + diff, m) * col_phase[None, :]
    return h


def cir_taps(paths: PathSet, config: WaveformConfig, sample_index: int) -> np.ndarray:
    """Discrete impulse response h_d(m) at time sample ``sample_index``.

    Paths whose delay does not sit on the tap grid contribute nothing (the
    tap-domain delta is zero there).
    """
    m = config.n_subcarriers
    if not 0 <= sample_index < m:
        raise InputError(f"sample_index {sample_index} outside [0, {m})")
    spacing = config.symbol_duration_s / m
    taps = np.zeros(paths.n_taps, dtype=np.complex128)
    for gain, tau, doppler in zip(paths.gains, paths.delays_s, paths.dopplers_hz):
        d = tau / spacing
        d_int = int(round(d))
        if abs(d - d_int) > 1e-6 or not 0 <= d_int < paths.n_taps:
            continue
        taps[d_int] += gain * np.exp(2j * np.pi * doppler * sample_index * spacing)
    return taps


def sample_channel(config: WaveformConfig, model: str, n_paths: int, n_taps: int,
                   velocity_std_mps: float, rng: np.random.Generator,
                   rice_factor: float = 2.0, max_draws: int = 100):
    """Draw (paths, H) rejecting numerically degenerate realizations.

    Inverting H is required downstream; draws with condition number beyond
    ``MAX_CONDITION`` are resampled (and reported via a warning).
    """
    for _ in range(max_draws):
        paths = sample_paths(config, model, n_paths, n_taps, velocity_std_mps, rng,
                             rice_factor=rice_factor)
        h = freq_channel_matrix(paths, config)
        if np.linalg.cond(h) <= MAX_CONDITION:
            return paths, h
        warnings.warn("rejected a near-singular channel draw", RuntimeWarning, stacklevel=2)
    raise NumericalError(f"no invertible channel found in {max_draws} draws")


def target_response(targets: TargetSet, config: WaveformConfig,
                    n_symbols: int | None = None) -> np.ndarray:
    """Per-entry echo response G[m, n] = sum_p gamma_p e^{-j m tau_p} e^{2j pi n f_p}."""
    ns = config.symbols_per_frame if n_symbols is None else n_symbols
    m_idx = np.arange(config.n_subcarriers)[:, None]
    n_idx = np.arange(ns)[None, :]
    tau = targets.normalized_delay(config)
    dop = targets.normalized_doppler(config)
    g = np.zeros((config.n_subcarriers, ns), dtype=np.complex128)
    for gamma, t, f in zip(targets.reflectivity, tau, dop):
        g += gamma * np.exp(-1j * m_idx * t) * np.exp(2j * np.pi * n_idx * f)
    return g


def complex_noise(shape, std: float, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian noise with per-entry variance std**2."""
    if std == 0.0:
        return np.zeros(shape, dtype=np.complex128)
    return (std / np.sqrt(2.0)) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def generate_echo(frame, targets: TargetSet, noise_std: float,
                  rng: np.random.Generator, config: WaveformConfig) -> np.ndarray:
    """Mono-static echo: R = G(r, v) o X + noise."""
    x = np.asarray(frame)
    g = target_response(targets, config, n_symbols=x.shape[1])
    if g.shape != x.shape:
        raise InputError(f"frame shape {x.shape} does not match config")
    return g * x + complex_noise(x.shape, noise_std, rng)


def apply_comm_channel(x_pre, h: np.ndarray, transmit_power_w: float, noise_std: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Propagate precoded symbols: y = sqrt(Pt) * H @ x_pre + noise, per column."""
    x = np.asarray(x_pre)
    if h.shape[1] != x.shape[0]:
        raise InputError(f"channel {h.shape} does not act on frame {x.shape}")
    return np.sqrt(transmit_power_w) * (h @ x) + complex_noise(x.shape, noise_std, rng)
