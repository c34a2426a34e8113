"""Range-velocity estimation from frequency-domain echoes.

Two estimators operate on the same echo frame:

* a matched filter correlating against the known sense sequence over a
  range-velocity grid (fast path: zero-padded 2-D FFT),
* 2-D MUSIC on the echo divided elementwise by the full known frame, with
  forward spatial smoothing over overlapping subframes.

Their outputs can be fused with MMSE weights, benchmarked against the
Cramer-Rao bounds from the deterministic-signal Fisher information, and
reduced to RMSE across Monte Carlo trials.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.ndimage import maximum_filter

from .channel import TargetSet
from .errors import EstimationError, InputError
from .waveform import WaveformConfig

__all__ = [
    "RangeVelocityGrid",
    "EstimateSet",
    "CrlbResult",
    "matched_filter_spectrum",
    "find_peaks",
    "MusicSolver",
    "music_2d",
    "fuse",
    "crlb",
    "rmse",
]


def unambiguous_range(config: WaveformConfig) -> float:
    """Range at which the round-trip subcarrier phase ramp wraps: c/(2*df)."""
    return SPEED_OF_LIGHT / (2.0 * config.subcarrier_spacing_hz)


def unambiguous_velocity(config: WaveformConfig) -> float:
    """Velocity at which the round-trip per-symbol Doppler wraps: c/(2*fc*Ts)."""
    return SPEED_OF_LIGHT / (2.0 * config.carrier_freq_hz * config.symbol_duration_s)


@dataclass(frozen=True)
class RangeVelocityGrid:
    """Uniform search grid over range (m) and radial velocity (m/s)."""

    range_axis: np.ndarray
    velocity_axis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "range_axis", np.asarray(self.range_axis, dtype=float))
        object.__setattr__(self, "velocity_axis", np.asarray(self.velocity_axis, dtype=float))
        if self.range_axis.size == 0 or self.velocity_axis.size == 0:
            raise InputError("grid axes must be non-empty")

    @classmethod
    def from_extent(cls, config: WaveformConfig, r_max: float, n_range: int,
                    v_max: float, n_velocity: int, r_min: float = 0.0,
                    v_min: float | None = None) -> "RangeVelocityGrid":
        """Build a grid whose steps divide the ambiguity spans exactly.

        Snapping the steps onto the DFT lattice lets the matched filter and
        MUSIC evaluate the grid with zero-padded FFTs instead of direct sums.
        """
        if v_min is None:
            v_min = -v_max
        if n_range < 2 or n_velocity < 2:
            raise InputError("need at least 2 grid points per axis")
        r_span, v_span = unambiguous_range(config), unambiguous_velocity(config)
        k_r = max(int(round(r_span * (n_range - 1) / (r_max - r_min))), 2)
        k_v = max(int(round(v_span * (n_velocity - 1) / (v_max - v_min))), 2)
        r_step, v_step = r_span / k_r, v_span / k_v
        a0, b0 = int(round(r_min / r_step)), int(round(v_min / v_step))
        return cls((a0 + np.arange(n_range)) * r_step,
                   (b0 + np.arange(n_velocity)) * v_step)

    @property
    def range_step(self) -> float:
        return float(self.range_axis[1] - self.range_axis[0]) if self.range_axis.size > 1 else 0.0

    @property
    def velocity_step(self) -> float:
        return float(self.velocity_axis[1] - self.velocity_axis[0]) if self.velocity_axis.size > 1 else 0.0

    def normalized_delays(self, config: WaveformConfig) -> np.ndarray:
        return 4.0 * np.pi * config.subcarrier_spacing_hz * self.range_axis / SPEED_OF_LIGHT

    def normalized_dopplers(self, config: WaveformConfig) -> np.ndarray:
        return (2.0 * config.carrier_freq_hz * self.velocity_axis
                * config.symbol_duration_s / SPEED_OF_LIGHT)


@dataclass
class EstimateSet:
    """Per-target range/velocity estimates with optional error variances."""

    range_m: np.ndarray
    velocity_mps: np.ndarray
    power: np.ndarray
    source: str
    var_range: float | None = None
    var_velocity: float | None = None
    complete: bool = True

    def __post_init__(self):
        self.range_m = np.atleast_1d(np.asarray(self.range_m, dtype=float))
        self.velocity_mps = np.atleast_1d(np.asarray(self.velocity_mps, dtype=float))
        self.power = np.atleast_1d(np.asarray(self.power, dtype=float))

    def __len__(self):
        return len(self.range_m)


@dataclass
class CrlbResult:
    """Per-target CRLBs and the 2x2 Fisher blocks they come from."""

    crlb_range: np.ndarray
    crlb_velocity: np.ndarray
    fisher: np.ndarray  # (P, 2, 2)


def _axis_dft_plan(axis: np.ndarray, unit_span: float, min_size: int):
    """Map a uniform axis onto DFT bins: axis[i] = idx[i] * unit_span / size.

    Returns (size, indices) or None when the axis does not sit on any DFT
    lattice of the given span (the caller then falls back to direct sums).
    """
    if axis.size < 2:
        return None
    step = axis[1] - axis[0]
    if step <= 0 or not np.allclose(np.diff(axis), step, rtol=1e-9, atol=0.0):
        return None
    size_exact = unit_span / step
    size = int(round(size_exact))
    if size < 2 or abs(size_exact - size) > 1e-6:
        return None
    start_exact = axis[0] / step
    a0 = int(round(start_exact))
    if abs(start_exact - a0) > 1e-6:
        return None
    # zero-pad: the transform must be at least as long as the data axis
    repeat = max(1, math.ceil(min_size / size))
    indices = (a0 + np.arange(axis.size)) * repeat
    return size * repeat, np.mod(indices, size * repeat)


def matched_filter_spectrum(echo, sense_frame, grid: RangeVelocityGrid,
                            config: WaveformConfig, method: str = "auto") -> np.ndarray:
    """Range-velocity power spectrum of the echo correlated with the sense frame.

    Evaluates |sum_{m,n} R[m,n] Xs[m,n] e^{j m tau(r)} e^{-2j pi n f(v)}|^2 on
    the grid.  ``method`` is one of ``fft`` (zero-padded 2-D FFT over a
    DFT-aligned grid), ``direct`` (dense matrix products, any grid) or
    ``auto``.
    """
    r = np.asarray(echo)
    xs = np.asarray(sense_frame)
    if r.shape != xs.shape:
        raise InputError(f"echo {r.shape} and sense frame {xs.shape} shapes differ")
    if method not in ("auto", "fft", "direct"):
        raise InputError(f"unknown method {method!r}")
    z = r * xs
    m, ns = z.shape

    r_plan = _axis_dft_plan(grid.range_axis, unambiguous_range(config), m)
    v_plan = _axis_dft_plan(grid.velocity_axis, unambiguous_velocity(config), ns)
    use_fft = r_plan is not None and v_plan is not None
    if method == "fft" and not use_fft:
        raise InputError("grid is not aligned with a DFT lattice; use method='direct'")

    if method == "direct" or not use_fft:
        tau = grid.normalized_delays(config)
        dop = grid.normalized_dopplers(config)
        e_r = np.exp(1j * np.outer(np.arange(m), tau))
        e_v = np.exp(-2j * np.pi * np.outer(np.arange(ns), dop))
        s = e_r.T @ z @ e_v
    else:
        k_r, r_idx = r_plan
        k_v, v_idx = v_plan
        s = k_r * np.fft.ifft(z, n=k_r, axis=0)
        s = np.fft.fft(s, n=k_v, axis=1)
        s = s[np.ix_(r_idx, v_idx)]
    return np.abs(s) ** 2


def _parabolic_offset(left: float, center: float, right: float) -> float:
    denom = left - 2.0 * center + right
    if denom >= 0.0:  # not a strict local max in continuous terms
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def find_peaks(spectrum: np.ndarray, n_targets: int, grid: RangeVelocityGrid,
               source: str = "matched-filter") -> EstimateSet:
    """Strongest local maxima of a range-velocity spectrum, sub-bin refined.

    Local maxima over the 8-neighborhood are ranked by power (ties broken by
    ascending range then velocity) and refined with a 3-point parabolic
    interpolation per axis.  If fewer than ``n_targets`` maxima exist the
    result is truncated and flagged via ``complete=False``.
    """
    if n_targets < 1:
        raise InputError("n_targets must be >= 1")
    s = np.asarray(spectrum, dtype=float)
    if s.shape != (grid.range_axis.size, grid.velocity_axis.size):
        raise InputError(f"spectrum shape {s.shape} does not match grid")

    footprint = np.ones((3, 3), dtype=bool)
    footprint[1, 1] = False  # strict: plateaus are not peaks
    is_max = s > maximum_filter(s, footprint=footprint, mode="constant", cval=-np.inf)
    ri, vi = np.nonzero(is_max)
    powers = s[ri, vi]
    order = np.lexsort((vi, ri, -powers))
    take = order[:n_targets]

    ranges, velocities = [], []
    for idx in take:
        i, j = int(ri[idx]), int(vi[idx])
        di = dj = 0.0
        if 0 < i < s.shape[0] - 1:
            di = _parabolic_offset(s[i - 1, j], s[i, j], s[i + 1, j])
        if 0 < j < s.shape[1] - 1:
            dj = _parabolic_offset(s[i, j - 1], s[i, j], s[i, j + 1])
        ranges.append(grid.range_axis[i] + di * grid.range_step)
        velocities.append(grid.velocity_axis[j] + dj * grid.velocity_step)

    return EstimateSet(np.array(ranges), np.array(velocities), powers[take],
                       source=source, complete=len(take) == n_targets)


class MusicSolver:
    """2-D MUSIC over the elementwise-divided echo with forward smoothing.

    The division Y = R / X removes the transmitted frame; entries where
    |X| falls below ``mask_threshold`` (possible near-cancellation of the
    superposed components) are imputed from the mean of valid neighbors.
    Overlapping subframes of shape ``window`` build a smoothed sample
    covariance whose noise subspace defines the pseudo-spectrum.
    """

    def __init__(self, echo, frame, n_targets: int, window: tuple,
                 mask_threshold: float = 0.1, max_subframes: int = 4096):
        r = np.asarray(echo)
        x = np.asarray(frame)
        if r.shape != x.shape:
            raise InputError("echo and frame shapes differ")
        m, ns = r.shape
        mw, nw = window
        if not (1 <= mw <= m and 1 <= nw <= ns):
            raise InputError(f"window {window} exceeds frame shape {(m, ns)}")
        if mw * nw <= n_targets:
            raise InputError("window must contain more entries than targets")

        y = self._divide(r, x, mask_threshold)
        subframes = sliding_window_view(y, (mw, nw)).reshape(-1, mw * nw)
        if subframes.shape[0] > max_subframes:
            sel = np.unique(np.linspace(0, subframes.shape[0] - 1, max_subframes).astype(int))
            subframes = subframes[sel]
        n_sub = subframes.shape[0]
        cov = (subframes.T @ subframes.conj()) / n_sub

        eigvals, eigvecs = np.linalg.eigh(cov)
        rank = int(np.sum(eigvals > max(eigvals[-1], 0.0) * 1e-12))
        if rank < n_targets:
            raise EstimationError(
                f"smoothed covariance rank {rank} below target count {n_targets}")
        self.window = (mw, nw)
        self.n_targets = n_targets
        self.noise_subspace = eigvecs[:, : mw * nw - n_targets]
        self.signal_subspace = eigvecs[:, mw * nw - n_targets:]
        self.eigenvalues = eigvals

    @staticmethod
    def _divide(r, x, threshold):
        mag = np.abs(x)
        valid = mag >= threshold
        y = np.zeros_like(r)
        np.divide(r, x, out=y, where=valid)
        if not np.all(valid):
            counts = _neighbor_sum(valid.astype(float))
            sums = _neighbor_sum(np.where(valid, y, 0.0))
            fallback = y[valid].mean() if np.any(valid) else 0.0
            fill = np.where(counts > 0, sums / np.maximum(counts, 1), fallback)
            y = np.where(valid, y, fill)
        return y

    def pseudo_spectrum(self, grid: RangeVelocityGrid, config: WaveformConfig,
                        method: str = "auto") -> np.ndarray:
        """1 / ||E_n^H a(r, v)||^2 on the grid (FFT fast path when aligned).

        Evaluated through the P-column signal subspace as
        ||a||^2 - ||E_s^H a||^2, which is much cheaper than transforming the
        full noise subspace.
        """
        mw, nw = self.window
        e = self.signal_subspace.conj().reshape(mw, nw, -1)
        r_plan = _axis_dft_plan(grid.range_axis, unambiguous_range(config), mw)
        v_plan = _axis_dft_plan(grid.velocity_axis, unambiguous_velocity(config), nw)
        if method != "direct" and r_plan is not None and v_plan is not None:
            k_r, r_idx = r_plan
            k_v, v_idx = v_plan
            t = np.fft.fft(e, n=k_r, axis=0)  # steering e^{-j m tau}
            t = k_v * np.fft.ifft(t, n=k_v, axis=1)  # steering e^{+2j pi n f}
            sig = np.sum(np.abs(t[np.ix_(r_idx, v_idx)]) ** 2, axis=-1)
        else:
            tau = grid.normalized_delays(config)
            dop = grid.normalized_dopplers(config)
            a_r = np.exp(-1j * np.outer(np.arange(mw), tau))
            a_v = np.exp(2j * np.pi * np.outer(np.arange(nw), dop))
            t = np.einsum("mnk,mr,nv->rvk", e, a_r, a_v, optimize=True)
            sig = np.sum(np.abs(t) ** 2, axis=-1)
        denom = mw * nw - sig  # ||a||^2 = D for unit-modulus steering entries
        return 1.0 / np.maximum(denom, mw * nw * np.finfo(float).eps)


def default_music_window(config: WaveformConfig) -> tuple:
    return (min(config.n_subcarriers // 2, 32), min(config.symbols_per_frame // 2, 8))


def music_2d(echo, frame, grid: RangeVelocityGrid, n_targets: int,
             window: tuple | None = None, config: WaveformConfig | None = None,
             refine_factor: int = 0) -> EstimateSet:
    """Range-velocity estimates from the 2-D MUSIC pseudo-spectrum.

    With ``refine_factor`` > 0 each coarse peak is re-located on a local grid
    ``refine_factor`` times finer (direct evaluation), which removes the
    coarse-grid quantization floor at high SNR.
    """
    if config is None:
        raise InputError("config is required")
    if window is None:
        window = default_music_window(config)
    solver = MusicSolver(echo, frame, n_targets, window)
    spectrum = solver.pseudo_spectrum(grid, config)
    estimates = find_peaks(spectrum, n_targets, grid, source="music")
    if refine_factor <= 0:
        return estimates

    half = 4
    for t in range(len(estimates)):
        local = RangeVelocityGrid(
            estimates.range_m[t] + np.arange(-half, half + 1) * grid.range_step / refine_factor,
            estimates.velocity_mps[t] + np.arange(-half, half + 1) * grid.velocity_step / refine_factor,
        )
        s = solver.pseudo_spectrum(local, config, method="direct")
        peak = find_peaks(s, 1, local, source="music")
        estimates.range_m[t] = peak.range_m[0]
        estimates.velocity_mps[t] = peak.velocity_mps[0]
        estimates.power[t] = peak.power[0]
    return estimates


def _neighbor_sum(a: np.ndarray) -> np.ndarray:
    """Sum over the 8-neighborhood (zero padding at edges)."""
    padded = np.pad(a, 1)
    out = np.zeros_like(a)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            out += padded[1 + di:1 + di + a.shape[0], 1 + dj:1 + dj + a.shape[1]]
    return out


def _pair_estimates(e1: EstimateSet, e2: EstimateSet):
    """Greedy nearest-neighbor pairing in scale-normalized (r, v) space."""
    r_scale = max(np.max(np.abs(e1.range_m), initial=0.0),
                  np.max(np.abs(e2.range_m), initial=0.0), 1e-12)
    v_scale = max(np.max(np.abs(e1.velocity_mps), initial=0.0),
                  np.max(np.abs(e2.velocity_mps), initial=0.0), 1e-12)
    d = ((e1.range_m[:, None] - e2.range_m[None, :]) / r_scale) ** 2 \
        + ((e1.velocity_mps[:, None] - e2.velocity_mps[None, :]) / v_scale) ** 2
    pairs = []
    used1, used2 = set(), set()
    for flat in np.argsort(d, axis=None):
        i, j = divmod(int(flat), d.shape[1])
        if i in used1 or j in used2:
            continue
        pairs.append((i, j))
        used1.add(i)
        used2.add(j)
        if len(pairs) == min(len(e1), len(e2)):
            break
    return pairs


def fuse(e1: EstimateSet, e2: EstimateSet,
         var1: tuple | None = None, var2: tuple | None = None) -> EstimateSet:
    """MMSE linear fusion of two estimate sets describing the same targets.

    Each fused coordinate is w*e1 + (1-w)*e2 with w = var2/(var1+var2)
    computed per axis from the supplied (range, velocity) error variances;
    without priors both weights default to 0.5.  Estimates left unpaired
    (unequal counts) are passed through unfused and flag the result.
    """
    if var1 is None or var2 is None:
        w_r = w_v = 0.5
        fused_var_r = fused_var_v = None
    else:
        v1r, v1v = var1
        v2r, v2v = var2
        w_r = v2r / (v1r + v2r)
        w_v = v2v / (v1v + v2v)
        fused_var_r = v1r * v2r / (v1r + v2r)
        fused_var_v = v1v * v2v / (v1v + v2v)

    pairs = _pair_estimates(e1, e2)
    ranges, velocities, powers = [], [], []
    for i, j in pairs:
        ranges.append(w_r * e1.range_m[i] + (1.0 - w_r) * e2.range_m[j])
        velocities.append(w_v * e1.velocity_mps[i] + (1.0 - w_v) * e2.velocity_mps[j])
        powers.append(max(e1.power[i], e2.power[j]))
    complete = e1.complete and e2.complete and len(e1) == len(e2)
    paired1 = {i for i, _ in pairs}
    for i in range(len(e1)):  # leftovers pass through unfused
        if i not in paired1:
            ranges.append(e1.range_m[i])
            velocities.append(e1.velocity_mps[i])
            powers.append(e1.power[i])
            complete = False
    order = np.argsort(-np.asarray(powers))
    return EstimateSet(np.asarray(ranges)[order], np.asarray(velocities)[order],
                       np.asarray(powers)[order], source="fused",
                       var_range=fused_var_r, var_velocity=fused_var_v,
                       complete=complete)


def crlb(targets: TargetSet, frame, noise_var: float, transmit_power_w: float,
         config: WaveformConfig) -> CrlbResult:
    """Cramer-Rao bounds on range and velocity for each target.

    Deterministic-signal complex-Gaussian Fisher information,
    J_ij = (2/sigma^2) Re sum dmu*/dtheta_i dmu/dtheta_j with
    mu = sqrt(Pt) * G o X, which reduces to |X|^2-weighted sums of m^2, mn
    and n^2 with real entries.  Inverting each 2x2 block gives the bounds.
    """
    x = np.asarray(frame)
    w = np.abs(x) ** 2
    if not np.any(w):
        raise InputError("frame must be nonzero")
    m_idx = np.arange(x.shape[0], dtype=float)
    n_idx = np.arange(x.shape[1], dtype=float)
    s_m2 = float(m_idx**2 @ w.sum(axis=1))
    s_n2 = float(w.sum(axis=0) @ n_idx**2)
    s_mn = float(m_idx @ w @ n_idx)

    a = 4.0 * np.pi * config.subcarrier_spacing_hz / SPEED_OF_LIGHT
    b = 2.0 * config.carrier_freq_hz * config.symbol_duration_s / SPEED_OF_LIGHT
    base = 2.0 * transmit_power_w / noise_var

    n_targets = len(targets)
    fisher = np.empty((n_targets, 2, 2))
    crlb_r = np.empty(n_targets)
    crlb_v = np.empty(n_targets)
    for p in range(n_targets):
        g2 = abs(targets.reflectivity[p]) ** 2
        j11 = base * g2 * a**2 * s_m2
        j12 = -base * g2 * 2.0 * np.pi * a * b * s_mn
        j22 = base * g2 * (2.0 * np.pi * b) ** 2 * s_n2
        det = j11 * j22 - j12**2
        if not np.isfinite(det) or det <= 0.0:
            raise EstimationError(f"singular Fisher block for target {p}")
        fisher[p] = [[j11, j12], [j12, j22]]
        crlb_r[p] = j22 / det
        crlb_v[p] = j11 / det
    return CrlbResult(crlb_r, crlb_v, fisher)


def associate(estimates: EstimateSet, truth: TargetSet,
              r_scale: float, v_scale: float):
    """Greedily map estimates (strongest first) to nearest unclaimed targets.

    Returns a list of (target_index, range_error, velocity_error) tuples.
    """
    order = np.argsort(-estimates.power)
    taken = set()
    matched = []
    for e in order:
        d = ((estimates.range_m[e] - truth.range_m) / r_scale) ** 2 \
            + ((estimates.velocity_mps[e] - truth.velocity_mps) / v_scale) ** 2
        if taken:
            d[list(taken)] = np.inf
        t = int(np.argmin(d))
        taken.add(t)
        matched.append((t, estimates.range_m[e] - truth.range_m[t],
                        estimates.velocity_mps[e] - truth.velocity_mps[t]))
        if len(taken) == len(truth):
            break
    return matched


def rmse(estimate_sets, truth: TargetSet, gate_range: float | None = None,
         gate_velocity: float | None = None):
    """RMSE of range and velocity across trials, after target association.

    Associations whose error exceeds the gates are excluded (divergent
    trials); returns (rmse_range, rmse_velocity, n_used, n_excluded).
    """
    if len(estimate_sets) < 1:
        raise InputError("need at least one trial")
    r_scale = max(float(np.max(np.abs(truth.range_m))), 1e-12)
    v_scale = max(float(np.max(np.abs(truth.velocity_mps))), 1e-12)
    sq_r, sq_v = [], []
    excluded = 0
    for est in estimate_sets:
        for _, dr, dv in associate(est, truth, r_scale, v_scale):
            if (gate_range is not None and abs(dr) > gate_range) or \
               (gate_velocity is not None and abs(dv) > gate_velocity):
                excluded += 1
                continue
            sq_r.append(dr * dr)
            sq_v.append(dv * dv)
    if not sq_r:
        warnings.warn("all associations excluded by the gates", RuntimeWarning, stacklevel=2)
        return math.nan, math.nan, 0, excluded
    return (math.sqrt(float(np.mean(sq_r))), math.sqrt(float(np.mean(sq_v))),
            len(sq_r), excluded)
