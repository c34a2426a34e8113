"""Frame construction: index-modulated comm frames, m-sequence sense frames,
and their power-split superposition.

A frame is an M x N_s complex matrix of frequency-domain subcarrier values,
one column per OFDM symbol.  The comm component activates k out of N_g
subcarriers per group (indices carry bits, constellation points carry more),
the sense component fills every subcarrier with a +/-1 pseudo-random chip,
and the transmitted frame is sqrt(rho)*sense + sqrt(1-rho)*comm.

Active comm entries are scaled by sqrt(N_g/k) so that both components carry
per-column power M and ``rho`` is a true power split.
"""

import math
from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np
from scipy.signal import max_len_seq

from .errors import ConfigurationError, DecodeError, InputError

__all__ = [
    "WaveformConfig",
    "IndexCodebook",
    "Frame",
    "psk_constellation",
    "build_index_codebook",
    "bits_per_group",
    "bits_per_symbol",
    "map_bits_to_comm_frame",
    "comm_frame_to_bits",
    "generate_m_sequence",
    "build_sense_frame",
    "superpose",
]

M_SEQUENCE_DEGREES = range(3, 17)


def psk_constellation(order: int) -> np.ndarray:
    """Unit-magnitude PSK constellation with Gray-coded point ordering.

    ``order`` must be a power of two.  BPSK is [1, -1]; QPSK and larger use a
    pi/order phase offset so no point lies on an axis.
    """
    if order < 2 or order & (order - 1):
        raise ConfigurationError(f"constellation order must be a power of two, got {order}")
    idx = np.arange(order)
    gray = idx ^ (idx >> 1)
    offset = 0.0 if order == 2 else np.pi / order
    return np.exp(1j * (2 * np.pi * gray / order + offset))


@dataclass(frozen=True)
class WaveformConfig:
    """System constants for one waveform configuration.

    Attributes
    ----------
    n_subcarriers : int
        Subcarrier count M; must be divisible by ``group_size``.
    group_size : int
        Subcarriers per group N_g.
    n_active : int
        Active subcarriers per group k, 1 <= k <= N_g.
    constellation : np.ndarray
        Unit-magnitude complex points; size must be a power of two.
    subcarrier_spacing_hz, symbol_duration_s, cyclic_prefix_s : float
        OFDM numerology.  The cyclic prefix never enters the frequency-domain
        model; it is carried as a documented constant.
    symbols_per_frame : int
        Symbols per frame N_s.
    carrier_freq_hz : float
        Carrier frequency, sets the Doppler scale.
    transmit_power_w : float
        Total transmit power P_t.
    power_split : float
        Fraction rho of power on the sense component, 0 <= rho < 1.
    """

    n_subcarriers: int
    group_size: int
    n_active: int
    constellation: np.ndarray
    subcarrier_spacing_hz: float
    symbol_duration_s: float
    cyclic_prefix_s: float
    symbols_per_frame: int
    carrier_freq_hz: float
    transmit_power_w: float = 1.0
    power_split: float = 0.0
    sense_shift_per_symbol: bool = False

    def __post_init__(self):
        m, ng, k = self.n_subcarriers, self.group_size, self.n_active
        if m <= 0 or ng <= 0 or m % ng:
            raise ConfigurationError(f"n_subcarriers={m} must be a positive multiple of group_size={ng}")
        if not 1 <= k <= ng:
            raise ConfigurationError(f"n_active={k} must lie in [1, {ng}]")
        s = np.asarray(self.constellation)
        if s.size < 2 or s.size & (s.size - 1):
            raise ConfigurationError(f"constellation size {s.size} must be a power of two >= 2")
        if not np.allclose(np.abs(s), 1.0, atol=1e-12):
            raise ConfigurationError("constellation points must have unit magnitude")
        if not 0.0 <= self.power_split < 1.0:
            raise ConfigurationError(f"power_split={self.power_split} must lie in [0, 1)")
        for name in ("subcarrier_spacing_hz", "symbol_duration_s", "symbols_per_frame",
                     "carrier_freq_hz", "transmit_power_w"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def n_groups(self) -> int:
        return self.n_subcarriers // self.group_size

    @property
    def bits_per_point(self) -> int:
        return int(math.log2(len(self.constellation)))

    @property
    def active_scale(self) -> float:
        """Amplitude applied to active comm entries: sqrt(N_g / k)."""
        return math.sqrt(self.group_size / self.n_active)


@dataclass(frozen=True)
class IndexCodebook:
    """First 2^p k-subsets of {0..N_g-1} in lexicographic order.

    ``p = floor(log2 C(N_g, k))`` index bits select one entry; the bit
    pattern read as a big-endian integer is the entry index.
    """

    group_size: int
    n_active: int
    entries: tuple
    index_bits: int
    _lookup: dict = field(repr=False, default_factory=dict)

    def entry_index(self, support) -> int:
        """Entry index of a subcarrier subset, or raise DecodeError."""
        key = tuple(sorted(support))
        try:
            return self._lookup[key]
        except KeyError:
            raise DecodeError(f"group support {key} is not a codebook entry") from None


def build_index_codebook(group_size: int, n_active: int) -> IndexCodebook:
    """Enumerate the subcarrier-activation codebook for one group.

    Keeps the first ``2^p`` of the ``C(N_g, k)`` lexicographically ordered
    k-subsets, with ``p = floor(log2 C(N_g, k))``; truncation makes the
    codebook deterministic and reproducible.
    """
    if not 1 <= n_active <= group_size:
        raise ConfigurationError(f"n_active={n_active} must lie in [1, {group_size}]")
    total = math.comb(group_size, n_active)
    if total < 2:
        raise ConfigurationError(
            f"C({group_size},{n_active})={total} admits no index bit; need at least 2 subsets")
    p = int(math.floor(math.log2(total)))
    entries = []
    for i, combo in enumerate(combinations(range(group_size), n_active)):
        if i >= 1 << p:
            break
        entries.append(combo)
    lookup = {e: i for i, e in enumerate(entries)}
    return IndexCodebook(group_size, n_active, tuple(entries), p, lookup)


def bits_per_group(config: WaveformConfig) -> int:
    codebook_bits = int(math.floor(math.log2(math.comb(config.group_size, config.n_active))))
    return codebook_bits + config.n_active * config.bits_per_point


def bits_per_symbol(config: WaveformConfig) -> int:
    """Information bits carried by one symbol: G * (p + k*log2|S|)."""
    return config.n_groups * bits_per_group(config)


@dataclass
class Frame:
    """Role-tagged M x N_s complex matrix of subcarrier values."""

    samples: np.ndarray
    role: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 2:
            raise InputError(f"frame samples must be 2-D, got shape {self.samples.shape}")

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.samples.astype(dtype)
        return self.samples

    @property
    def n_subcarriers(self) -> int:
        return self.samples.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.samples.shape[1]


def _bits_to_int(bits: np.ndarray) -> np.ndarray:
    """Interpret rows of a 0/1 array as big-endian integers."""
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits @ weights


def _int_to_bits(values: np.ndarray, width: int) -> np.ndarray:
    shifts = np.arange(width - 1, -1, -1)
    return (np.asarray(values)[..., None] >> shifts) & 1


def map_bits_to_comm_frame(bits, config: WaveformConfig, codebook: IndexCodebook) -> Frame:
    """Map an information bit string onto an index-modulated comm frame.

    Per symbol and group, the first ``p`` bits pick the active-subcarrier
    subset and the next ``k*log2|S|`` bits pick the constellation points,
    placed at the active positions and scaled by sqrt(N_g/k).
    """
    bits = np.asarray(bits, dtype=np.int64).ravel()
    g, ns = config.n_groups, config.symbols_per_frame
    bpg = bits_per_group(config)
    expected = g * bpg * ns
    if bits.size != expected:
        raise InputError(f"bit string length {bits.size} != bits_per_symbol*N_s = {expected}")
    p = codebook.index_bits
    bpp = config.bits_per_point
    k = config.n_active

    # (N_s, G, bpg) layout: symbol-major, then group.
    blocks = bits.reshape(ns, g, bpg)
    entry_idx = _bits_to_int(blocks[:, :, :p])
    sym_idx = _bits_to_int(blocks[:, :, p:].reshape(ns, g, k, bpp))

    entry_table = np.array(codebook.entries)  # (2^p, k)
    positions = entry_table[entry_idx]  # (N_s, G, k)
    points = config.active_scale * np.asarray(config.constellation)[sym_idx]

    frame = np.zeros((ns, g, config.group_size), dtype=np.complex128)
    np.put_along_axis(frame, positions, points, axis=2)
    return Frame(frame.reshape(ns, config.n_subcarriers).T, "comm")


def comm_frame_to_bits(frame: Frame, config: WaveformConfig, codebook: IndexCodebook) -> np.ndarray:
    """Exact inverse of :func:`map_bits_to_comm_frame` (genie demapper)."""
    x = np.asarray(frame)
    g, ng, ns = config.n_groups, config.group_size, config.symbols_per_frame
    if x.shape != (config.n_subcarriers, ns):
        raise InputError(f"frame shape {x.shape} does not match config")
    groups = x.T.reshape(ns, g, ng)
    constellation = np.asarray(config.constellation)
    out = np.empty((ns, g, bits_per_group(config)), dtype=np.int64)
    p, bpp, k = codebook.index_bits, config.bits_per_point, config.n_active
    for n in range(ns):
        for gi in range(g):
            support = np.flatnonzero(groups[n, gi])
            if support.size != k:
                raise DecodeError(
                    f"group ({gi}, symbol {n}) has {support.size} active entries, expected {k}")
            idx = codebook.entry_index(support)
            vals = groups[n, gi, support] / config.active_scale
            sym = np.argmin(np.abs(vals[:, None] - constellation[None, :]), axis=1)
            if not np.allclose(constellation[sym], vals, atol=1e-9):
                raise DecodeError(f"group ({gi}, symbol {n}) entries are not constellation points")
            out[n, gi, :p] = _int_to_bits(idx, p)
            out[n, gi, p:] = _int_to_bits(sym, bpp).reshape(-1)
    return out.reshape(-1)


def generate_m_sequence(degree: int) -> np.ndarray:
    """Maximal-length +/-1 sequence of length 2**degree - 1.

    Uses one fixed primitive feedback polynomial per degree and the all-ones
    initial register state; chips 0/1 map to +1/-1.
    """
    if degree not in M_SEQUENCE_DEGREES:
        raise ConfigurationError(
            f"m-sequence degree {degree} unsupported; table covers "
            f"[{M_SEQUENCE_DEGREES.start}, {M_SEQUENCE_DEGREES.stop - 1}]")
    chips = max_len_seq(degree)[0]
    return 1.0 - 2.0 * chips


def sense_sequence_degree(n_subcarriers: int) -> int:
    """Largest LFSR degree whose sequence fits in M subcarriers: floor(log2(M+1))."""
    degree = int(math.floor(math.log2(n_subcarriers + 1)))
    if degree not in M_SEQUENCE_DEGREES:
        raise ConfigurationError(
            f"no supported m-sequence degree for M={n_subcarriers}")
    return degree


def build_sense_frame(config: WaveformConfig) -> Frame:
    """Sense frame: one m-sequence cyclically extended to M, repeated per symbol.

    With ``sense_shift_per_symbol`` the column is cyclically shifted by one
    chip per symbol (experimentation switch); the default keeps it identical
    so the per-symbol Doppler sum factors cleanly.
    """
    m = config.n_subcarriers
    seq = generate_m_sequence(sense_sequence_degree(m))
    column = np.resize(seq, m)  # cyclic extension by the leading chips
    if config.sense_shift_per_symbol:
        cols = [np.roll(column, -n) for n in range(config.symbols_per_frame)]
        samples = np.stack(cols, axis=1)
    else:
        samples = np.repeat(column[:, None], config.symbols_per_frame, axis=1)
    return Frame(samples.astype(np.complex128), "sense")


def superpose(comm: Frame, sense: Frame, power_split: float) -> Frame:
    """Combine components: sqrt(rho)*sense + sqrt(1-rho)*comm."""
    xc, xs = np.asarray(comm), np.asarray(sense)
    if xc.shape != xs.shape:
        raise InputError(f"frame shapes differ: comm {xc.shape} vs sense {xs.shape}")
    if not 0.0 <= power_split <= 1.0:
        raise InputError(f"power split {power_split} outside [0, 1]")
    rho = power_split
    return Frame(math.sqrt(rho) * xs + math.sqrt(1.0 - rho) * xc, "superposed")


def random_bits(n_bits: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=n_bits, dtype=np.int64)


def build_tx_frame(bits, config: WaveformConfig, codebook: IndexCodebook) -> Frame:
    """Full transmit frame: map bits, add the sense component per config.power_split."""
    comm = map_bits_to_comm_frame(bits, config, codebook)
    sense = build_sense_frame(config)
    return superpose(comm, sense, config.power_split)
