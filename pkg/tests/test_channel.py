"""Channel model tests.

The frequency-domain channel matrix is checked against an independent
brute-force oracle: build the time-domain signal, apply per-sample Doppler
rotation and circular convolution tap by tap, and DFT back.
"""

import numpy as np
import pytest

from simofdm.channel import (
    PathSet,
    TargetSet,
    apply_comm_channel,
    cir_taps,
    freq_channel_matrix,
    generate_echo,
    sample_channel,
    sample_paths,
    target_response,
)
from simofdm.errors import ConfigurationError, InputError
from simofdm.waveform import WaveformConfig, psk_constellation


def make_config(m=32, ns=8, fc=2.5e9):
    return WaveformConfig(
        n_subcarriers=m,
        group_size=8,
        n_active=2,
        constellation=psk_constellation(4),
        subcarrier_spacing_hz=15e3,
        symbol_duration_s=6.67e-5,
        cyclic_prefix_s=5e-6,
        symbols_per_frame=ns,
        carrier_freq_hz=fc,
    )


def time_domain_oracle(paths, config, x):
    """Brute-force single-symbol propagation: IDFT, per-sample rotation and
    circular tap convolution, DFT."""
    m = config.n_subcarriers
    spacing = config.symbol_duration_s / m
    s = np.fft.ifft(x)
    y = np.zeros(m, dtype=complex)
    for gain, tau, doppler in zip(paths.gains, paths.delays_s, paths.dopplers_hz):
        d = int(round(tau / spacing))
        rotation = gain * np.exp(2j * np.pi * doppler * np.arange(m) * spacing)
        y += rotation * np.roll(s, d)
    return np.fft.fft(y)


def random_paths(config, rng, n_paths=4, with_doppler=True):
    taps = rng.choice(16, size=n_paths, replace=False)
    delays = taps * config.symbol_duration_s / config.n_subcarriers
    gains = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) / np.sqrt(2)
    vel = 30.0 * rng.standard_normal(n_paths) if with_doppler else np.zeros(n_paths)
    dopplers = config.carrier_freq_hz * vel / 299792458.0
    return PathSet(gains, delays, dopplers, n_taps=16)


# ------------------------------------------------------- channel matrix

def test_matrix_matches_time_domain_oracle_100_draws():
    config = make_config(m=32)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        paths = random_paths(config, rng)
        h = freq_channel_matrix(paths, config)
        x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        y_fast = h @ x
        y_oracle = time_domain_oracle(paths, config, x)
        worst = max(worst, np.max(np.abs(y_fast - y_oracle)) / np.max(np.abs(y_oracle)))
    assert worst < 1e-9


def test_zero_doppler_gives_exact_diagonal():
    config = make_config()
    rng = np.random.default_rng(5)
    paths = random_paths(config, rng, with_doppler=False)
    h = freq_channel_matrix(paths, config)
    off = h - np.diag(np.diag(h))
    assert np.all(off == 0)  # exactly zero, not merely small
    j = np.arange(32)
    expected = np.zeros(32, dtype=complex)
    for gain, tau in zip(paths.gains, paths.delays_s):
        expected += gain * np.exp(-2j * np.pi * tau * j / config.symbol_duration_s)
    np.testing.assert_allclose(np.diag(h), expected, rtol=1e-12)


def test_single_clean_path_is_identity():
    config = make_config()
    paths = PathSet([1.0], [0.0], [0.0])
    np.testing.assert_array_equal(freq_channel_matrix(paths, config), np.eye(32))


def test_cir_taps_structure():
    config = make_config()
    spacing = config.symbol_duration_s / 32
    paths = PathSet([0.7 + 0.1j], [0.0], [150.0], n_taps=4)
    for m in (0, 5, 31):
        taps = cir_taps(config=config, paths=paths, sample_index=m)
        assert taps.shape == (4,)
        np.testing.assert_allclose(
            taps[0], (0.7 + 0.1j) * np.exp(2j * np.pi * 150.0 * m * spacing))
        assert np.all(taps[1:] == 0)
    # zero Doppler -> taps independent of the sample index
    static = PathSet([1.0, 2.0], [0.0, spacing], [0.0, 0.0], n_taps=4)
    np.testing.assert_array_equal(
        cir_taps(static, config, 0), cir_taps(static, config, 17))


def test_cir_taps_consistent_with_matrix_via_dft():
    # Same oracle as the matrix test, but built from cir_taps directly.
    config = make_config()
    rng = np.random.default_rng(77)
    paths = random_paths(config, rng)
    x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    s = np.fft.ifft(x)
    y = np.zeros(32, dtype=complex)
    for m in range(32):
        taps = cir_taps(paths, config, m)
        for d in range(len(taps)):
            y[m] += taps[d] * s[(m - d) % 32]
    h = freq_channel_matrix(paths, config)
    np.testing.assert_allclose(np.fft.fft(y), h @ x, rtol=1e-9)


# ------------------------------------------------------- path sampling

def test_los_single_path():
    config = make_config()
    rng = np.random.default_rng(1)
    paths = sample_paths(config, "los", n_paths=5, n_taps=16, velocity_std_mps=10.0, rng=rng)
    assert len(paths) == 1
    assert abs(abs(paths.gains[0]) - 1.0) < 1e-12


def test_zero_velocity_std_is_static():
    config = make_config()
    rng = np.random.default_rng(2)
    paths = sample_paths(config, "rician", 4, 16, velocity_std_mps=0.0, rng=rng)
    assert np.all(paths.dopplers_hz == 0.0)


def test_rician_power_ratio_monte_carlo():
    config = make_config()
    rng = np.random.default_rng(3)
    dominant, scattered = 0.0, 0.0
    n = 10_000
    for _ in range(n):
        paths = sample_paths(config, "rician", 4, 16, 10.0, rng, rice_factor=2.0)
        dominant += abs(paths.gains[0]) ** 2
        scattered += np.mean(np.abs(paths.gains[1:]) ** 2)
    ratio = (dominant / n) / (scattered / n)
    assert abs(ratio - 2.0) / 2.0 < 0.05


def test_paths_land_on_tap_grid():
    config = make_config()
    rng = np.random.default_rng(4)
    paths = sample_paths(config, "rayleigh", 8, 16, 10.0, rng)
    spacing = config.symbol_duration_s / 32
    np.testing.assert_allclose(paths.delays_s / spacing, paths.tap_indices(config), atol=1e-12)
    assert len(set(paths.tap_indices(config))) == 8  # drawn without replacement


def test_sample_paths_validation():
    config = make_config()
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError):
        sample_paths(config, "awgn", 1, 16, 0.0, rng)
    with pytest.raises(ConfigurationError):
        sample_paths(config, "rician", 0, 16, 0.0, rng)


def test_sample_channel_returns_invertible():
    config = make_config()
    rng = np.random.default_rng(9)
    _, h = sample_channel(config, "rician", 4, 16, 10.0, rng)
    assert np.linalg.cond(h) <= 1e12


# ------------------------------------------------------- target response

def test_target_at_origin_gives_all_ones():
    config = make_config()
    g = target_response(TargetSet([1.0], [0.0], [0.0]), config)
    np.testing.assert_array_equal(g, np.ones((32, 8)))


def test_single_target_unit_modulus():
    config = make_config()
    g = target_response(TargetSet([0.5 - 0.2j], [42.0], [13.0]), config)
    np.testing.assert_allclose(np.abs(g), abs(0.5 - 0.2j), rtol=1e-12)


def test_opposite_doppler_pair_collapses_to_cosine():
    config = make_config()
    targets = TargetSet([1.0, 1.0], [30.0, 30.0], [12.0, -12.0])
    g = target_response(targets, config)
    tau = targets.normalized_delay(config)[0]
    f = targets.normalized_doppler(config)[0]
    m = np.arange(32)[:, None]
    n = np.arange(8)[None, :]
    expected = 2.0 * np.exp(-1j * m * tau) * np.cos(2 * np.pi * n * f)
    np.testing.assert_allclose(g, expected, atol=1e-12)


# ------------------------------------------------------- echo and comm channel

def test_noiseless_echo_of_unit_origin_target_is_frame():
    config = make_config()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((32, 8)) + 1j * rng.standard_normal((32, 8))
    r = generate_echo(x, TargetSet([1.0], [0.0], [0.0]), 0.0, rng, config)
    np.testing.assert_array_equal(r, x)


def test_noiseless_echo_hadamard_inverse_recovers_response():
    config = make_config()
    rng = np.random.default_rng(1)
    x = np.exp(2j * np.pi * rng.random((32, 8)))  # nonzero entries
    targets = TargetSet([0.8 + 0.3j, -0.2j], [25.0, 60.0], [5.0, -8.0])
    r = generate_echo(x, targets, 0.0, rng, config)
    np.testing.assert_allclose(r / x, target_response(targets, config), rtol=1e-12)


def test_echo_noise_variance_monte_carlo():
    config = make_config(m=16, ns=4)
    rng = np.random.default_rng(12)
    x = np.ones((16, 4), dtype=complex)
    targets = TargetSet([1.0], [10.0], [3.0])
    clean = generate_echo(x, targets, 0.0, rng, config)
    sigma = 0.7
    acc = 0.0
    trials = 1000
    for _ in range(trials):
        noisy = generate_echo(x, targets, sigma, rng, config)
        acc += np.sum(np.abs(noisy - clean) ** 2) / noisy.size
    assert abs(acc / trials - sigma**2) / sigma**2 < 0.03


def test_identity_channel_scaling():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((8, 4)) + 1j * rng.standard_normal((8, 4))
    u = np.eye(8) / np.sqrt(8)  # unit-Frobenius identity precoder
    y = apply_comm_channel(u @ x, np.eye(8), 4.0, 0.0, rng)
    np.testing.assert_allclose(y, 2.0 / np.sqrt(8) * x, rtol=1e-12)


def test_perfect_compensation_scaling():
    config = make_config(m=16, ns=2)
    rng = np.random.default_rng(8)
    paths = random_paths(config, rng, n_paths=3)
    h = freq_channel_matrix(paths, config)
    h_inv = np.linalg.inv(h)
    u = h_inv / np.linalg.norm(h_inv)
    x = rng.standard_normal((16, 2)) + 1j * rng.standard_normal((16, 2))
    y = apply_comm_channel(u @ x, h, 9.0, 0.0, rng)
    np.testing.assert_allclose(y, 3.0 / np.linalg.norm(h_inv) * x, rtol=1e-9)


def test_deterministic_energy():
    config = make_config(m=16, ns=1)
    rng = np.random.default_rng(21)
    paths = random_paths(config, rng, n_paths=2)
    h = freq_channel_matrix(paths, config)
    u = np.linalg.inv(h) / np.linalg.norm(np.linalg.inv(h))
    x = rng.standard_normal((16, 1)) + 1j * rng.standard_normal((16, 1))
    y = apply_comm_channel(u @ x, h, 2.5, 0.0, rng)
    assert np.sum(np.abs(y) ** 2) == pytest.approx(2.5 * np.linalg.norm(h @ (u @ x)) ** 2)


def test_comm_channel_shape_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(InputError):
        apply_comm_channel(np.zeros((4, 1)), np.eye(3), 1.0, 0.0, rng)
