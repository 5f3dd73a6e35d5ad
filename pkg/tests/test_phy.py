"""Tile synthesis and the code-domain GLRT receiver.

Closed-form single-station expectations are derived independently in each
test; statistical checks run at reduced scale with wide (5 sigma) brackets.
"""
import numpy as np
import pytest

from ranging_sim import game, netmodel, phy


CFG = netmodel.SystemConfig(lam=game.calibrate_threshold(1e-5, 4, 36))


def flat_channel(M: int, gain: complex = 1.0) -> netmodel.ChannelRealization:
    gains = np.full(M, gain, dtype=complex)
    return netmodel.ChannelRealization(
        tile_gains=gains, alpha=float(np.mean(np.abs(gains) ** 2)))


def matched_observation(p: float, code: np.ndarray, theta: float,
                        gains: np.ndarray, cfg: netmodel.SystemConfig):
    """Noiseless tile observation of a single station, built by hand."""
    ramp = np.exp(-2j * np.pi * np.arange(cfg.V) * theta / cfg.N)
    return np.sqrt(p) * code.reshape(cfg.M, cfg.V) * ramp[None, :] * gains[:, None]


def test_codebook_is_unit_modulus_qpsk_and_distinct():
    rng = np.random.default_rng(0)
    book = phy.sample_codebook(16, 144, rng)
    assert book.size == 16
    assert book.codes.shape == (16, 144)
    np.testing.assert_allclose(np.abs(book.codes), 1.0, atol=1e-12)
    quads = book.codes ** 4
    np.testing.assert_allclose(quads, 1.0, atol=1e-9)
    assert len({c.tobytes() for c in np.round(book.codes, 6)}) == 16


def test_codebook_duplicate_draw_rejected():
    # five codes of length one cannot be pairwise distinct over QPSK
    rng = np.random.default_rng(1)
    with pytest.raises(ValueError):
        phy.sample_codebook(5, 1, rng)


def test_steering_vector_phase_ramp():
    a = phy.steering_vector(0.0, 8, 1024)
    np.testing.assert_allclose(a, np.ones(8))
    a = phy.steering_vector(17.0, 4, 1024)
    expected = np.exp(-2j * np.pi * np.arange(4) * 17.0 / 1024)
    np.testing.assert_allclose(a, expected, atol=1e-15)


def test_synthesis_superposition_and_noise_power():
    rng = np.random.default_rng(2)
    book = phy.sample_codebook(2, CFG.M * CFG.V, rng)
    chans = [flat_channel(CFG.M), flat_channel(CFG.M, gain=0.5j)]
    thetas = np.array([3.0, 11.0])
    powers = np.array([4.0, 9.0])
    obs = phy.synthesize_tiles(CFG, book.codes, powers, chans, thetas,
                               np.random.default_rng(3))
    expected = (matched_observation(4.0, book.codes[0], 3.0,
                                    chans[0].tile_gains, CFG)
                + matched_observation(9.0, book.codes[1], 11.0,
                                      chans[1].tile_gains, CFG))
    noise = obs - expected
    # residual must be exactly the additive noise: white, power sigma2
    assert noise.shape == (CFG.M, CFG.V)
    assert np.mean(np.abs(noise) ** 2) == pytest.approx(CFG.sigma2, rel=0.25)

    empty = phy.synthesize_tiles(CFG, np.empty((0, CFG.M * CFG.V)), np.array([]),
                                 [], np.array([]), np.random.default_rng(3))
    np.testing.assert_allclose(empty, noise, atol=1e-12)


def test_glrt_statistic_closed_form_matched_case():
    # Single station, matched delay: the despread statistic equals
    # p * V * sum_m |h_m|^2 exactly.
    rng = np.random.default_rng(4)
    book = phy.sample_codebook(1, CFG.M * CFG.V, rng)
    gains = np.array([1.0, -0.5 + 0.2j, 0.8j, 0.3])
    p, theta = 2.5, 21.0
    obs = matched_observation(p, book.codes[0], theta, gains, CFG)
    stat = phy.glrt_statistic(obs, book.codes[0], theta, CFG.N)
    expected = p * CFG.V * np.sum(np.abs(gains) ** 2)
    assert stat == pytest.approx(expected, rel=1e-12)
    assert phy.total_energy(obs) == pytest.approx(
        p * np.sum(np.abs(gains) ** 2) * CFG.V, rel=1e-12)


def test_scan_matches_per_delay_loop():
    rng = np.random.default_rng(5)
    book = phy.sample_codebook(6, CFG.M * CFG.V, rng)
    obs = (rng.standard_normal((CFG.M, CFG.V))
           + 1j * rng.standard_normal((CFG.M, CFG.V)))
    stats, thetas = phy.scan_codebook(obs, book.codes, CFG.theta_max, CFG.N)
    for c in range(6):
        per_theta = [phy.glrt_statistic(obs, book.codes[c], t, CFG.N)
                     for t in range(CFG.theta_max + 1)]
        assert stats[c] == pytest.approx(max(per_theta), rel=1e-12)
        assert thetas[c] == int(np.argmax(per_theta))


def test_timing_estimate_exact_in_noiseless_case():
    rng = np.random.default_rng(6)
    book = phy.sample_codebook(1, CFG.M * CFG.V, rng)
    gains = np.array([1.0, 0.7 - 0.1j, -0.4, 0.9j])
    for theta in (0, 17, 50):
        obs = matched_observation(1.0, book.codes[0], float(theta), gains, CFG)
        th_hat, _ = phy.estimate_timing(obs, book.codes[0], CFG.theta_max, CFG.N)
        assert th_hat == theta


def test_delay_ties_resolve_to_smallest():
    # With V = 1 every delay hypothesis produces the same statistic.
    cfg = netmodel.SystemConfig(M=4, V=1, lam=0.5)
    rng = np.random.default_rng(7)
    obs = rng.standard_normal((4, 1)) + 1j * rng.standard_normal((4, 1))
    code = np.ones(4, dtype=complex)
    th_hat, _ = phy.estimate_timing(obs, code, cfg.theta_max, cfg.N)
    assert th_hat == 0


def test_detector_strong_signal_and_zero_energy():
    rng = np.random.default_rng(8)
    book = phy.sample_codebook(1, CFG.M * CFG.V, rng)
    gains = np.ones(4, dtype=complex)
    obs = matched_observation(100.0, book.codes[0], 5.0, gains, CFG)
    assert phy.glrt_detect(obs, book.codes[0], 5.0, CFG.lam, CFG.N)
    assert not phy.glrt_detect(np.zeros((4, 36)), book.codes[0], 0.0,
                               CFG.lam, CFG.N)


def test_sinr_estimate_identity_and_saturation():
    rng = np.random.default_rng(9)
    book = phy.sample_codebook(1, CFG.M * CFG.V, rng)
    obs = (rng.standard_normal((CFG.M, CFG.V))
           + 1j * rng.standard_normal((CFG.M, CFG.V)))
    stat = phy.glrt_statistic(obs, book.codes[0], 7.0, CFG.N)
    energy = phy.total_energy(obs)
    expected = (CFG.V * stat - energy) / (energy - stat)
    assert phy.estimate_sinr(obs, book.codes[0], 7.0, CFG.N) == pytest.approx(
        expected, rel=1e-12)

    # all energy inside the code subspace -> saturated estimate
    gains = np.ones(4, dtype=complex)
    matched = matched_observation(3.0, book.codes[0], 7.0, gains, CFG)
    assert phy.estimate_sinr(matched, book.codes[0], 7.0, CFG.N) == np.inf


def test_false_alarm_rate_matches_calibration_at_loose_threshold():
    # Calibrate a 5% false-alarm threshold and verify the empirical rate of
    # the noise-only ratio test at a fixed delay hypothesis (5 sigma bracket).
    lam5 = game.calibrate_threshold(0.05, CFG.M, CFG.V)
    rng = np.random.default_rng(10)
    book = phy.sample_codebook(1, CFG.M * CFG.V, rng)
    trials = 20000
    hits = 0
    for _ in range(trials):
        obs = phy.synthesize_tiles(CFG, np.empty((0, CFG.M * CFG.V)),
                                   np.array([]), [], np.array([]), rng)
        if phy.glrt_detect(obs, book.codes[0], 13.0, lam5, CFG.N):
            hits += 1
    sigma = np.sqrt(0.05 * 0.95 / trials)
    assert abs(hits / trials - 0.05) < 5 * sigma


def test_detection_rate_matches_analytic_curve_at_tangency():
    # The analytic curve models the despread per-tile signal component as
    # complex Gaussian with mean-square SINR gamma; drawing fresh Rayleigh
    # tile gains every frame, the empirical detection rate must sit on the
    # curve (5 sigma bracket).
    curve = game.detection_curve(CFG)
    g_target = game.gamma_tilde(curve)
    p = g_target * CFG.sigma2 / (CFG.V * 1.0)  # mean-square tile gain 1
    rng = np.random.default_rng(11)
    book = phy.sample_codebook(1, CFG.M * CFG.V, rng)
    trials, hits = 4000, 0
    theta = 9.0
    for _ in range(trials):
        g = (rng.standard_normal(CFG.M)
             + 1j * rng.standard_normal(CFG.M)) / np.sqrt(2.0)
        chan = netmodel.ChannelRealization(
            tile_gains=g, alpha=float(np.mean(np.abs(g) ** 2)))
        obs = phy.synthesize_tiles(CFG, book.codes, np.array([p]), [chan],
                                   np.array([theta]), rng)
        if phy.glrt_detect(obs, book.codes[0], theta, CFG.lam, CFG.N):
            hits += 1
    expected = game.detection_probability(g_target, curve)
    sigma = np.sqrt(expected * (1 - expected) / trials)
    assert abs(hits / trials - expected) < 5 * sigma


def test_sinr_estimator_tracks_true_value():
    # K = 1 with random channels at a known true SINR: the estimator mean
    # lands near the truth (coarse bracket at unit-test scale).
    curve = game.detection_curve(CFG)
    rng = np.random.default_rng(12)
    book = phy.sample_codebook(1, CFG.M * CFG.V, rng)
    chan = flat_channel(CFG.M)
    gamma_true = 4.0  # ~6 dB
    p = gamma_true * CFG.sigma2 / (CFG.V * chan.alpha)
    theta = 30.0
    est = []
    for _ in range(3000):
        obs = phy.synthesize_tiles(CFG, book.codes, np.array([p]), [chan],
                                   np.array([theta]), rng)
        est.append(phy.estimate_sinr(obs, book.codes[0], theta, CFG.N))
    assert np.mean(est) == pytest.approx(gamma_true, rel=0.1)
