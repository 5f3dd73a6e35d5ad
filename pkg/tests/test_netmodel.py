"""System configuration, power grid, deployment, and channel sampling."""
import numpy as np
import pytest

from ranging_sim import netmodel


def test_db_conversions_exact_values():
    assert netmodel.db_to_linear(0.0) == 1.0
    assert netmodel.db_to_linear(10.0) == 10.0
    assert netmodel.db_to_linear(-30.0) == pytest.approx(1e-3, rel=1e-12)
    assert netmodel.linear_to_db(100.0) == pytest.approx(20.0, abs=1e-12)


def test_db_conversions_round_trip_arrays():
    x = np.array([-30.0, -7.5, 0.0, 13.2, 20.0])
    back = netmodel.linear_to_db(netmodel.db_to_linear(x))
    np.testing.assert_allclose(back, x, atol=1e-12)


def test_default_config_derived_quantities():
    cfg = netmodel.SystemConfig()
    assert cfg.rho == 128.0
    assert cfg.M * cfg.V <= cfg.N - 2 * cfg.Nv


@pytest.mark.parametrize("bad", [
    dict(M=8, V=200),          # tiles overflow the usable band
    dict(lam=0.0),
    dict(lam=1.0),
    dict(pfa_target=0.0),
    dict(sigma2=-1.0),
    dict(mse_max=100.0, bias2=196.0),
    dict(theta_max=-1),
    dict(Tf=0.0),
])
def test_config_validation_rejects(bad):
    with pytest.raises(ValueError):
        netmodel.SystemConfig(**bad)


def test_power_grid_defaults_land_on_endpoints():
    grid = netmodel.build_power_grid(-30.0, 20.0, 1.0)
    assert grid.Q == 51
    assert grid.p_min == pytest.approx(1e-3, rel=1e-12)
    assert grid.p_max == pytest.approx(100.0, rel=1e-12)
    ratios = grid.levels[1:] / grid.levels[:-1]
    np.testing.assert_allclose(ratios, 10.0 ** 0.1, rtol=1e-12)


def test_power_grid_span_must_divide():
    with pytest.raises(ValueError):
        netmodel.build_power_grid(-30.0, 20.0, 0.7)
    with pytest.raises(ValueError):
        netmodel.build_power_grid(20.0, -30.0, 1.0)
    with pytest.raises(ValueError):
        netmodel.build_power_grid(-30.0, 20.0, -1.0)


def test_deployment_bounds_and_pinning():
    cfg = netmodel.SystemConfig()
    rng = np.random.default_rng(3)
    dep = netmodel.sample_deployment(cfg, 50, rng)
    assert dep.K == 50
    assert np.all(dep.distances >= cfg.R / 10.0)
    assert np.all(dep.distances <= cfg.R)

    pinned = netmodel.sample_deployment(
        cfg, 5, np.random.default_rng(3), d_fixed={0: cfg.R})
    assert pinned.distances[0] == cfg.R


def test_pinned_station_consumes_no_draws():
    cfg = netmodel.SystemConfig()
    a = netmodel.sample_deployment(cfg, 4, np.random.default_rng(11),
                                   d_fixed={0: 100.0})
    b = netmodel.sample_deployment(cfg, 4, np.random.default_rng(11),
                                   d_fixed={0: 600.0})
    np.testing.assert_array_equal(a.distances[1:], b.distances[1:])


def test_tile_centers_evenly_spread():
    cfg = netmodel.SystemConfig()
    centers = netmodel.tile_center_subcarriers(cfg)
    # usable band [80, 944), four 216-wide segments, 36-wide tile centered
    # in each: starts 80+90+216j = 170..., centers at start + 18.
    np.testing.assert_array_equal(centers, [188, 404, 620, 836])
    assert np.all(centers >= cfg.Nv)
    assert np.all(centers < cfg.N - cfg.Nv)


def test_path_loss_reference_distance():
    # At d = R/2 the attenuation is exactly 1; at d = R it is 2^-varsigma.
    assert netmodel.path_loss(335.0, 670.0, 2.0) == pytest.approx(1.0)
    assert netmodel.path_loss(670.0, 670.0, 2.0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        netmodel.path_loss(0.0, 670.0, 2.0)


def test_channel_alpha_matches_tile_gains():
    cfg = netmodel.SystemConfig()
    ch = netmodel.sample_channel(cfg, 335.0, np.random.default_rng(7))
    assert ch.tile_gains.shape == (cfg.M,)
    assert ch.alpha == pytest.approx(np.mean(np.abs(ch.tile_gains) ** 2))
    assert ch.alpha > 0.0


def test_channel_mean_gain_equals_path_loss():
    # Tap powers are normalized, so E[alpha] equals the path loss.
    cfg = netmodel.SystemConfig()
    rng = np.random.default_rng(123)
    d = 502.5
    draws = [netmodel.sample_channel(cfg, d, rng).alpha for _ in range(4000)]
    expected = netmodel.path_loss(d, cfg.R, cfg.varsigma)
    assert np.mean(draws) == pytest.approx(expected, rel=0.05)


def test_instance_channels_one_per_station():
    cfg = netmodel.SystemConfig()
    rng = np.random.default_rng(5)
    dep = netmodel.sample_deployment(cfg, 6, rng)
    chans = netmodel.sample_instance_channels(cfg, dep, rng)
    assert len(chans) == 6
    assert all(c.alpha > 0 for c in chans)
