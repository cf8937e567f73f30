import math

import numpy as np
import pytest

from isac_crb.errors import GeometryError, ValidationError
from isac_crb.scenario import (
    Beamformer,
    CommUser,
    ScenarioConfig,
    Target,
    angle_delay_from_position,
    beampattern,
    dbm_to_w,
    position_jacobian,
    sinr_and_rate,
    steering_derivative,
    steering_vector,
    w_to_dbm,
)


def _cfg(**kw):
    base = dict(
        n_tx=4, n_rx=4,
        targets=(Target(0.1, 100.0),),
        users=(CommUser(1e-12, 1.0, "los", angle_rad=0.5, pathloss_db=-70),),
        power_budget_w=0.1, radar_noise_w=1e-4,
    )
    base.update(kw)
    return ScenarioConfig(**base)


def test_dbm_conversions():
    assert dbm_to_w(20.0) == pytest.approx(0.1, rel=1e-15)
    assert dbm_to_w(-90.0) == pytest.approx(1e-12, rel=1e-12)
    assert w_to_dbm(dbm_to_w(-10.0)) == pytest.approx(-10.0, abs=1e-12)


def test_steering_broadside_is_all_ones():
    np.testing.assert_allclose(steering_vector(5, 0.0), np.ones(5), atol=1e-15)


def test_steering_known_entries():
    # centre reference: entries exp(j pi (n - (N-1)/2) sin theta)
    b = steering_vector(3, math.pi / 6)
    np.testing.assert_allclose(b, np.exp(1j * np.pi * np.array([-1, 0, 1]) * 0.5), atol=1e-15)


def test_steering_derivative_matches_finite_difference():
    th, h = 0.37, 1e-6
    fd = (steering_vector(7, th + h) - steering_vector(7, th - h)) / (2 * h)
    np.testing.assert_allclose(steering_derivative(7, th), fd, atol=1e-8)


def test_steering_derivative_orthogonal():
    for th in np.linspace(-1.5, 1.5, 31):
        b, bd = steering_vector(9, th), steering_derivative(9, th)
        assert abs(np.vdot(b, bd)) <= 1e-12 * np.linalg.norm(b) * np.linalg.norm(bd) + 1e-15


def test_angle_delay_and_jacobian():
    th, tau = angle_delay_from_position((0, 0), (100.0, 100.0))
    assert th == pytest.approx(math.pi / 4)
    assert tau == pytest.approx(math.hypot(100, 100) / (2 * 299792458.0))
    J = position_jacobian((0, 0), (30.0, 40.0))
    eps = 1e-4
    fd = np.column_stack([
        (np.array(angle_delay_from_position((0, 0), (30 + eps, 40))) - angle_delay_from_position((0, 0), (30 - eps, 40))) / (2 * eps),
        (np.array(angle_delay_from_position((0, 0), (30, 40 + eps))) - angle_delay_from_position((0, 0), (30, 40 - eps))) / (2 * eps),
    ])
    np.testing.assert_allclose(J, fd, rtol=1e-7)


def test_geometry_errors():
    with pytest.raises(GeometryError):
        angle_delay_from_position((0, 0), (0, 0))
    with pytest.raises(GeometryError):
        angle_delay_from_position((0, 0), (10, -1))


def test_target_position_round_trip():
    t = Target.from_position((1.0, 2.0), (31.0, 42.0))
    np.testing.assert_allclose(t.position((1.0, 2.0)), (31.0, 42.0))


@pytest.mark.parametrize(
    "kw, field",
    [
        (dict(n_tx=1), "n_tx"),
        (dict(n_rx=2), "n_rx"),
        (dict(power_budget_w=0.0), "power_budget"),
        (dict(radar_noise_w=-1.0), "radar_noise"),
        (dict(targets=()), "targets"),
        (dict(users=()), "users"),
        (dict(signal_correlation="nope"), "signal_correlation"),
    ],
)
def test_config_validation(kw, field):
    with pytest.raises(ValidationError) as e:
        _cfg(**kw)
    assert e.value.field == field


def test_user_validation():
    with pytest.raises(ValidationError):
        CommUser(1e-12, -1.0, "los", angle_rad=0.0)
    with pytest.raises(ValidationError):
        CommUser(1e-12, 1.0, "los")
    with pytest.raises(ValidationError):
        CommUser(1e-12, 1.0, "fixed")
    with pytest.raises(ValidationError):
        Target(math.radians(95), 10.0)


def test_los_channel_and_rayleigh_reproducible():
    c = _cfg()
    np.testing.assert_allclose(c.channels[:, 0], math.sqrt(1e-7) * np.conj(steering_vector(4, 0.5)))
    users = (CommUser(1e-12, 1.0, "rayleigh", pathloss_db=-70),) * 2
    a, b = _cfg(users=users, seed=3), _cfg(users=users, seed=3)
    np.testing.assert_array_equal(a.channels, b.channels)
    assert not np.allclose(a.channels, _cfg(users=users, seed=4).channels)


def test_sinr_two_users_by_hand():
    h1, h2 = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    users = (CommUser(1.0, 0.0, "fixed", channel=h1), CommUser(0.5, 0.0, "fixed", channel=h2))
    W = np.array([[1.0, 1.0], [1.0, 0.5]])
    gamma, rate = sinr_and_rate(users, W)
    # user 1: |h1^H w1|^2 = 1, interference |h1^H w2|^2 = 1, noise 1
    # user 2: |h2^H w2|^2 = 1, interference |h2^H w1|^2 = 4, noise 0.5
    np.testing.assert_allclose(gamma, [0.5, 1 / 4.5])
    np.testing.assert_allclose(rate, np.log2(1 + gamma))


def test_beamformer_feasible_flags():
    c = _cfg(users=(CommUser(1e-12, 2.0, "los", angle_rad=0.5, pathloss_db=-70),))
    h = c.channels[:, 0]
    w = math.sqrt(0.1) * h / np.linalg.norm(h)
    bf = Beamformer.from_matrix(w, c.users)
    assert bf.total_power_w == pytest.approx(0.1)
    assert bf.feasible(c)
    assert not Beamformer.from_matrix(2 * w, c.users).feasible(c)


def test_beampattern_peak_and_single_point():
    w = steering_vector(8, 0.3).conj()[:, None]
    grid = np.radians(np.arange(-90, 90.1, 0.1))
    p, db = beampattern(w, grid)
    assert math.degrees(grid[np.argmax(p)]) == pytest.approx(math.degrees(0.3), abs=0.1)
    assert db.max() == 0.0
    p1, db1 = beampattern(w, [0.2])
    assert p1.shape == (1,) and db1[0] == 0.0
    with pytest.raises(ValidationError):
        beampattern(w, [])
