import math

import numpy as np
import pytest

from _oracles import equilibrated_error, finite_difference_fim, random_config, random_w
from isac_crb.errors import UnidentifiableError, ValidationError
from isac_crb.fim import assemble_fim, crb_of, crb_report, fim_element, position_jacobian_matrix
from isac_crb.scenario import CommUser, ScenarioConfig, Target, steering_bundle


def _single(theta=0.2, om=1e3, nt=6, nr=8):
    return ScenarioConfig(
        nt, nr, (Target(theta, 120.0, 0.7 - 0.2j),),
        (CommUser(1e-12, 0.0, "rayleigh", pathloss_db=-70),), 0.1, 1e-4, omega_rad_s=om, seed=5,
    )


def test_matches_finite_difference():
    rng = np.random.default_rng(11)
    for _ in range(8):
        cfg = random_config(rng, seed=int(rng.integers(1000)))
        W = random_w(rng, cfg)
        assert equilibrated_error(assemble_fim(cfg, W).f, finite_difference_fim(cfg, W)) < 1e-6


def test_quadratic_form_matches_assembly():
    rng = np.random.default_rng(12)
    cfg = random_config(rng)
    W = random_w(rng, cfg)
    F = assemble_fim(cfg, W).f
    w_v = W.reshape(-1, order="F")
    P = 2 * cfg.n_targets
    E = np.array([[fim_element(cfg, w_v, i, j) for j in range(P)] for i in range(P)])
    assert equilibrated_error(F, E) < 1e-10


def test_single_target_scalar_form():
    """Scalar theta-theta and tau-tau entries; co-phased w gives F_theta_tau = 0."""
    cfg = _single()
    sb = steering_bundle(cfg.n_tx, cfg.n_rx, cfg.thetas[0])
    n = sb.norms
    w = 0.3 * sb.b.conj() / math.sqrt(n["b"]) + 0.1 * sb.b_dot.conj() / math.sqrt(n["b_dot"])
    F = assemble_fim(cfg, w).f
    bw, bdw = sb.b @ w, sb.b_dot @ w
    a2 = abs(cfg.alphas[0]) ** 2
    s = 2 * a2 / cfg.radar_noise_w
    f_tt = s * (n["a_dot"] * abs(bw) ** 2 + n["a"] * abs(bdw) ** 2)
    f_TT = s * cfg.omega ** 2 * n["a"] * abs(bw) ** 2
    assert F[0, 0] == pytest.approx(f_tt, rel=1e-12)
    assert F[1, 1] == pytest.approx(f_TT, rel=1e-12)
    assert abs(F[0, 1]) <= 1e-12 * np.linalg.norm(F)


def test_incoherent_correlation_uses_ww_h():
    rng = np.random.default_rng(3)
    cfg = random_config(rng, max_k=3, correlation="orthogonal")
    W = random_w(rng, cfg)
    F = assemble_fim(cfg, W).f
    G = sum(assemble_fim(cfg.with_(users=(cfg.users[k],)), W[:, [k]]).f for k in range(cfg.n_users))
    np.testing.assert_allclose(F, G, rtol=1e-10, atol=1e-10 * np.abs(F).max())


def test_crb_report_frozen_value():
    cfg = _single()
    w = np.ones(cfg.n_tx) / math.sqrt(cfg.n_tx) * math.sqrt(0.1)
    rep = crb_of(cfg, w)
    F = assemble_fim(cfg, w).f
    np.testing.assert_allclose(rep.crb_matrix @ F, np.eye(2), atol=1e-8)
    assert rep.trace == pytest.approx(np.trace(np.linalg.inv(F)), rel=1e-10)
    assert rep.crb_theta.shape == (1,) and rep.crb_tau.shape == (1,)
    # position bound: J^-1 C J^-T with the exact polar Jacobian
    J = position_jacobian_matrix(cfg)
    Cu = np.linalg.inv(J) @ rep.crb_matrix @ np.linalg.inv(J).T
    assert rep.position_crb_m == pytest.approx(math.sqrt(np.trace(Cu)), rel=1e-12)


def test_position_crb_finite_for_small_omega():
    cfg = _single(om=1.0)
    rep = crb_of(cfg, np.ones(cfg.n_tx) * 0.1)
    assert np.isfinite(rep.position_crb_m) and rep.position_crb_m > 0


def test_zero_beamformer_unidentifiable():
    cfg = _single()
    with pytest.raises(UnidentifiableError) as e:
        crb_of(cfg, np.zeros(cfg.n_tx))
    assert e.value.null_space.shape[0] == 2


def test_rank_deficient_fim_unidentifiable():
    # two targets at the same angle and one illumination direction
    tg = (Target(0.1, 100.0), Target(0.1, 100.0))
    cfg = ScenarioConfig(4, 4, tg, (CommUser(1e-12, 0.0, "los", angle_rad=0.0),), 0.1, 1e-4)
    with pytest.raises(UnidentifiableError):
        crb_of(cfg, np.ones(4))


def test_shape_validation():
    cfg = _single()
    with pytest.raises(ValidationError):
        assemble_fim(cfg, np.ones((cfg.n_tx + 1, 1)))
    with pytest.raises(IndexError):
        fim_element(cfg, np.ones(cfg.n_tx), 0, 2)


def test_crb_report_accepts_raw_matrix():
    cfg = _single()
    F = assemble_fim(cfg, np.ones(cfg.n_tx)).f
    assert crb_report(F, cfg).trace == pytest.approx(crb_of(cfg, np.ones(cfg.n_tx)).trace)
