import math
from collections import Counter

import numpy as np
import pytest

from _oracles import grid_oracle, single_pair_case
from isac_crb.closed_form import (
    CASES,
    build_ortho_basis,
    check_feasibility,
    g1_coefficients,
    g1_roots,
    scalarized_objective,
    solve_single,
)
from isac_crb.errors import EndfireDegenerateError, ValidationError
from isac_crb.fim import crb_of
from isac_crb.scenario import CommUser, ScenarioConfig, Target, steering_bundle
from isac_crb.scenario_io import load_shipped

SINGLE_PAIR_OBJECTIVE = 4.761849627329229e-09  # frozen from the grid oracle run


def test_basis_orthonormal_and_spans_h():
    rng = np.random.default_rng(0)
    sb = steering_bundle(8, 8, 0.3)
    h = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    B = build_ortho_basis(sb.b.conj(), sb.b_dot.conj(), h)
    M = B.matrix
    np.testing.assert_allclose(M.conj().T @ M, np.eye(3), atol=1e-12)
    proj = M @ (M.conj().T @ h)
    np.testing.assert_allclose(proj, h, atol=1e-12 * np.linalg.norm(h))
    np.testing.assert_allclose(B.h_proj, np.abs(M.conj().T @ h), rtol=1e-12)
    assert abs(np.vdot(B.d_x, sb.b.conj())) == pytest.approx(math.sqrt(8))


def test_basis_degenerate_when_h_in_span():
    sb = steering_bundle(6, 6, -0.4)
    B = build_ortho_basis(sb.b.conj(), sb.b_dot.conj(), 2 * sb.b.conj() + sb.b_dot.conj())
    assert B.degenerate
    np.testing.assert_allclose(B.matrix.conj().T @ B.matrix, np.eye(3), atol=1e-12)


def test_basis_endfire():
    sb = steering_bundle(6, 6, math.pi / 2)
    with pytest.raises(EndfireDegenerateError):
        build_ortho_basis(sb.b.conj(), sb.b_dot.conj(), np.ones(6))


def test_feasibility_plugin_arithmetic():
    h = np.full(16, math.sqrt(1e-7))  # ||h||^2 P = 1.6e-7
    assert check_feasibility(h, 7.5, 1e-12, 0.1)
    assert (2 ** 7.5 - 1) * 1e-12 < 1.6e-7
    assert not check_feasibility(h, 20.0, 1e-12, 0.1)


def test_single_pair_frozen():
    s = solve_single(load_shipped("single_pair"))
    assert s.case_id == "Case1"
    assert s.objective == pytest.approx(SINGLE_PAIR_OBJECTIVE, rel=1e-9)
    assert s.objective == pytest.approx(grid_oracle(s.scalarization), rel=1e-6)
    assert s.rate_model == pytest.approx(7.5, abs=1e-9)
    assert sum(x * x for x in s.coefficients) == pytest.approx(0.1, rel=1e-9)
    assert s.rate >= s.rate_model - 1e-9


def test_trace_of_assembled_beamformer_matches_objective():
    cfg = load_shipped("single_pair")
    s = solve_single(cfg)
    rep = crb_of(cfg, s.w1)
    assert rep.trace == pytest.approx(s.objective, rel=1e-9)
    assert abs(rep.crb_matrix[0, 1]) <= 1e-9 * np.linalg.norm(rep.crb_matrix)


@pytest.mark.parametrize("kind", ["case1", "case2", "case3", "case4"])
def test_against_grid_oracle(kind):
    rng = np.random.default_rng({"case1": 1, "case2": 2, "case3": 3, "case4": 4}[kind])
    seen = Counter()
    for _ in range(12):
        cfg = single_pair_case(rng, kind)
        if cfg is None:
            continue
        s = solve_single(cfg)
        seen[s.case_id] += 1
        assert s.objective <= grid_oracle(s.scalarization) * (1 + 1e-6)
        assert crb_of(cfg, s.w1).trace == pytest.approx(s.objective, rel=1e-9)
        u = np.square(s.coefficients)
        assert u.sum() == pytest.approx(cfg.power_budget_w, rel=1e-9)
        if s.case_id not in ("RateInactive", "InfeasibleFallback"):
            sc = s.scalarization
            assert sc.received(*u) == pytest.approx(sc.c0, rel=1e-9)
    assert sum(seen.values()) >= 6


def test_case_labels_reachable():
    rng = np.random.default_rng(7)
    seen = set()
    for kind in ["case1", "case2", "case3", "case4"] * 20:
        cfg = single_pair_case(rng, kind)
        if cfg is not None:
            seen.add(solve_single(cfg).case_id)
    assert {"Case1", "Case2", "Case3", "Case4a"} <= seen
    assert seen <= set(CASES)


def test_g1_roots_are_stationary_points():
    rng = np.random.default_rng(5)
    for _ in range(20):
        cfg = single_pair_case(rng, "case4")
        if cfg is None:
            continue
        sc = solve_single(cfg).scalarization
        if not sc.dispatch_applicable():
            continue
        a, b, c = g1_coefficients(sc)
        for r in g1_roots(sc):
            assert abs(a * r * r + b * r + c) <= 1e-9 * (abs(a) * r * r + abs(b) * r + abs(c))
        break


def test_scalarized_objective_matches_trace():
    cfg = load_shipped("single_pair")
    s = solve_single(cfg)
    sc = s.scalarization
    x1 = s.coefficients[0] ** 2
    val = scalarized_objective(sc, x1, abs(cfg.alphas[0]) ** 2, cfg.radar_noise_w)
    assert val == pytest.approx(s.objective, rel=1e-9)


def test_rate_inactive_zero_threshold():
    cfg = load_shipped("single_pair").with_rates([0.0])
    s = solve_single(cfg)
    assert s.case_id == "RateInactive"
    assert s.coefficients[2] == 0.0


def test_infeasible_fallback_full_power_sensing():
    cfg = load_shipped("single_pair")
    s = solve_single(cfg.with_rates([20.0]))
    free = solve_single(cfg.with_rates([0.0]))
    assert s.case_id == "InfeasibleFallback"
    assert s.coefficients[2] == 0.0
    assert sum(x * x for x in s.coefficients) == pytest.approx(0.1, rel=1e-12)
    assert s.objective == pytest.approx(free.objective, rel=1e-12)
    assert s.rate < 20.0


def test_requires_single_pair():
    cfg = load_shipped("default")
    with pytest.raises(ValidationError):
        solve_single(cfg)


def test_solution_row_fields():
    row = solve_single(load_shipped("single_pair")).to_row()
    assert set(row) >= {"case_id", "x1", "x2", "x3", "objective", "rate_model", "rate"}


def test_user_in_target_subspace():
    # h in span{b*, b_dot*}: the rate is met without a d_z component
    sb = steering_bundle(8, 8, 0.2)
    h = 1e-4 * (sb.b.conj() / math.sqrt(8) + 0.3 * sb.b_dot.conj() / np.linalg.norm(sb.b_dot))
    cfg = ScenarioConfig(8, 8, (Target(0.2, 100.0),), (CommUser(1e-12, 8.0, "fixed", channel=h),), 0.1, 1e-4)
    s = solve_single(cfg)
    assert s.basis.degenerate
    assert s.rate >= 8.0 - 1e-6


def test_two_antenna_basis_has_no_third_direction():
    sb = steering_bundle(2, 3, 0.3)
    basis = build_ortho_basis(sb.b.conj(), sb.b_dot.conj(), np.array([1.0, 2j]))
    assert basis.degenerate and not np.any(basis.d_z) and basis.h_proj[2] == 0.0
    assert np.all(np.isfinite(basis.d_x)) and np.all(np.isfinite(basis.d_y))
