"""Independent reference computations shared by the tests."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize_scalar

from isac_crb.closed_form import build_ortho_basis, solve_single
from isac_crb.scenario import CommUser, ScenarioConfig, Target, steering_bundle, steering_vector


def random_config(rng, max_nt=8, max_nr=10, max_q=3, max_k=3, seed=0, correlation="coherent") -> ScenarioConfig:
    Q = int(rng.integers(1, max_q + 1))
    K = int(rng.integers(1, max_k + 1))
    nt = int(rng.integers(2, max_nt + 1))
    nr = int(rng.integers(nt, max_nr + 1))
    thetas = np.sort(rng.uniform(-1.2, 1.2, Q))
    targets = [Target(float(t), float(rng.uniform(50, 300)), complex(*rng.standard_normal(2))) for t in thetas]
    users = [CommUser(1e-12, 1.0, "rayleigh", pathloss_db=-70) for _ in range(K)]
    return ScenarioConfig(
        nt, nr, targets, users, 0.1, 1e-4,
        omega_rad_s=10 ** rng.uniform(0, 10.6), seed=seed, signal_correlation=correlation,
    )


def random_w(rng, config) -> np.ndarray:
    return rng.standard_normal((config.n_tx, config.n_users)) + 1j * rng.standard_normal((config.n_tx, config.n_users))


def _echo_mean(cfg, x, thetas, dtau):
    out = 0
    for q, t in enumerate(cfg.targets):
        c = t.alpha * np.exp(-1j * cfg.omega * (cfg.taus[q] + dtau[q]))
        out = out + c * steering_vector(cfg.n_rx, thetas[q]) * (steering_vector(cfg.n_tx, thetas[q]) @ x)
    return out


def finite_difference_fim(cfg, W) -> np.ndarray:
    """Slepian-Bangs FIM from Richardson-extrapolated central differences of the echo mean."""
    Q = cfg.n_targets
    x = W.sum(axis=1)
    th0 = cfg.thetas

    def diff(m, h):
        th, dt = th0.copy(), np.zeros(Q)
        if m < Q:
            th[m] += h
            a = _echo_mean(cfg, x, th, dt)
            th[m] -= 2 * h
            b = _echo_mean(cfg, x, th, dt)
        else:
            dt[m - Q] += h
            a = _echo_mean(cfg, x, th, dt)
            dt[m - Q] -= 2 * h
            b = _echo_mean(cfg, x, th, dt)
        return (a - b) / (2 * h)

    D = []
    for m in range(2 * Q):
        h = 1e-4 if m < Q else 1e-4 / cfg.omega
        D.append((4 * diff(m, h / 2) - diff(m, h)) / 3)
    return np.array(
        [[2 / cfg.radar_noise_w * np.real(np.vdot(D[i], D[j])) for j in range(2 * Q)] for i in range(2 * Q)]
    )


def equilibrated_error(F, G) -> float:
    s = 1 / np.sqrt(np.diag(F))
    return float(np.max(np.abs((F - G) * np.outer(s, s))))


# ---------------------------------------------------------------------------
# single target / single user
# ---------------------------------------------------------------------------

def single_pair_case(rng, kind: str) -> ScenarioConfig | None:
    """Random feasible single-pair scenario steered towards one dispatch case.

    ``kind`` picks the user-channel split over (d_x, d_y, d_z) and omega so
    that the case conditions hold: "case1" has beta1 > beta2 lambda2, "case2"
    sits on beta3 = beta2 lambda2 - beta1, "case3" above it, "case4" below.
    """
    nt = int(rng.integers(4, 17))
    nr = nt + int(rng.integers(0, 3))
    th = float(rng.uniform(-1.2, 1.2))
    sb = steering_bundle(nt, nr, th)
    basis = build_ortho_basis(sb.b.conj(), sb.b_dot.conj(), rng.standard_normal(nt) + 1j * rng.standard_normal(nt))
    n = sb.norms
    ratio = n["a_dot"] * n["b"] / (n["a"] * n["b_dot"])
    hz = 1.0
    if kind == "case1":
        hx, hy = rng.uniform(0, 0.5), rng.uniform(0, 0.5)
    else:
        hx = rng.uniform(0, 0.3)
        lo = max(0.0, 1 - (1 - hx) / ratio)
        if lo >= 1:
            return None
        hy = lo + (1 - lo) * rng.uniform(0.05, 0.95)
    ph = np.exp(1j * rng.uniform(0, 2 * np.pi, 3))
    h = 1e-5 * (math.sqrt(hx) * ph[0] * basis.d_x + math.sqrt(hy) * ph[1] * basis.d_y + math.sqrt(hz) * ph[2] * basis.d_z)
    P, s1 = 0.1, 1e-12

    def make(om, G):
        return ScenarioConfig(nt, nr, (Target(th, 100.0),), (CommUser(s1, G, "fixed", channel=h),), P, 1e-4, omega_rad_s=om)

    lam2 = (hz - hx) / (hz - hy)
    delta = n["a"] * n["b_dot"] * lam2 - n["a_dot"] * n["b"]
    b3 = n["a"] * n["b"]
    if kind == "case1":
        om = 10 ** rng.uniform(-1, 3)
    elif kind == "case2":
        om = math.sqrt(delta / b3)
    elif kind == "case3":
        om = math.sqrt(delta / b3 * 10 ** rng.uniform(0.01, 2))
    else:
        om = math.sqrt(delta / b3 * 10 ** rng.uniform(-3, -0.01))
    free = solve_single(make(om, 0.0))
    sc = free.scalarization
    u1, u2 = np.square(free.coefficients[:2])
    rec_lo = u1 * sc.hx + u2 * sc.hy
    frac = rng.uniform(0.02, 0.98) if kind != "case4" else rng.uniform(0.02, 0.5)
    rec = rec_lo + (sc.hz * P - rec_lo) * frac
    return make(om, math.log2(1 + rec / s1))


def _best_u2(sc, u1):
    """Largest feasible x2^2 for each x1^2 (the objective decreases in x2^2); NaN if none."""
    P = sc.p_t
    u1 = np.asarray(u1, dtype=float)
    top = P - u1
    rhs = sc.c0 - u1 * sc.hx - top * sc.hz  # need u2 (hy - hz) >= rhs
    slope = sc.hy - sc.hz
    with np.errstate(divide="ignore", invalid="ignore"):
        if slope < 0:
            u2 = np.minimum(top, rhs / slope)
            ok = u2 >= 0
        else:
            u2 = top
            ok = top * slope >= rhs
    return np.where(ok & (top >= 0), np.maximum(u2, 0.0), np.nan)


def grid_oracle(sc, resolution: float = 1e-4) -> float:
    """Minimum of the scalarized objective over the feasible power polygon.

    Grid over x1^2 at ``resolution * P`` with the optimal x2^2 per column,
    then bounded scalar refinement around the best grid point.
    """
    P = sc.p_t
    f = lambda u1, u2: 1 / (sc.beta1 * u1 + sc.beta2 * u2) + 1 / (sc.beta3 * u1)
    u1 = np.linspace(0, P, int(round(1 / resolution)) + 1)[1:]
    u2 = _best_u2(sc, u1)
    vals = np.where(np.isnan(u2), np.inf, f(u1, np.nan_to_num(u2)))
    i = int(np.argmin(vals))
    if not np.isfinite(vals[i]):
        return math.inf
    lo, hi = max(u1[i] - resolution * P, 1e-15 * P), min(u1[i] + resolution * P, P)

    def phi(x):
        v = _best_u2(sc, x)
        return 1e300 if np.isnan(v) else float(f(x, v))

    res = minimize_scalar(phi, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14 * P})
    return min(float(vals[i]), float(res.fun)) * sc.prefactor
