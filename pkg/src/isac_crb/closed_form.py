"""Closed-form optimal beamformer for one target and one user.

The beamformer lives in the span of three orthonormal directions: the sum beam
``d_x`` (parallel to the target illumination vector), the difference beam
``d_y`` (its angular derivative) and ``d_z`` (the part of the user channel
outside both). With power split ``u = (x1^2, x2^2, x3^2)`` the trace of the
CRB is

    f(u1, u2) = sigma^2 / (2 |alpha|^2) * (1 / (beta1 u1 + beta2 u2) + 1 / (beta3 u1)),

and the received user power is modelled per direction as
``u1 |h^H d_x|^2 + u2 |h^H d_y|^2 + u3 |h^H d_z|^2``. With both constraints
tight, ``u2 = lambda1 - lambda2 u1`` and the problem collapses to one variable
whose stationary points are the roots of the quadratic ``g1``; the four cases
below follow the sign of ``beta1 - beta2 lambda2`` and of
``beta3 - (beta2 lambda2 - beta1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EndfireDegenerateError, InfeasibleError, ValidationError
from .scenario import Beamformer, ScenarioConfig, sinr_and_rate, steering_bundle

CASES = (
    "Case1",
    "Case2",
    "Case3",
    "Case4a",
    "Case4b",
    "InfeasibleFallback",
    "RateInactive",
    "Segment",
)

CASE2_RTOL = 1e-9
NEG_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class OrthoBasis:
    d_x: np.ndarray
    d_y: np.ndarray
    d_z: np.ndarray
    h_proj: np.ndarray  # |h^H d_x|, |h^H d_y|, |h^H d_z|
    degenerate: bool = False

    @property
    def matrix(self) -> np.ndarray:
        return np.column_stack([self.d_x, self.d_y, self.d_z])


def build_ortho_basis(b, b_dot, h1, rtol: float = 1e-10) -> OrthoBasis:
    """Orthonormal (d_x, d_y, d_z) with d_x || b, d_y || b_dot, span containing h1.

    When h1 lies in span{b, b_dot} the residual vanishes; ``d_z`` is then any
    unit vector orthogonal to the first two and ``degenerate`` is set.
    """
    b = np.asarray(b, dtype=complex)
    b_dot = np.asarray(b_dot, dtype=complex)
    h1 = np.asarray(h1, dtype=complex)
    nb, nbd = np.linalg.norm(b), np.linalg.norm(b_dot)
    if nb == 0:
        raise ValidationError("steering vector is zero")
    if nbd <= 1e-12 * nb * b.size:
        raise EndfireDegenerateError("endfire degenerate: steering derivative vanishes")
    d_x = b / nb
    d_y = b_dot - np.vdot(d_x, b_dot) * d_x
    d_y /= np.linalg.norm(d_y)
    r = h1 - np.vdot(d_x, h1) * d_x - np.vdot(d_y, h1) * d_y
    nr = np.linalg.norm(r)
    degenerate = nr < rtol * np.linalg.norm(h1)
    if degenerate and b.size > 2:
        # deterministic completion: the coordinate axis least aligned with d_x, d_y
        E = np.eye(b.size, dtype=complex)
        R = E - np.outer(d_x, d_x.conj()) @ E - np.outer(d_y, d_y.conj()) @ E
        r = R[:, int(np.argmax(np.linalg.norm(R, axis=0)))]
        r = r - np.vdot(d_x, r) * d_x - np.vdot(d_y, r) * d_y
        nr = np.linalg.norm(r)
    # two antennas: span{b, b_dot} is the whole space, no third direction
    d_z = r / nr if b.size > 2 else np.zeros_like(r)
    proj = np.abs(np.array([np.vdot(h1, d) for d in (d_x, d_y, d_z)]))
    return OrthoBasis(d_x, d_y, d_z, proj, bool(degenerate))


def check_feasibility(h1, gamma_req: float, sigma1_sq: float, p_t: float) -> bool:
    """True iff the rate target is reachable with all power on the user."""
    need = (2.0 ** gamma_req - 1.0) * sigma1_sq
    have = float(np.vdot(h1, h1).real) * p_t
    return need <= have * (1.0 + 1e-12)


@dataclass(frozen=True)
class Scalarization:
    beta1: float
    beta2: float
    beta3: float
    hx: float  # |h^H d_x|^2
    hy: float
    hz: float
    c0: float  # (2^Gamma - 1) sigma1^2
    p_t: float
    prefactor: float  # sigma^2 / (2 |alpha|^2)

    @property
    def lambda1(self) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(np.divide(self.hz * self.p_t - self.c0, self.hz - self.hy))

    @property
    def lambda2(self) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(np.divide(self.hz - self.hx, self.hz - self.hy))

    @property
    def x1max_sq(self) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(np.divide(self.hz * self.p_t - self.c0, self.hz - self.hx))

    def objective(self, u1: float, u2: float) -> float:
        """Trace of the CRB for power split (u1, u2) on (d_x, d_y)."""
        s1 = self.beta1 * u1 + self.beta2 * u2
        s2 = self.beta3 * u1
        if s1 <= 0 or s2 <= 0:
            return math.inf
        return self.prefactor * (1.0 / s1 + 1.0 / s2)

    def received(self, u1: float, u2: float, u3: float) -> float:
        return u1 * self.hx + u2 * self.hy + u3 * self.hz

    def dispatch_applicable(self) -> bool:
        """lambda1, lambda2 and x1max are finite and positive."""
        top = max(self.hx, self.hy)
        return self.hz > top * (1.0 + 1e-12) and self.hz * self.p_t > self.c0


def scalarize(config: ScenarioConfig, basis: OrthoBasis | None = None) -> tuple[Scalarization, OrthoBasis]:
    _require_single(config)
    tgt, user = config.targets[0], config.users[0]
    sb = steering_bundle(config.n_tx, config.n_rx, tgt.angle_rad)
    if basis is None:
        basis = build_ortho_basis(sb.b.conj(), sb.b_dot.conj(), user.channel)
    n = sb.norms
    hx, hy, hz = basis.h_proj ** 2
    sc = Scalarization(
        beta1=n["a_dot"] * n["b"],
        beta2=n["a"] * n["b_dot"],
        beta3=config.omega ** 2 * n["a"] * n["b"],
        hx=float(hx),
        hy=float(hy),
        hz=float(hz),
        c0=user.sinr_threshold * user.noise_w,
        p_t=config.power_budget_w,
        prefactor=config.radar_noise_w / (2.0 * abs(tgt.alpha) ** 2),
    )
    return sc, basis


def scalarized_objective(scal: Scalarization, x1_sq: float, alpha_sq: float, sigma_sq: float) -> float:
    """One-variable objective along the active rate line, u2 = lambda1 - lambda2 u1."""
    if not x1_sq > 0:
        raise ValidationError("x1^2 must be > 0")
    q = scal.beta1 - scal.beta2 * scal.lambda2
    return sigma_sq / (2.0 * alpha_sq) * (
        1.0 / (scal.beta2 * scal.lambda1 + q * x1_sq) + 1.0 / (scal.beta3 * x1_sq)
    )


def g1_coefficients(scal: Scalarization) -> tuple[float, float, float]:
    """(c2, c1, c0) of g1(t) = c2 t^2 + c1 t + c0, the numerator of df1/dt."""
    delta = scal.beta2 * scal.lambda2 - scal.beta1
    b2l1 = scal.beta2 * scal.lambda1
    return (
        delta * (scal.beta3 - delta),
        2.0 * b2l1 * delta,
        -(b2l1 ** 2),
    )


def g1_roots(scal: Scalarization) -> np.ndarray:
    """Real roots of g1 in ascending order."""
    c2, c1, c0 = g1_coefficients(scal)
    scale = max(abs(c2), abs(c1), abs(c0))
    if abs(c2) <= 1e-14 * scale:
        return np.array([-c0 / c1]) if c1 != 0 else np.array([])
    roots = np.roots([c2, c1, c0])
    return np.sort(roots[np.abs(roots.imag) <= 1e-12 * np.abs(roots)].real)


# ---------------------------------------------------------------------------
# one-dimensional minimisation along a segment of the (u1, u2) plane
# ---------------------------------------------------------------------------

def _segment_minimum(sc: Scalarization, p0, p1) -> tuple[float, float]:
    """Exact minimiser of the convex objective on the segment p0 -> p1."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    d = p1 - p0
    a1 = sc.beta1 * p0[0] + sc.beta2 * p0[1]
    b1 = sc.beta1 * d[0] + sc.beta2 * d[1]
    a2 = sc.beta3 * p0[0]
    b2 = sc.beta3 * d[0]
    cands = [0.0, 1.0]
    # stationary point: b1 / L1^2 = -b2 / L2^2 with L1, L2 > 0
    if b1 * b2 < 0:
        den = math.sqrt(abs(b1)) * b2 - math.sqrt(abs(b2)) * b1
        if den != 0:
            s = (math.sqrt(abs(b2)) * a1 - math.sqrt(abs(b1)) * a2) / den
            if 0.0 < s < 1.0:
                cands.append(s)
    best = min(cands, key=lambda s: (sc.objective(*(p0 + s * d)), -s))
    u = p0 + best * d
    return float(u[0]), float(u[1])


def _sensing_split(sc: Scalarization, power: float) -> tuple[float, float]:
    return _segment_minimum(sc, (0.0, power), (power, 0.0))


def _active_segment(sc: Scalarization):
    """Intersection of the tight-rate line with {u1, u2 >= 0, u1 + u2 <= P}."""
    P = sc.p_t
    verts = [np.array([0.0, 0.0]), np.array([P, 0.0]), np.array([0.0, P])]

    def r(u):
        return sc.received(u[0], u[1], P - u[0] - u[1]) - sc.c0

    pts = []
    for i in range(3):
        va, vb = verts[i], verts[(i + 1) % 3]
        ra, rb = r(va), r(vb)
        if ra == 0:
            pts.append(va)
        if ra * rb < 0:
            pts.append(va + (ra / (ra - rb)) * (vb - va))
    uniq = []
    for p in pts:
        if not any(np.allclose(p, q, rtol=0, atol=1e-15 * P) for q in uniq):
            uniq.append(p)
    if not uniq:
        return None
    if len(uniq) == 1:
        return uniq[0], uniq[0]
    return uniq[0], uniq[-1]


def _case_dispatch(sc: Scalarization) -> tuple[float, str]:
    xmax = sc.x1max_sq
    q = sc.beta1 - sc.beta2 * sc.lambda2
    if q >= 0:
        return xmax, "Case1"
    delta = -q
    b2l1 = sc.beta2 * sc.lambda1
    if abs(sc.beta3 - delta) <= CASE2_RTOL * max(sc.beta3, delta):
        t0 = b2l1 / (2.0 * delta)
        return min(t0, xmax), "Case2"
    # rationalised root forms; algebraically identical to
    # b2l1 (+-sqrt(delta beta3) - delta) / (delta (beta3 - delta))
    sd, s3 = math.sqrt(delta), math.sqrt(sc.beta3)
    left = b2l1 / (sd * (s3 + sd))
    if sc.beta3 > delta:
        return min(left, xmax), "Case3"
    right = b2l1 / (sd * (sd - s3))
    if xmax <= left:
        return xmax, "Case4a"
    if xmax <= right:
        return left, "Case4b"
    f_left = scalarized_objective(sc, left, 1.0, 2.0 * sc.prefactor)
    f_max = scalarized_objective(sc, xmax, 1.0, 2.0 * sc.prefactor)
    return (xmax, "Case4a") if f_max <= f_left else (left, "Case4b")


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ClosedFormSolution:
    w1: np.ndarray
    coefficients: tuple[float, float, float]
    case_id: str
    objective: float
    rate_model: float  # rate under the per-direction received-power model
    rate: float  # actual log2(1 + |h^H w|^2 / sigma1^2)
    basis: OrthoBasis
    scalarization: Scalarization

    def beamformer(self, config: ScenarioConfig) -> Beamformer:
        return Beamformer.from_matrix(self.w1[:, None], config.users)

    def to_row(self) -> dict:
        x1, x2, x3 = self.coefficients
        return {
            "case_id": self.case_id,
            "x1": x1,
            "x2": x2,
            "x3": x3,
            "objective": self.objective,
            "rate_model": self.rate_model,
            "rate": self.rate,
        }


def _require_single(config: ScenarioConfig):
    if config.n_targets != 1 or config.n_users != 1:
        raise ValidationError("closed form needs exactly one target and one user")


def _assemble(basis: OrthoBasis, h: np.ndarray, u1: float, u2: float, u3: float) -> np.ndarray:
    x1, x2, x3 = math.sqrt(u1), math.sqrt(u2), math.sqrt(u3)
    px, py = np.vdot(h, basis.d_x), np.vdot(h, basis.d_y)
    # sign of x2 and a common phase on the (d_x, d_y) part make every cross
    # term of |h^H w|^2 non-negative; b^T w and b_dot^T w stay co-phased, so
    # the theta-tau Fisher term remains zero
    sgn = -1.0 if (np.conj(px) * py).real < 0 else 1.0
    inner = x1 * px + sgn * x2 * py
    phase = np.exp(-1j * np.angle(inner)) if abs(inner) > 0 else 1.0
    return phase * (x1 * basis.d_x + sgn * x2 * basis.d_y) + x3 * basis.d_z


def solve_single(config: ScenarioConfig) -> ClosedFormSolution:
    """Optimal w1 for the single-target, single-user problem."""
    _require_single(config)
    user = config.users[0]
    h = user.channel
    sc, basis = scalarize(config)
    P = sc.p_t

    if not check_feasibility(h, user.rate_threshold_bpshz, user.noise_w, P):
        u1, u2 = _sensing_split(sc, P)
        u3, case = 0.0, "InfeasibleFallback"
    else:
        u1, u2 = _sensing_split(sc, P)
        if sc.received(u1, u2, 0.0) >= sc.c0:
            u3, case = 0.0, "RateInactive"
        else:
            case = None
            if sc.dispatch_applicable():
                t, c = _case_dispatch(sc)
                v2 = sc.lambda1 - sc.lambda2 * t
                v3 = P - t - v2
                # the tight-rate line can leave the power triangle for small x1
                # (|h^H d_y| > |h^H d_x|, low rate); the dispatch is then only
                # trusted when its answer is inside
                if min(v2, v3) >= -NEG_TOL * P:
                    u1, u2, u3, case = t, v2, v3, c
        if case is None:
            seg = _active_segment(sc)
            if seg is None:
                raise InfeasibleError(
                    "rate threshold unreachable under the per-direction received-power model",
                    violated=[0],
                )
            u1, u2 = _segment_minimum(sc, *seg)
            u3, case = P - u1 - u2, "Segment"

    for name, v in (("x1^2", u1), ("x2^2", u2), ("x3^2", u3)):
        if v < -NEG_TOL * P:
            raise RuntimeError(f"case dispatch produced negative {name} = {v:.3e} ({case})")
    u1, u2, u3 = max(u1, 0.0), max(u2, 0.0), max(u3, 0.0)

    w1 = _assemble(basis, h, u1, u2, u3)
    _, rate = sinr_and_rate(config.users, w1[:, None])
    rate_model = math.log2(1.0 + sc.received(u1, u2, u3) / user.noise_w)
    return ClosedFormSolution(
        w1=w1,
        coefficients=(math.sqrt(u1), math.sqrt(u2), math.sqrt(u3)),
        case_id=case,
        objective=sc.objective(u1, u2),
        rate_model=rate_model,
        rate=float(rate[0]),
        basis=basis,
        scalarization=sc,
    )
