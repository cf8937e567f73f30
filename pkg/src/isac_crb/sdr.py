"""Semidefinite relaxation of CRB-minimising multi-user beamforming.

With ``w_v = vec(W)`` and ``W_v = w_v w_v^H`` every Fisher entry is linear,
``[F]_mn = (2/sigma^2) Re Tr(Phi_mn W_v)`` with
``Phi_mn = (s* s^T) kron D_m^H D_n``. Minimising ``sum_q t_q`` subject to
``[[F, e_q], [e_q^T, t_q]] >= 0`` for every parameter q, linearised SINR
constraints and the power budget, and dropping rank(W_v) = 1, gives an SDP.

The SDP is solved in a subspace ``W_v = U Lam U^H``: the full space, the
per-user span of the (conjugated) steering vectors and their derivatives
(``compact`` mode), or that span plus every user channel (``augmented`` mode,
lossless). A rank-one beamformer is recovered from the principal eigenvector
and Gaussian randomisation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import sdp
from .errors import ConvergenceError, InfeasibleError, UnidentifiableError, ValidationError
from .fim import CrbReport, crb_of, crb_report, derivative_matrices
from .scenario import Beamformer, ScenarioConfig, sinr_and_rate, steering_derivative, steering_vector
from .sdp import SolverOptions

logger = logging.getLogger("isac_crb.sdr")

REDUCTION_MODES = ("full", "compact", "augmented")
INTERFERENCE_MODELS = ("incoherent", "coherent")
WEIGHT_FLOOR = 1e-8
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SdrProblem:
    config: ScenarioConfig
    dim: int  # N_t K
    phi: np.ndarray  # (2Q, 2Q, N, N) Hermitian parts of Phi_mn
    fim_scale: float  # 2 / sigma^2
    g: np.ndarray  # (K, N): g_k = e_k kron h_k
    L: np.ndarray  # (K, N, N) interference matrices
    sinr_thresholds: np.ndarray
    noise: np.ndarray
    power_budget: float
    include_sinr: bool = True
    basis: np.ndarray | None = None  # N x r, orthonormal columns
    basis_label: str = "full"

    @property
    def n_params(self) -> int:
        return self.phi.shape[0]

    @property
    def reduced_dim(self) -> int:
        return self.dim if self.basis is None else self.basis.shape[1]

    @property
    def lmi_templates(self) -> list[tuple[int, int]]:
        """(q, size) of the Schur blocks [[F, e_q], [e_q^T, t_q]]."""
        p = self.n_params
        return [(q, p + 1) for q in range(p)]

    def fim(self, w_v_cov: np.ndarray) -> np.ndarray:
        """Fisher matrix for covariance W_v (N x N)."""
        F = self.fim_scale * np.einsum("mnij,ji->mn", self.phi, w_v_cov).real
        return 0.5 * (F + F.T)


def build_sdr(
    config: ScenarioConfig,
    include_sinr: bool = True,
    interference: str = "incoherent",
) -> SdrProblem:
    """Assemble coefficient maps and constraints of the relaxed problem.

    ``interference="incoherent"`` uses ``L_k = diag(1 - e_k) kron h_k h_k^H``,
    whose trace against ``w_v w_v^H`` is the SINR denominator
    ``sum_{l != k} |h_k^H w_l|^2``; ``"coherent"`` uses
    ``(1 - e_k)(1 - e_k)^T kron h_k h_k^H`` (interference summed in amplitude).
    """
    if config.signal_correlation != "coherent":
        raise ValidationError("SDR requires the coherent signal model", "signal_correlation")
    if interference not in INTERFERENCE_MODELS:
        raise ValidationError(f"expected one of {INTERFERENCE_MODELS}", "interference")
    K, Nt = config.n_users, config.n_tx
    N = Nt * K
    D = derivative_matrices(config)
    P = len(D)
    ones = np.ones((K, K))
    phi = np.empty((P, P, N, N), dtype=complex)
    for m in range(P):
        for n in range(m, P):
            G = np.kron(ones, D[m].conj().T @ D[n])
            Hm = 0.5 * (G + G.conj().T)
            phi[m, n] = Hm
            phi[n, m] = Hm
    H = config.channels
    g = np.zeros((K, N), dtype=complex)
    L = np.zeros((K, N, N), dtype=complex)
    for k in range(K):
        e = np.zeros(K)
        e[k] = 1.0
        g[k] = np.kron(e, H[:, k])
        hh = np.outer(H[:, k], H[:, k].conj())
        mask = np.diag(1.0 - e) if interference == "incoherent" else np.outer(1.0 - e, 1.0 - e)
        L[k] = np.kron(mask, hh)
    return SdrProblem(
        config=config,
        dim=N,
        phi=phi,
        fim_scale=2.0 / config.radar_noise_w,
        g=g,
        L=L,
        sinr_thresholds=np.array([u.sinr_threshold for u in config.users]),
        noise=np.array([u.noise_w for u in config.users]),
        power_budget=config.power_budget_w,
        include_sinr=include_sinr,
    )


def _orth(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    if r < M.shape[1]:
        logger.info("basis rank %d of %d columns after orthonormalisation", r, M.shape[1])
    return U[:, :r]


def subspace_basis(config: ScenarioConfig, mode: str) -> np.ndarray:
    """Orthonormal N_t K x r basis for ``mode`` in {full, compact, augmented}."""
    if mode not in REDUCTION_MODES:
        raise ValidationError(f"expected one of {REDUCTION_MODES}", "mode")
    K, Nt = config.n_users, config.n_tx
    if mode == "full":
        return np.eye(Nt * K, dtype=complex)
    th = config.thetas
    B = np.column_stack([steering_vector(Nt, t) for t in th])
    Bd = np.column_stack([steering_derivative(Nt, t) for t in th])
    cols = [B.conj(), Bd.conj()]
    if mode == "augmented":
        cols.append(config.channels)
    return np.kron(np.eye(K), _orth(np.hstack(cols)))


def reduce_with_basis(problem: SdrProblem, mode: str | np.ndarray) -> SdrProblem:
    """Restrict W_v = U Lam U^H; ``mode`` is a mode name or an explicit basis."""
    if isinstance(mode, str):
        U, label = subspace_basis(problem.config, mode), mode
    else:
        U = np.asarray(mode, dtype=complex)
        label = "custom"
        if U.ndim != 2 or U.shape[0] != problem.dim:
            raise ValidationError(f"basis must have {problem.dim} rows")
        if not np.allclose(U.conj().T @ U, np.eye(U.shape[1]), atol=1e-10):
            raise ValidationError("basis columns must be orthonormal")
    return replace(problem, basis=U, basis_label=label)


def subspace_residual(w_v_cov: np.ndarray, basis: np.ndarray) -> float:
    """||(I - U U^H) W_v||_F / ||W_v||_F."""
    proj = w_v_cov - basis @ (basis.conj().T @ w_v_cov)
    return float(np.linalg.norm(proj) / np.linalg.norm(w_v_cov))


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SdpSolution:
    problem: SdrProblem
    status: str
    w_v_opt: np.ndarray
    t_opt: np.ndarray
    objective: float  # sum_q t_q
    trace_crb: float  # Tr(F(W_v)^-1)
    duality_gap: float
    rank_profile: np.ndarray
    iterations: int
    kkt: dict
    weights: np.ndarray
    extracted: Beamformer | None = None
    extraction_loss: float | None = None
    extraction_source: str | None = None
    subspace_residual: float | None = None
    history: list = field(default_factory=list)

    @property
    def rank_ratio(self) -> float:
        r = self.rank_profile
        return float(r[1] / r[0]) if r.size > 1 and r[0] > 0 else 0.0

    def crb(self) -> CrbReport:
        return crb_report(self.problem.fim(self.w_v_opt), self.problem.config)

    def to_row(self) -> dict:
        row = {
            "basis": self.problem.basis_label,
            "status": self.status,
            "objective": self.objective,
            "trace_crb": self.trace_crb,
            "duality_gap": self.duality_gap,
            "iterations": self.iterations,
            "rank_ratio": self.rank_ratio,
        }
        if self.extraction_loss is not None:
            row["extraction_loss"] = self.extraction_loss
        if self.subspace_residual is not None:
            row["subspace_residual"] = self.subspace_residual
        return row


def _embed(H: np.ndarray) -> np.ndarray:
    """Real symmetric embedding [[Re, -Im], [Im, Re]] of a Hermitian matrix."""
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


def _unembed(Y: np.ndarray) -> np.ndarray:
    r = Y.shape[0] // 2
    Y11, Y12, Y21, Y22 = Y[:r, :r], Y[:r, r:], Y[r:, :r], Y[r:, r:]
    Lam = 0.5 * ((Y11 + Y22) + 1j * (Y21 - Y12))
    return 0.5 * (Lam + Lam.conj().T)


def _precheck(problem: SdrProblem):
    if not problem.include_sinr:
        return
    cap = problem.power_budget * np.sum(np.abs(problem.g) ** 2, axis=1)
    need = problem.sinr_thresholds * problem.noise
    bad = [int(k) for k in np.flatnonzero(need > cap * (1.0 + 1e-12))]
    if bad:
        raise InfeasibleError(
            f"rate thresholds of users {bad} exceed the single-user capacity bound", violated=bad
        )


def build_sdp_data(problem: SdrProblem):
    """Normalised real block SDP; returns (data, scaling info)."""
    U = problem.basis if problem.basis is not None else np.eye(problem.dim, dtype=complex)
    r = U.shape[1]
    P = problem.n_params
    PT = problem.power_budget
    c = problem.fim_scale
    Uh = U.conj().T
    phi_r = np.einsum("ai,mnij,jb->mnab", Uh, problem.phi, U, optimize=True)
    # reference Fisher diagonal for the isotropic covariance inside the basis
    f_ref = np.array([c * PT / r * np.trace(phi_r[q, q]).real for q in range(P)])
    if np.any(f_ref <= 0):
        bad = np.flatnonzero(f_ref <= 0)
        null = np.zeros((P, bad.size))
        null[bad, np.arange(bad.size)] = 1.0
        raise UnidentifiableError("unidentifiable parameters: basis carries no information", null)
    d = 1.0 / np.sqrt(f_ref)
    wts = d ** 2 / np.max(d ** 2)
    wts = np.maximum(wts, WEIGHT_FLOOR)

    b = sdp.SdpBuilder()
    yb = b.add_block("s", 2 * r)
    zb = [b.add_block("s", P + 1) for _ in range(P)]
    sinr_users = []
    if problem.include_sinr:
        sinr_users = [k for k in range(problem.g.shape[0]) if problem.sinr_thresholds[k] > 0]
    lb = b.add_block("l", len(sinr_users) + 1)
    for q, z in enumerate(zb):
        Cz = np.zeros((P + 1, P + 1))
        Cz[P, P] = wts[q]
        b.set_cost(z, Cz)
    for i in range(P):
        for j in range(i, P):
            E = _embed(phi_r[i, j]) * (0.5 * c * PT * d[i] * d[j])
            b.add_constraint({zb[0]: sdp.sym_unit(P + 1, i, j), yb: -E}, 0.0, f"fim[{i},{j}]")
    for q in range(1, P):
        for i in range(P):
            for j in range(i, P):
                E = sdp.sym_unit(P + 1, i, j)
                b.add_constraint({zb[q]: E, zb[0]: -E}, 0.0, f"link{q}[{i},{j}]")
    for q in range(P):
        for i in range(P):
            b.add_constraint({zb[q]: sdp.sym_unit(P + 1, i, P)}, float(i == q), f"unit{q}[{i}]")
    nl = len(sinr_users) + 1
    for row, k in enumerate(sinr_users):
        gam = problem.sinr_thresholds[k]
        G = np.outer(problem.g[k], problem.g[k].conj()) - gam * problem.L[k]
        hn = float(np.sum(np.abs(problem.g[k]) ** 2))
        Gr = Uh @ G @ U
        ev = np.zeros(nl)
        ev[row] = -1.0
        b.add_constraint(
            {yb: 0.5 * _embed(0.5 * (Gr + Gr.conj().T)) / hn, lb: ev},
            gam * problem.noise[k] / (PT * hn),
            f"sinr[{k}]",
        )
    ev = np.zeros(nl)
    ev[-1] = 1.0
    b.add_constraint({yb: 0.5 * np.eye(2 * r), lb: ev}, 1.0, "power")
    info = {"U": U, "d": d, "weights": wts, "sinr_users": sinr_users, "r": r}
    return b.finalize(), info


def solve_sdp(problem: SdrProblem, opts: SolverOptions | None = None, raise_on_failure: bool = True) -> SdpSolution:
    """Solve the relaxation; the returned W_v lives in the full N_t K space."""
    opts = opts or SolverOptions()
    _precheck(problem)
    data, info = build_sdp_data(problem)
    res = sdp.solve(data, opts)
    if res.status == "primal_infeasible":
        rows = [i for i, nm in enumerate(data.names) if nm.startswith("sinr")]
        y = np.abs(res.y[rows]) if rows else np.zeros(0)
        viol = [info["sinr_users"][i] for i in np.flatnonzero(y > 1e-6 * y.max())] if y.size else []
        raise InfeasibleError(f"SINR constraints cannot be met (users {viol})", violated=viol)
    P = problem.n_params
    Y = res.X[0]
    Lam = problem.power_budget * _unembed(Y)
    U = info["U"]
    Wv = U @ Lam @ U.conj().T
    Wv = 0.5 * (Wv + Wv.conj().T)
    t_hat = np.array([res.X[1 + q][P, P] for q in range(P)])
    t = info["d"] ** 2 * t_hat
    ev = np.linalg.eigvalsh(Wv)[::-1]
    try:
        trace = crb_report(problem.fim(Wv), problem.config).trace
    except UnidentifiableError:
        trace = np.inf
    sol = SdpSolution(
        problem=problem,
        status=res.status,
        w_v_opt=Wv,
        t_opt=t,
        objective=float(np.sum(t)),
        trace_crb=float(trace),
        duality_gap=res.relative_gap,
        rank_profile=np.clip(ev, 0.0, None),
        iterations=res.iterations,
        kkt=sdp.kkt_residuals(data, res),
        weights=info["weights"],
        history=res.history,
    )
    if not res.optimal and raise_on_failure:
        raise ConvergenceError(f"SDP solver stopped with status {res.status}", partial=sol)
    return sol


def sensing_only_bound(config: ScenarioConfig, opts: SolverOptions | None = None, mode: str = "augmented") -> SdpSolution:
    """CRB optimum with every rate constraint dropped."""
    prob = build_sdr(config, include_sinr=False)
    if mode != "full":
        prob = reduce_with_basis(prob, mode)
    return solve_sdp(prob, opts)


# ---------------------------------------------------------------------------
# rank-one recovery
# ---------------------------------------------------------------------------

def _unstack(w_v: np.ndarray, n_tx: int) -> np.ndarray:
    return w_v.reshape(-1, n_tx).T  # column k = w_v[k N_t:(k+1) N_t]


def _candidate_trace(config: ScenarioConfig, W: np.ndarray) -> float:
    try:
        return crb_of(config, W).trace
    except UnidentifiableError:
        return np.inf


def extract_beamformers(solution: SdpSolution, config: ScenarioConfig | None = None, opts: SolverOptions | None = None) -> SdpSolution:
    """Principal eigenvector plus Gaussian randomisation, each scaled to full power.

    Candidates must meet every rate threshold within 1e-6; the feasible one
    with the smallest Tr(C_CRB) wins (ties go to the eigenvector, then the
    lowest draw index). Returns a copy of ``solution`` with the extraction
    fields filled in.
    """
    opts = opts or SolverOptions()
    config = config or solution.problem.config
    Wv = solution.w_v_opt
    PT = config.power_budget_w
    req = np.array([u.rate_threshold_bpshz for u in config.users]) if solution.problem.include_sinr else None
    vals, vecs = np.linalg.eigh(Wv)
    vals = np.clip(vals, 0.0, None)
    root = vecs * np.sqrt(vals)

    U = solution.problem.basis

    def score(w_v):
        if U is not None:
            w_v = U @ (U.conj().T @ w_v)  # drop eigen-solver noise outside the solve subspace
        nrm = np.linalg.norm(w_v)
        if nrm == 0:
            return np.inf, -np.inf, None
        W = _unstack(w_v * np.sqrt(PT) / nrm, config.n_tx)
        _, rate = sinr_and_rate(config.users, W)
        margin = float(np.min(rate - req)) if req is not None else 0.0
        return _candidate_trace(config, W), margin, W

    best = None
    best_infeasible = (-np.inf, None)
    cands = [("eigenvector", vecs[:, -1])]
    n = Wv.shape[0]
    for i in range(opts.randomization_count):
        rng = np.random.default_rng([opts.rng_seed, i])
        z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
        cands.append((f"draw{i}", root @ z))
    for label, w_v in cands:
        tr, margin, W = score(w_v)
        if W is None:
            continue
        if margin >= -1e-6:
            if best is None or tr < best[0]:
                best = (tr, label, W)
        elif margin > best_infeasible[0]:
            best_infeasible = (margin, label)
    if best is None:
        raise InfeasibleError(
            f"no rate-feasible candidate among {len(cands)} (best rate margin {best_infeasible[0]:.3e}"
            f" from {best_infeasible[1]})",
            violated=[],
        )
    tr, label, W = best
    bf = Beamformer.from_matrix(W, config.users)
    return replace(
        solution,
        extracted=bf,
        extraction_loss=float(tr / solution.objective),
        extraction_source=label,
    )


def optimize(
    config: ScenarioConfig,
    opts: SolverOptions | None = None,
    mode: str = "augmented",
    interference: str = "incoherent",
    extract: bool = True,
) -> SdpSolution:
    """Build, reduce, solve and (optionally) extract in one call."""
    prob = build_sdr(config, interference=interference)
    if mode != "full":
        prob = reduce_with_basis(prob, mode)
    sol = solve_sdp(prob, opts)
    return extract_beamformers(sol, config, opts) if extract else sol
