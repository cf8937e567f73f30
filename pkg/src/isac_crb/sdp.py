"""Small dense primal-dual interior-point solver for block SDPs.

Primal / dual pair in standard block form::

    min <C, X>  s.t.  <A_i, X> = b_i,  X in K
    max b^T y   s.t.  sum_i y_i A_i + S = C,  S in K

where K is a product of symmetric PSD blocks ("s") and nonnegative orthants
("l"). Search directions are HKM with a Mehrotra predictor-corrector. The
implementation is dense and aimed at problems with a few hundred constraints
and blocks up to ~100 rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

logger = logging.getLogger("isac_crb.sdp")

#: a stalled run whose residuals are within this factor of tolerance is accepted
NEAR_OPTIMAL_FACTOR = 1e3


@dataclass
class SolverOptions:
    max_iterations: int = 100
    barrier_reduction_factor: float = 0.98  # fraction of the step to the boundary
    duality_gap_tol: float = 1e-9
    feasibility_tol: float = 1e-9
    infeasibility_tol: float = 1e-8
    randomization_count: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.barrier_reduction_factor < 1:
            raise ValueError("barrier_reduction_factor must be in (0, 1)")
        for name in ("duality_gap_tol", "feasibility_tol", "infeasibility_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.randomization_count < 1:
            raise ValueError("randomization_count must be >= 1")

    def as_dict(self) -> dict:
        return {
            "max_iterations": self.max_iterations,
            "barrier_reduction_factor": self.barrier_reduction_factor,
            "duality_gap_tol": self.duality_gap_tol,
            "feasibility_tol": self.feasibility_tol,
            "randomization_count": self.randomization_count,
            "rng_seed": self.rng_seed,
        }


# ---------------------------------------------------------------------------
# problem data
# ---------------------------------------------------------------------------

@dataclass
class _Block:
    kind: str  # "s" or "l"
    n: int
    C: np.ndarray
    rows: np.ndarray  # constraint indices touching this block
    A: np.ndarray  # (len(rows), n, n) or (len(rows), n)


class SdpProblemData:
    """Finalized problem; build with :class:`SdpBuilder`."""

    def __init__(self, blocks: list[_Block], b: np.ndarray, names: list[str]):
        self.blocks = blocks
        self.b = b
        self.names = names

    @property
    def m(self) -> int:
        return self.b.size

    def apply(self, X: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for blk, x in zip(self.blocks, X):
            if blk.rows.size == 0:
                continue
            if blk.kind == "s":
                out[blk.rows] += np.tensordot(blk.A, x, axes=([1, 2], [0, 1]))
            else:
                out[blk.rows] += blk.A @ x
        return out

    def adjoint(self, y: np.ndarray) -> list[np.ndarray]:
        out = []
        for blk in self.blocks:
            yb = y[blk.rows]
            if blk.kind == "s":
                out.append(np.tensordot(yb, blk.A, axes=(0, 0)) if yb.size else np.zeros((blk.n, blk.n)))
            else:
                out.append(yb @ blk.A if yb.size else np.zeros(blk.n))
        return out

    def objective(self, X: list[np.ndarray]) -> float:
        return float(sum(_inner(blk.C, x) for blk, x in zip(self.blocks, X)))


class SdpBuilder:
    """Incremental construction of block SDP data."""

    def __init__(self):
        self._blocks: list[tuple[str, int]] = []
        self._C: list[np.ndarray] = []
        self._entries: list[dict[int, np.ndarray]] = []
        self._b: list[float] = []
        self._names: list[str] = []

    def add_block(self, kind: str, n: int) -> int:
        if kind not in ("s", "l") or n < 1:
            raise ValueError("block kind must be 's' or 'l' with n >= 1")
        self._blocks.append((kind, n))
        self._C.append(np.zeros((n, n)) if kind == "s" else np.zeros(n))
        self._entries.append({})
        return len(self._blocks) - 1

    def set_cost(self, block: int, C: np.ndarray):
        C = np.array(C, dtype=float)
        if C.shape != self._C[block].shape:
            raise ValueError(f"cost shape {C.shape}, expected {self._C[block].shape}")
        self._C[block] = C

    def add_constraint(self, terms: dict[int, np.ndarray], rhs: float, name: str = "") -> int:
        """Append ``sum_blocks <terms[block], X_block> = rhs``; matrices are symmetrised."""
        i = len(self._b)
        for blk, mat in terms.items():
            kind, n = self._blocks[blk]
            mat = np.asarray(mat, dtype=float)
            if mat.shape != ((n, n) if kind == "s" else (n,)):
                raise ValueError(f"constraint {i}: block {blk} term has shape {mat.shape}")
            if kind == "s":
                mat = 0.5 * (mat + mat.T)
            self._entries[blk][i] = mat
        self._b.append(float(rhs))
        self._names.append(name or f"c{i}")
        return i

    def finalize(self) -> SdpProblemData:
        blocks = []
        for (kind, n), C, ent in zip(self._blocks, self._C, self._entries):
            rows = np.array(sorted(ent), dtype=int)
            shape = (rows.size, n, n) if kind == "s" else (rows.size, n)
            A = np.zeros(shape)
            for r, i in enumerate(rows):
                A[r] = ent[i]
            blocks.append(_Block(kind, n, C, rows, A))
        return SdpProblemData(blocks, np.array(self._b), list(self._names))


def sym_unit(n: int, i: int, j: int) -> np.ndarray:
    """Matrix E with <E, X> = X[i, j] for symmetric X."""
    E = np.zeros((n, n))
    if i == j:
        E[i, i] = 1.0
    else:
        E[i, j] = E[j, i] = 0.5
    return E


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

@dataclass
class SdpResult:
    # optimal | near_optimal | primal_infeasible | dual_infeasible | max_iterations | numerical
    status: str
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    relative_gap: float
    primal_infeasibility: float
    dual_infeasibility: float
    iterations: int
    history: list[dict] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status in ("optimal", "near_optimal")


def _inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b))


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _max_step(blk_kind: str, x: np.ndarray, dx: np.ndarray, chol=None) -> float:
    """Largest alpha with x + alpha dx in the cone (inf if unbounded)."""
    if blk_kind == "l":
        neg = dx < 0
        return float(np.min(-x[neg] / dx[neg])) if np.any(neg) else np.inf
    L = chol if chol is not None else np.linalg.cholesky(x)
    T = sla.solve_triangular(L, dx, lower=True)
    T = sla.solve_triangular(L, T.T, lower=True)
    lam = np.linalg.eigvalsh(_sym(T))[0]
    return -1.0 / lam if lam < 0 else np.inf


def _norm(parts) -> float:
    return float(np.sqrt(sum(np.sum(p * p) for p in parts)))


def solve(data: SdpProblemData, opts: SolverOptions | None = None) -> SdpResult:
    """Primal-dual path following; deterministic for fixed data and options."""
    opts = opts or SolverOptions()
    blocks, b, m = data.blocks, data.b, data.m
    C = [blk.C for blk in blocks]
    normC = 1.0 + _norm(C)
    normb = 1.0 + float(np.linalg.norm(b))

    # initial point in the style of SDPT3
    X, S = [], []
    for blk in blocks:
        n = blk.n
        an = np.array([np.linalg.norm(a) for a in blk.A]) if blk.rows.size else np.zeros(1)
        xi = max(10.0, np.sqrt(n), n * np.max((1.0 + np.abs(b[blk.rows])) / (1.0 + an)) if blk.rows.size else 0.0)
        eta = max(10.0, np.sqrt(n), float(np.max(an, initial=0.0)), float(np.linalg.norm(blk.C)))
        if blk.kind == "s":
            X.append(xi * np.eye(n))
            S.append(eta * np.eye(n))
        else:
            X.append(xi * np.ones(n))
            S.append(eta * np.ones(n))
    y = np.zeros(m)
    nu = sum(blk.n for blk in blocks)

    history: list[dict] = []
    status = "max_iterations"
    it = 0
    for it in range(1, opts.max_iterations + 1):
        ATy = data.adjoint(y)
        Rp = b - data.apply(X)
        Rd = [c - s - a for c, s, a in zip(C, S, ATy)]
        pobj = data.objective(X)
        dobj = float(b @ y)
        mu = sum(_inner(x, s) for x, s in zip(X, S)) / nu
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        pinf = float(np.linalg.norm(Rp)) / normb
        dinf = _norm(Rd) / normC
        history.append({"iter": it - 1, "pobj": pobj, "dobj": dobj, "gap": gap, "pinf": pinf, "dinf": dinf, "mu": mu})
        logger.debug("it %3d pobj %+.10e dobj %+.10e gap %.2e pinf %.2e dinf %.2e", it - 1, pobj, dobj, gap, pinf, dinf)
        if gap <= opts.duality_gap_tol and pinf <= opts.feasibility_tol and dinf <= opts.feasibility_tol:
            status = "optimal"
            break
        # infeasibility certificates
        if dobj > 0:
            ray = _norm([s + a for s, a in zip(S, ATy)]) / dobj
            if ray <= opts.infeasibility_tol:
                status = "primal_infeasible"
                break
        if pobj < 0:
            ray = float(np.linalg.norm(data.apply(X))) / -pobj
            if ray <= opts.infeasibility_tol:
                status = "dual_infeasible"
                break

        try:
            chX, Sinv = [], []
            for blk, x, s in zip(blocks, X, S):
                if blk.kind == "s":
                    chX.append(np.linalg.cholesky(x))
                    Ls = np.linalg.cholesky(s)
                    Li = sla.solve_triangular(Ls, np.eye(blk.n), lower=True)
                    Sinv.append(Li.T @ Li)
                else:
                    chX.append(None)
                    Sinv.append(1.0 / s)
            # Schur complement M_ij = sum_blocks <A_i, X A_j S^-1>
            M = np.zeros((m, m))
            for blk, x, si in zip(blocks, X, Sinv):
                if blk.rows.size == 0:
                    continue
                r = blk.rows
                if blk.kind == "s":
                    P = np.matmul(np.matmul(x, blk.A), si)
                    Mb = blk.A.reshape(r.size, -1) @ P.reshape(r.size, -1).T
                else:
                    Mb = (blk.A * (x * si)) @ blk.A.T
                M[np.ix_(r, r)] += Mb
            M = _sym(M)
            cho = sla.cho_factor(M, lower=True)
        except np.linalg.LinAlgError:
            status = "numerical"
            logger.warning("factorisation failed at iteration %d", it)
            break

        def direction(target):
            # target[j]: right-hand side of the complementarity row per block
            XRdSi = []
            for blk, x, rd, si in zip(blocks, X, Rd, Sinv):
                XRdSi.append(x @ rd @ si if blk.kind == "s" else x * rd * si)
            rhs = Rp - data.apply(target) + data.apply(XRdSi)
            dy = sla.cho_solve(cho, rhs)
            ATdy = data.adjoint(dy)
            dS = [rd - a for rd, a in zip(Rd, ATdy)]
            dX = []
            for blk, x, ds, si, t in zip(blocks, X, dS, Sinv, target):
                if blk.kind == "s":
                    dX.append(_sym(t - x @ ds @ si))
                else:
                    dX.append(t - x * ds * si)
            return dX, dy, dS

        def steps(dX, dS):
            ap = min([_max_step(blk.kind, x, d, c) for blk, x, d, c in zip(blocks, X, dX, chX)] + [np.inf])
            chS = [np.linalg.cholesky(s) if blk.kind == "s" else None for blk, s in zip(blocks, S)]
            ad = min([_max_step(blk.kind, s, d, c) for blk, s, d, c in zip(blocks, S, dS, chS)] + [np.inf])
            return ap, ad

        # predictor
        tgt = [-x for x in X]
        dXp, dyp, dSp = direction(tgt)
        ap, ad = steps(dXp, dSp)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = sum(_inner(x + ap * dx, s + ad * ds) for x, dx, s, ds in zip(X, dXp, S, dSp)) / nu
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        # corrector
        tgt = []
        for blk, x, si, dx, ds in zip(blocks, X, Sinv, dXp, dSp):
            if blk.kind == "s":
                tgt.append(sigma * mu * si - x - dx @ ds @ si)
            else:
                tgt.append(sigma * mu * si - x - dx * ds * si)
        dX, dy, dS = direction(tgt)
        ap, ad = steps(dX, dS)
        g = opts.barrier_reduction_factor
        ap, ad = min(1.0, g * ap), min(1.0, g * ad)
        X = [x + ap * d for x, d in zip(X, dX)]
        S = [s + ad * d for s, d in zip(S, dS)]
        y = y + ad * dy
        history[-1].update(step_primal=ap, step_dual=ad, sigma=sigma)
        logger.debug("     step p %.3f d %.3f sigma %.2e", ap, ad, sigma)

    ATy = data.adjoint(y)
    Rp = b - data.apply(X)
    Rd = [c - s - a for c, s, a in zip(C, S, ATy)]
    pobj, dobj = data.objective(X), float(b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    pinf = float(np.linalg.norm(Rp)) / normb
    dinf = _norm(Rd) / normC
    if status in ("numerical", "max_iterations"):
        f = NEAR_OPTIMAL_FACTOR
        if gap <= f * opts.duality_gap_tol and max(pinf, dinf) <= f * opts.feasibility_tol:
            logger.warning("stalled (%s) with residuals within %gx tolerance", status, f)
            status = "near_optimal"
    res = SdpResult(
        status=status,
        X=X,
        y=y,
        S=S,
        primal_objective=pobj,
        dual_objective=dobj,
        relative_gap=gap,
        primal_infeasibility=pinf,
        dual_infeasibility=dinf,
        iterations=it,
        history=history,
    )
    logger.info(
        "sdp %s after %d iterations: pobj %.10e gap %.2e pinf %.2e dinf %.2e",
        status, it, pobj, res.relative_gap, res.primal_infeasibility, res.dual_infeasibility,
    )
    return res


def kkt_residuals(data: SdpProblemData, res: SdpResult) -> dict[str, float]:
    """Scaled KKT residuals recomputed from scratch.

    ``primal``: ||b - A(X)|| / (1 + ||b||) plus cone violation of X.
    ``dual``: ||C - A^T y - S|| / (1 + ||C||) plus cone violation of S.
    ``complementarity``: <X, S> / (1 + |<C, X>| + |b^T y|).
    """
    C = [blk.C for blk in data.blocks]
    viol_x = viol_s = 0.0
    for blk, x, s in zip(data.blocks, res.X, res.S):
        if blk.kind == "s":
            viol_x = max(viol_x, -np.linalg.eigvalsh(x)[0])
            viol_s = max(viol_s, -np.linalg.eigvalsh(s)[0])
        else:
            viol_x = max(viol_x, -float(x.min()))
            viol_s = max(viol_s, -float(s.min()))
    pobj, dobj = data.objective(res.X), float(data.b @ res.y)
    ATy = data.adjoint(res.y)
    return {
        "primal": float(np.linalg.norm(data.b - data.apply(res.X))) / (1.0 + float(np.linalg.norm(data.b)))
        + max(viol_x, 0.0),
        "dual": _norm([c - a - s for c, a, s in zip(C, ATy, res.S)]) / (1.0 + _norm(C)) + max(viol_s, 0.0),
        "complementarity": sum(_inner(x, s) for x, s in zip(res.X, res.S))
        / (1.0 + abs(pobj) + abs(dobj)),
    }
