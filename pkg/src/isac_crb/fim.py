"""Joint angle-delay Fisher information and Cramer-Rao bound metrics.

Parameters are ordered ``[theta_1..theta_Q, tau_1..tau_Q]``. The observation
after the DFT is ``r = A C B^T W s + n`` with ``s`` all ones and
``C = diag(alpha_q exp(-j omega tau_q))``; the Fisher information follows from
the Slepian-Bangs formula with white noise of power ``sigma2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnidentifiableError, ValidationError
from .scenario import (
    Beamformer,
    ScenarioConfig,
    position_jacobian,
    steering_derivative,
    steering_vector,
)

#: Equilibrated condition number above which F is declared singular.
SINGULAR_COND = 1e12


@dataclass(frozen=True, eq=False)
class ArrayMatrices:
    A: np.ndarray
    A_dot: np.ndarray
    B: np.ndarray
    B_dot: np.ndarray
    c: np.ndarray  # alpha_q exp(-j omega tau_q)
    omega: float


def array_matrices(config: ScenarioConfig) -> ArrayMatrices:
    th = config.thetas
    cols = lambda f, n: np.column_stack([f(n, t) for t in th])  # noqa: E731
    return ArrayMatrices(
        A=cols(steering_vector, config.n_rx),
        A_dot=cols(steering_derivative, config.n_rx),
        B=cols(steering_vector, config.n_tx),
        B_dot=cols(steering_derivative, config.n_tx),
        c=config.alphas * np.exp(-1j * config.omega * config.taus),
        omega=config.omega,
    )


@dataclass(frozen=True, eq=False)
class FimBlocks:
    """Complex blocks before taking ``(2/sigma2) Re``."""

    f_theta_theta: np.ndarray
    f_theta_tau: np.ndarray
    f_tau_tau: np.ndarray


@dataclass(frozen=True, eq=False)
class FimMatrix:
    f: np.ndarray
    sigma2: float
    blocks: FimBlocks | None = None

    @property
    def n_targets(self) -> int:
        return self.f.shape[0] // 2


@dataclass(frozen=True, eq=False)
class CrbReport:
    crb_matrix: np.ndarray
    trace: float
    per_parameter: np.ndarray
    position_crb_m: float

    @property
    def crb_theta(self) -> np.ndarray:
        q = self.per_parameter.size // 2
        return self.per_parameter[:q]

    @property
    def crb_tau(self) -> np.ndarray:
        q = self.per_parameter.size // 2
        return self.per_parameter[q:]

    def to_row(self, scenario_id: str, scheme: str | None = None) -> dict:
        row = {"scenario": scenario_id}
        if scheme is not None:
            row["scheme"] = scheme
        row["trace"] = self.trace
        q = self.per_parameter.size // 2
        for i in range(q):
            row[f"crb_theta_{i + 1}"] = self.per_parameter[i]
        for i in range(q):
            row[f"crb_tau_{i + 1}"] = self.per_parameter[q + i]
        row["crb_position_m"] = self.position_crb_m
        return row


def _signal_gram(config: ScenarioConfig, W: np.ndarray) -> np.ndarray:
    if config.signal_correlation == "coherent":
        x = W.sum(axis=1)
        return np.outer(x, x.conj())
    return W @ W.conj().T


def _matrix(w) -> np.ndarray:
    if isinstance(w, Beamformer):
        return w.w
    w = np.asarray(w, dtype=complex)
    return w[:, None] if w.ndim == 1 else w


def assemble_fim(config: ScenarioConfig, w) -> FimMatrix:
    """Block-form Fisher information of ``[theta; tau]`` for beamformer ``w``.

    The theta-tau block pairs the derivative of the transmit steering with the
    delay derivative, ``(A^H A) . (C* B_dot^H M* B C)``, and the tau-tau block
    carries the ``omega^2`` factor of the squared delay derivative.
    """
    W = _matrix(w)
    Q, K = config.n_targets, config.n_users
    if Q == 0 or K == 0:
        raise ValidationError("need at least one target and one user")
    if W.shape != (config.n_tx, K):
        raise ValidationError(f"beamformer shape {W.shape}, expected {(config.n_tx, K)}")
    m = array_matrices(config)
    Mc = _signal_gram(config, W).conj()
    Cs, C = np.diag(m.c.conj()), np.diag(m.c)
    AA = m.A.conj().T @ m.A
    AdA = m.A_dot.conj().T @ m.A
    AAd = m.A.conj().T @ m.A_dot
    AdAd = m.A_dot.conj().T @ m.A_dot
    BB = Cs @ m.B.conj().T @ Mc @ m.B @ C
    BBd = Cs @ m.B.conj().T @ Mc @ m.B_dot @ C
    BdB = Cs @ m.B_dot.conj().T @ Mc @ m.B @ C
    BdBd = Cs @ m.B_dot.conj().T @ Mc @ m.B_dot @ C

    f_tt = AdAd * BB + AdA * BBd + AAd * BdB + AA * BdBd
    f_tT = (AdA * BB + AA * BdB) * (-1j * m.omega)
    f_TT = (AA * BB) * m.omega ** 2

    s = 2.0 / config.radar_noise_w
    F = np.empty((2 * Q, 2 * Q))
    F[:Q, :Q] = s * f_tt.real
    F[:Q, Q:] = s * f_tT.real
    F[Q:, :Q] = s * f_tT.real.T
    F[Q:, Q:] = s * f_TT.real
    F = 0.5 * (F + F.T)
    return FimMatrix(F, config.radar_noise_w, FimBlocks(f_tt, f_tT, f_TT))


def derivative_matrices(config: ScenarioConfig) -> list[np.ndarray]:
    """D_dot_m = dD/d varsigma_m for D = A C B^T, in parameter order."""
    m = array_matrices(config)
    Q = config.n_targets
    out = []
    for q in range(Q):
        out.append(
            m.c[q] * (np.outer(m.A_dot[:, q], m.B[:, q]) + np.outer(m.A[:, q], m.B_dot[:, q]))
        )
    for q in range(Q):
        out.append(-1j * m.omega * m.c[q] * np.outer(m.A[:, q], m.B[:, q]))
    return out


def fim_element(config: ScenarioConfig, w_v: np.ndarray, m: int, n: int) -> float:
    """Single FIM entry as the quadratic form in the stacked beamformer ``w_v``.

    Uses the coherent signal model (``s`` all ones) regardless of
    ``config.signal_correlation``.
    """
    P = 2 * config.n_targets
    if not (0 <= m < P and 0 <= n < P):
        raise IndexError(f"parameter index out of range 0..{P - 1}")
    K = config.n_users
    w_v = np.asarray(w_v, dtype=complex).ravel()
    if w_v.size != config.n_tx * K:
        raise ValidationError("w_v has the wrong length")
    D = derivative_matrices(config)
    s = np.ones(K)
    phi = np.kron(np.outer(s.conj(), s), D[m].conj().T @ D[n])
    return float(2.0 / config.radar_noise_w * np.real(w_v.conj() @ phi @ w_v))


# ---------------------------------------------------------------------------
# CRB
# ---------------------------------------------------------------------------

def _equilibrated_inverse(F: np.ndarray) -> np.ndarray:
    d = np.diag(F).copy()
    if np.any(d <= 0):
        bad = np.flatnonzero(d <= 0)
        null = np.zeros((F.shape[0], bad.size))
        null[bad, np.arange(bad.size)] = 1.0
        raise UnidentifiableError("unidentifiable parameters: zero Fisher information", null)
    s = 1.0 / np.sqrt(d)
    G = s[:, None] * F * s[None, :]
    G = 0.5 * (G + G.T)
    vals, vecs = np.linalg.eigh(G)
    if vals[0] <= vals[-1] / SINGULAR_COND:
        null = s[:, None] * vecs[:, vals <= vals[-1] / SINGULAR_COND]
        null /= np.linalg.norm(null, axis=0)
        raise UnidentifiableError("unidentifiable parameters: Fisher information is singular", null)
    Ginv = (vecs / vals) @ vecs.T
    return s[:, None] * Ginv * s[None, :]


def position_jacobian_matrix(config: ScenarioConfig) -> np.ndarray:
    """J[i, j] = d varsigma_i / d u_j with u = [x_1, y_1, ..., x_Q, y_Q]."""
    Q = config.n_targets
    J = np.zeros((2 * Q, 2 * Q))
    for q, pos in enumerate(config.target_positions()):
        jq = position_jacobian(config.bs_position, pos, config.delay_scale)
        J[q, 2 * q : 2 * q + 2] = jq[0]
        J[Q + q, 2 * q : 2 * q + 2] = jq[1]
    return J


def crb_report(fim: FimMatrix | np.ndarray, config: ScenarioConfig) -> CrbReport:
    F = fim.f if isinstance(fim, FimMatrix) else np.asarray(fim, dtype=float)
    crb = _equilibrated_inverse(F)
    # F_u = J^T F J; J is square with det k_q per target, so invert it instead
    # of the badly scaled F_u
    Jinv = np.linalg.inv(position_jacobian_matrix(config))
    crb_u = Jinv @ crb @ Jinv.T
    return CrbReport(
        crb_matrix=crb,
        trace=float(np.trace(crb)),
        per_parameter=np.diag(crb).copy(),
        position_crb_m=float(np.sqrt(max(np.trace(crb_u), 0.0))),
    )


def crb_of(config: ScenarioConfig, w) -> CrbReport:
    return crb_report(assemble_fim(config, w), config)
