"""Zero-forcing and maximum-ratio reference beamformers.

Directions are fixed by the channels; the complex gains on those directions
are then chosen to minimise Tr(C_CRB) under the same rate and power
constraints, by solving the relaxation restricted to
``W_v = U Lam U^H`` with ``U = blockdiag(d_1, ..., d_K)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .fim import CrbReport, crb_of
from .scenario import Beamformer, ScenarioConfig
from .sdp import SolverOptions
from .sdr import SdpSolution, build_sdr, extract_beamformers, reduce_with_basis, solve_sdp

BASELINE_KINDS = ("zf", "mrt")
POWER_POLICIES = ("crb_optimal_gains",)


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    power_policy: str = "crb_optimal_gains"

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in BASELINE_KINDS:
            raise ValidationError(f"expected one of {BASELINE_KINDS}", "kind")
        if self.power_policy not in POWER_POLICIES:
            raise ValidationError(f"expected one of {POWER_POLICIES}", "power_policy")


def baseline_directions(kind: str, H: np.ndarray) -> np.ndarray:
    """Unit-norm columns: ZF ``H (H^H H)^-1``, MRT ``h_k / ||h_k||``."""
    kind = kind.lower()
    H = np.asarray(H, dtype=complex)
    if kind == "mrt":
        D = H.copy()
    elif kind == "zf":
        K = H.shape[1]
        if K > H.shape[0] or np.linalg.matrix_rank(H) < K:
            raise ValidationError("zero forcing needs a full column rank channel matrix", "channels")
        D = H @ np.linalg.inv(H.conj().T @ H)
    else:
        raise ValidationError(f"expected one of {BASELINE_KINDS}", "kind")
    return D / np.linalg.norm(D, axis=0)


@dataclass(frozen=True, eq=False)
class BaselineResult:
    kind: str
    directions: np.ndarray
    beamformer: Beamformer
    powers: np.ndarray  # ||w_k||^2
    solution: SdpSolution

    @property
    def bound(self) -> float:
        return self.solution.objective

    def crb(self, config: ScenarioConfig) -> CrbReport:
        return crb_of(config, self.beamformer)


def optimize_baseline_powers(
    directions: np.ndarray,
    config: ScenarioConfig,
    opts: SolverOptions | None = None,
    kind: str = "custom",
) -> BaselineResult:
    """CRB-optimal complex gains on fixed unit directions (one per user)."""
    D = np.asarray(directions, dtype=complex)
    K, Nt = config.n_users, config.n_tx
    if D.shape != (Nt, K):
        raise ValidationError(f"directions must be {Nt} x {K}", "directions")
    U = np.zeros((Nt * K, K), dtype=complex)
    for k in range(K):
        U[k * Nt : (k + 1) * Nt, k] = D[:, k]
    prob = reduce_with_basis(build_sdr(config), U)
    sol = extract_beamformers(solve_sdp(prob, opts), config, opts)
    bf = sol.extracted
    return BaselineResult(kind, D, bf, np.sum(np.abs(bf.w) ** 2, axis=0), sol)


def run_baseline(config: ScenarioConfig, spec: BaselineSpec | str, opts: SolverOptions | None = None) -> BaselineResult:
    spec = spec if isinstance(spec, BaselineSpec) else BaselineSpec(spec)
    D = baseline_directions(spec.kind, config.channels)
    return optimize_baseline_powers(D, config, opts, kind=spec.kind)
