"""Scheme dispatch, parameter sweeps, beampattern tables and CSV output."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import run_baseline
from .closed_form import solve_single
from .errors import ConvergenceError, InfeasibleError, IsacError, UnidentifiableError, ValidationError
from .fim import CrbReport, crb_of
from .scenario import Beamformer, ScenarioConfig, beampattern, dbm_to_w
from .scenario_io import parse_scenario, scenario_sha256
from .sdp import SolverOptions
from .sdr import build_sdr, extract_beamformers, optimize, reduce_with_basis, sensing_only_bound, solve_sdp, subspace_residual

logger = logging.getLogger("isac_crb.harness")

SCHEMES = ("closed_form", "sdr", "zf", "mrt", "sensing_only")
OUTPUTS = ("crb_theta", "crb_tau", "crb_position", "rate", "bound", "beampattern")
VARIABLES = ("power_dbm", "rate_threshold")
CRB_SOURCES = ("beamformer", "covariance")


# ---------------------------------------------------------------------------
# single scheme
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SchemeResult:
    scheme: str
    beamformer: Beamformer | None
    crb: CrbReport  # of the beamformer
    covariance_crb: CrbReport  # of the relaxed covariance (same as crb for closed form)
    bound: float | None = None
    extraction_loss: float | None = None
    extra: dict = field(default_factory=dict)

    def report(self, source: str = "beamformer") -> CrbReport:
        return self.covariance_crb if source == "covariance" else self.crb


def _check_scheme(config: ScenarioConfig, scheme: str):
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}", "scheme")
    if scheme == "closed_form" and (config.n_targets != 1 or config.n_users != 1):
        raise ValidationError("closed_form needs exactly one target and one user", "scheme")


def solve_scheme(
    config: ScenarioConfig,
    scheme: str,
    opts: SolverOptions | None = None,
    mode: str = "augmented",
) -> SchemeResult:
    _check_scheme(config, scheme)
    opts = opts or SolverOptions()
    if scheme == "closed_form":
        sol = solve_single(config)
        bf = sol.beamformer(config)
        rep = crb_of(config, bf)
        return SchemeResult(scheme, bf, rep, rep, extra=sol.to_row())
    if scheme == "sdr":
        sol = optimize(config, opts, mode=mode)
        return SchemeResult(
            scheme, sol.extracted, crb_of(config, sol.extracted), sol.crb(),
            bound=sol.objective, extraction_loss=sol.extraction_loss, extra=sol.to_row(),
        )
    if scheme == "sensing_only":
        sol = extract_beamformers(sensing_only_bound(config, opts, mode=mode), config, opts)
        return SchemeResult(
            scheme, sol.extracted, crb_of(config, sol.extracted), sol.crb(),
            bound=sol.objective, extraction_loss=sol.extraction_loss, extra=sol.to_row(),
        )
    res = run_baseline(config, scheme, opts)
    return SchemeResult(
        scheme, res.beamformer, res.crb(config), res.solution.crb(),
        bound=res.bound, extraction_loss=res.solution.extraction_loss,
        extra={"powers": res.powers.tolist()},
    )


def subspace_report(config: ScenarioConfig, opts: SolverOptions | None = None) -> dict:
    """Full, augmented-basis and compact-basis solves of the same relaxation."""
    prob = build_sdr(config)
    full = solve_sdp(prob, opts)
    out = {"full_objective": full.objective}
    for mode in ("augmented", "compact"):
        red = reduce_with_basis(prob, mode)
        sol = solve_sdp(red, opts)
        out[f"{mode}_dim"] = red.reduced_dim
        out[f"{mode}_objective"] = sol.objective
        out[f"{mode}_ratio"] = sol.objective / full.objective
        out[f"{mode}_residual"] = subspace_residual(full.w_v_opt, red.basis)
    out["full_dim"] = prob.dim
    return out


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    variable: str
    start: float
    stop: float
    step: float
    schemes: tuple[str, ...]
    outputs: tuple[str, ...] = ("crb_theta", "crb_tau", "crb_position", "rate", "bound")
    user_index: int | None = None  # rate_threshold only; None sweeps every user
    crb_source: str = "beamformer"
    mode: str = "augmented"

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if self.variable not in VARIABLES:
            raise ValidationError(f"expected one of {VARIABLES}", "variable")
        if not self.schemes:
            raise ValidationError("at least one scheme required", "schemes")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValidationError(f"unknown scheme {s!r}; expected one of {SCHEMES}", "schemes")
        for o in self.outputs:
            if o not in OUTPUTS:
                raise ValidationError(f"unknown output {o!r}; expected one of {OUTPUTS}", "outputs")
        if self.crb_source not in CRB_SOURCES:
            raise ValidationError(f"expected one of {CRB_SOURCES}", "crb_source")
        if self.step == 0 or (self.stop - self.start) * self.step < 0:
            raise ValidationError("empty range", "range")

    def points(self) -> np.ndarray:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return np.round(self.start + self.step * np.arange(n), 12)

    def validate(self, config: ScenarioConfig):
        for s in self.schemes:
            _check_scheme(config, s)
        if self.user_index is not None and not 0 <= self.user_index < config.n_users:
            raise ValidationError(f"user index {self.user_index} out of range", "user_index")
        if self.variable == "rate_threshold" and self.start < 0:
            raise ValidationError("rate thresholds must be >= 0", "range")

    def apply(self, config: ScenarioConfig, value: float) -> ScenarioConfig:
        if self.variable == "power_dbm":
            return config.with_(power_budget_w=dbm_to_w(value))
        rates = [u.rate_threshold_bpshz for u in config.users]
        for k in range(config.n_users):
            if self.user_index is None or k == self.user_index:
                rates[k] = value
        return config.with_rates(rates)


def _metrics(rep: CrbReport, res: SchemeResult, spec: SweepSpec, grid_rad: np.ndarray) -> dict:
    row = {"trace_crb": float(rep.trace)}
    if "crb_theta" in spec.outputs:
        row["crb_theta_sum"] = float(np.sum(rep.crb_theta))
        row.update({f"crb_theta_{q + 1}": float(v) for q, v in enumerate(rep.crb_theta)})
    if "crb_tau" in spec.outputs:
        row["crb_tau_sum"] = float(np.sum(rep.crb_tau))
        row.update({f"crb_tau_{q + 1}": float(v) for q, v in enumerate(rep.crb_tau)})
    if "crb_position" in spec.outputs:
        row["crb_position_m"] = float(rep.position_crb_m)
    if "rate" in spec.outputs and res.beamformer is not None:
        row.update({f"rate_{k + 1}": float(v) for k, v in enumerate(res.beamformer.per_user_rate)})
    if "bound" in spec.outputs:
        row["bound"] = res.bound if res.bound is not None else ""
        row["extraction_loss"] = res.extraction_loss if res.extraction_loss is not None else ""
    if "beampattern" in spec.outputs and res.beamformer is not None:
        p, _ = beampattern(res.beamformer, grid_rad)
        row["peak_deg"] = float(np.degrees(grid_rad[int(np.argmax(p))]))
    return row


def _run_point(args) -> list[dict]:
    config, spec, index, value, opts = args
    cfg = spec.apply(config, value)
    grid = np.radians(np.linspace(-90.0, 90.0, 721))
    rows = []
    for scheme in spec.schemes:
        row = {"index": index, spec.variable: float(value), "scheme": scheme, "status": "ok", "message": ""}
        try:
            res = solve_scheme(cfg, scheme, opts, spec.mode)
            src = "covariance" if scheme == "sensing_only" else spec.crb_source
            row["crb_source"] = src
            row.update(_metrics(res.report(src), res, spec, grid))
            if res.extra.get("case_id") == "InfeasibleFallback":
                row.update(status="infeasible", message="rate unattainable; sensing-only fallback reported")
        except InfeasibleError as e:
            row.update(status="infeasible", message=str(e))
        except ConvergenceError as e:
            row.update(status="nonconvergence", message=str(e))
        except UnidentifiableError as e:
            row.update(status="unidentifiable", message=str(e))
        except IsacError as e:
            row.update(status="error", message=str(e))
        rows.append(row)
    return rows


_NORMALIZED_PREFIXES = ("crb_theta", "crb_tau", "crb_position")


def _normalize(rows: list[dict]) -> None:
    """Append ``<col>_norm`` = value / max over the rows of the same scheme."""
    cols = []
    for r in rows:
        for c in r:
            if c.startswith(_NORMALIZED_PREFIXES) and c not in cols:
                cols.append(c)
    for scheme in dict.fromkeys(r["scheme"] for r in rows):
        group = [r for r in rows if r["scheme"] == scheme]
        for c in cols:
            vals = [r[c] for r in group if isinstance(r.get(c), float)]
            peak = max(vals) if vals else None
            for r in group:
                v = r.get(c)
                r[c + "_norm"] = v / peak if isinstance(v, float) and peak else ""


def run_sweep(
    scenario: str | Path | ScenarioConfig,
    spec: SweepSpec,
    opts: SolverOptions | None = None,
    jobs: int = 1,
) -> list[dict]:
    """One row per (sweep point, scheme) in sweep order."""
    config = parse_scenario(scenario) if not isinstance(scenario, ScenarioConfig) else scenario
    spec.validate(config)
    opts = opts or SolverOptions()
    tasks = [(config, spec, i, v, opts) for i, v in enumerate(spec.points())]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_point, tasks))
    else:
        chunks = [_run_point(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    _normalize(rows)
    return rows


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:step`` in degrees, endpoints inclusive."""
    try:
        parts = [float(v) for v in text.split(":")]
    except ValueError:
        raise ValidationError(f"bad grid {text!r}; expected start:stop:step", "grid") from None
    if len(parts) == 1:
        return np.array(parts)
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise ValidationError(f"bad grid {text!r}; expected start:stop:step", "grid")
    n = int(math.floor((parts[1] - parts[0]) / parts[2] + 1e-9)) + 1
    return np.round(parts[0] + parts[2] * np.arange(n), 12)


def run_beampattern(
    scenario: str | Path | ScenarioConfig,
    scheme: str,
    grid_deg: Sequence[float],
    opts: SolverOptions | None = None,
    mode: str = "augmented",
) -> list[dict]:
    config = parse_scenario(scenario) if not isinstance(scenario, ScenarioConfig) else scenario
    grid = np.asarray(grid_deg, dtype=float)
    if grid.size == 0:
        raise ValidationError("empty angle grid", "grid")
    res = solve_scheme(config, scheme, opts, mode)
    lin, db = beampattern(res.beamformer, np.radians(grid))
    return [
        {"angle_deg": float(a), "power_linear": float(p), "power_db_normalized": float(d)}
        for a, p, d in zip(grid, lin, db)
    ]


def local_maxima_deg(rows: list[dict]) -> list[float]:
    """Angles of strict interior local maxima of a beampattern table."""
    p = np.array([r["power_linear"] for r in rows])
    a = np.array([r["angle_deg"] for r in rows])
    idx = np.flatnonzero((p[1:-1] > p[:-2]) & (p[1:-1] > p[2:])) + 1
    return a[idx].tolist()


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_header(scenario: str | Path | None, config: ScenarioConfig, opts: SolverOptions | None, extra: dict | None = None) -> list[str]:
    lines = ["# isac-crb table"]
    if scenario is not None and not isinstance(scenario, ScenarioConfig):
        lines.append(f"# scenario: {Path(str(scenario)).name}")
        lines.append(f"# scenario_sha256: {scenario_sha256(scenario)}")
    lines.append(f"# scenario_name: {config.name}")
    lines.append(f"# seed: {config.seed}")
    if opts is not None:
        lines.append("# solver: " + " ".join(f"{k}={v}" for k, v in opts.as_dict().items()))
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: {v}")
    return lines


def write_csv(rows: list[dict], path: str | Path | None, header: list[str] | None = None) -> str:
    """Write rows (union of keys, first-seen order); returns the text."""
    cols: list[str] = []
    for r in rows:
        for c in r:
            if c not in cols:
                cols.append(c)
    buf = io.StringIO()
    for line in header or []:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in cols])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_csv(path: str | Path) -> list[dict]:
    """Rows of a table written by :func:`write_csv`; numeric cells become floats."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    out = []
    for r in csv.DictReader(lines):
        row = {}
        for k, v in r.items():
            try:
                row[k] = float(v)
            except ValueError:
                row[k] = v
        out.append(row)
    return out
