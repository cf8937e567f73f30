"""Problem geometry, ULA steering vectors, channels, SINR and beampatterns.

Conventions used throughout the package:

* Angles are measured from array broadside, ``theta = atan2(dx, dy)``, so the
  field of view is the open interval (-pi/2, pi/2).
* Steering vectors are referenced to the array centre: entry ``m`` of
  ``b(theta)`` is ``exp(j*pi*(m - (n-1)/2)*sin(theta))`` (half-wavelength ULA).
* The radar return of target q is ``a(theta_q) b(theta_q)^T W s``; a transmit
  beamformer ``w`` therefore illuminates direction theta with ``b(theta)^T w``.
* Powers are linear watts internally; dBm/dB only appear at the file boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import GeometryError, ValidationError

SPEED_OF_LIGHT = 299_792_458.0

SIGNAL_CORRELATIONS = ("coherent", "orthogonal")
FADING_MODELS = ("los", "rayleigh", "fixed")


def dbm_to_w(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def w_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


# ---------------------------------------------------------------------------
# steering vectors
# ---------------------------------------------------------------------------

def _centered_offsets(n: int) -> np.ndarray:
    return np.arange(n) - (n - 1) / 2.0


def steering_vector(n: int, theta: float) -> np.ndarray:
    """Centre-referenced half-wavelength ULA steering vector of length ``n``."""
    if n < 1:
        raise ValidationError("antenna count must be >= 1", "n")
    return np.exp(1j * np.pi * _centered_offsets(n) * np.sin(theta))


def steering_derivative(n: int, theta: float) -> np.ndarray:
    """d b(theta) / d theta; orthogonal to ``steering_vector(n, theta)``."""
    off = _centered_offsets(n)
    return 1j * np.pi * off * np.cos(theta) * steering_vector(n, theta)


@dataclass(frozen=True, eq=False)
class SteeringBundle:
    """Transmit (b) and receive (a) steering vectors and derivatives at one angle."""

    b: np.ndarray
    b_dot: np.ndarray
    a: np.ndarray
    a_dot: np.ndarray

    @property
    def norms(self) -> dict[str, float]:
        return {
            "b": float(np.vdot(self.b, self.b).real),
            "b_dot": float(np.vdot(self.b_dot, self.b_dot).real),
            "a": float(np.vdot(self.a, self.a).real),
            "a_dot": float(np.vdot(self.a_dot, self.a_dot).real),
        }


def steering_bundle(n_tx: int, n_rx: int, theta: float) -> SteeringBundle:
    return SteeringBundle(
        b=steering_vector(n_tx, theta),
        b_dot=steering_derivative(n_tx, theta),
        a=steering_vector(n_rx, theta),
        a_dot=steering_derivative(n_rx, theta),
    )


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def angle_delay_from_position(
    bs: Sequence[float],
    target: Sequence[float],
    delay_scale: float = 1.0,
) -> tuple[float, float]:
    """Broadside angle and delay ``delay_scale * R / (2c)`` of ``target`` seen from ``bs``."""
    dx = float(target[0]) - float(bs[0])
    dy = float(target[1]) - float(bs[1])
    r = math.hypot(dx, dy)
    if r == 0.0:
        raise GeometryError("degenerate geometry: target coincides with the base station")
    theta = math.atan2(dx, dy)
    if not -math.pi / 2 < theta < math.pi / 2:
        raise GeometryError(
            f"target at {math.degrees(theta):.3f} deg is outside the (-90, 90) deg field of view"
        )
    return theta, delay_scale * r / (2.0 * SPEED_OF_LIGHT)


def position_jacobian(
    bs: Sequence[float],
    target: Sequence[float],
    delay_scale: float = 1.0,
) -> np.ndarray:
    """2x2 Jacobian d(theta, tau) / d(x, y) of one target."""
    dx = float(target[0]) - float(bs[0])
    dy = float(target[1]) - float(bs[1])
    r2 = dx * dx + dy * dy
    if r2 == 0.0:
        raise GeometryError("degenerate geometry: target coincides with the base station")
    r = math.sqrt(r2)
    k = delay_scale / (2.0 * SPEED_OF_LIGHT * r)
    return np.array([[dy / r2, -dx / r2], [k * dx, k * dy]])


@dataclass(frozen=True)
class Target:
    """Point target in polar form relative to the base station."""

    angle_rad: float
    range_m: float
    alpha: complex = 1.0 + 0.0j

    def __post_init__(self):
        if not self.range_m > 0:
            raise ValidationError("range must be > 0", "range_m")
        if not -math.pi / 2 < self.angle_rad < math.pi / 2:
            raise ValidationError(
                f"angle {math.degrees(self.angle_rad):.3f} deg outside (-90, 90)", "angle"
            )
        object.__setattr__(self, "alpha", complex(self.alpha))

    @classmethod
    def from_position(cls, bs: Sequence[float], xy: Sequence[float], alpha: complex = 1.0) -> "Target":
        theta, _ = angle_delay_from_position(bs, xy)
        r = math.hypot(xy[0] - bs[0], xy[1] - bs[1])
        return cls(theta, r, alpha)

    def position(self, bs: Sequence[float] = (0.0, 0.0)) -> tuple[float, float]:
        return (
            bs[0] + self.range_m * math.sin(self.angle_rad),
            bs[1] + self.range_m * math.cos(self.angle_rad),
        )


@dataclass(frozen=True, eq=False)
class CommUser:
    """Downlink user. ``channel`` is synthesised by the scenario when omitted."""

    noise_w: float
    rate_threshold_bpshz: float = 0.0
    fading: str = "los"
    angle_rad: float | None = None
    pathloss_db: float = 0.0
    channel: np.ndarray | None = None

    def __post_init__(self):
        if not self.noise_w > 0:
            raise ValidationError("noise power must be > 0", "noise_w")
        if self.rate_threshold_bpshz < 0:
            raise ValidationError("rate threshold must be >= 0", "rate_threshold_bpshz")
        if self.fading not in FADING_MODELS:
            raise ValidationError(f"unknown fading model {self.fading!r}", "fading")
        if self.fading == "los" and self.angle_rad is None:
            raise ValidationError("LoS user needs an angle", "angle")
        if self.angle_rad is not None and not -math.pi / 2 < self.angle_rad < math.pi / 2:
            raise ValidationError(
                f"angle {math.degrees(self.angle_rad):.3f} deg outside (-90, 90)", "angle"
            )
        if self.channel is not None:
            h = np.asarray(self.channel, dtype=complex).ravel()
            if not np.linalg.norm(h) > 0:
                raise ValidationError("channel must be nonzero", "channel")
            object.__setattr__(self, "channel", h)
        elif self.fading == "fixed":
            raise ValidationError("fixed-channel user needs an explicit channel", "channel")

    @property
    def gain(self) -> float:
        return db_to_linear(self.pathloss_db)

    @property
    def sinr_threshold(self) -> float:
        return 2.0 ** self.rate_threshold_bpshz - 1.0


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """A complete problem instance.

    ``omega_rad_s`` defaults to ``2*pi*carrier_freq_hz``. ``delay_scale``
    multiplies the ``R/(2c)`` delay model (set 4 for the round-trip ``2R/c``).
    """

    n_tx: int
    n_rx: int
    targets: tuple[Target, ...]
    users: tuple[CommUser, ...]
    power_budget_w: float
    radar_noise_w: float
    carrier_freq_hz: float = 6e9
    omega_rad_s: float | None = None
    bs_position: tuple[float, float] = (0.0, 0.0)
    signal_correlation: str = "coherent"
    seed: int = 0
    delay_scale: float = 1.0
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "bs_position", tuple(float(v) for v in self.bs_position))
        if self.n_tx < 2:
            raise ValidationError("need at least 2 transmit antennas", "n_tx")
        if self.n_rx < self.n_tx:
            raise ValidationError("n_rx must be >= n_tx", "n_rx")
        if not self.power_budget_w > 0:
            raise ValidationError("power budget must be > 0", "power_budget")
        if not self.radar_noise_w > 0:
            raise ValidationError("radar noise must be > 0", "radar_noise")
        if not self.carrier_freq_hz > 0:
            raise ValidationError("carrier frequency must be > 0", "carrier_freq_hz")
        if self.omega_rad_s is not None and not self.omega_rad_s > 0:
            raise ValidationError("omega must be > 0", "omega_rad_s")
        if not self.delay_scale > 0:
            raise ValidationError("delay scale must be > 0", "delay_scale")
        if not self.targets:
            raise ValidationError("at least one target required", "targets")
        if not self.users:
            raise ValidationError("at least one user required", "users")
        if self.signal_correlation not in SIGNAL_CORRELATIONS:
            raise ValidationError(
                f"expected one of {SIGNAL_CORRELATIONS}", "signal_correlation"
            )
        for i, u in enumerate(self.users):
            if u.channel is not None and u.channel.shape != (self.n_tx,):
                raise ValidationError(
                    f"channel has {u.channel.size} entries, expected {self.n_tx}",
                    f"users[{i}].channel",
                )
        if any(u.channel is None for u in self.users):
            drawn = synthesize_channels(self)
            users = tuple(
                u if u.channel is not None else replace(u, channel=h)
                for u, h in zip(self.users, drawn)
            )
            object.__setattr__(self, "users", users)

    # convenience views --------------------------------------------------
    @property
    def omega(self) -> float:
        if self.omega_rad_s is not None:
            return float(self.omega_rad_s)
        return 2.0 * math.pi * self.carrier_freq_hz

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([t.angle_rad for t in self.targets])

    @property
    def taus(self) -> np.ndarray:
        return np.array(
            [self.delay_scale * t.range_m / (2.0 * SPEED_OF_LIGHT) for t in self.targets]
        )

    @property
    def alphas(self) -> np.ndarray:
        return np.array([t.alpha for t in self.targets], dtype=complex)

    @property
    def channels(self) -> np.ndarray:
        """N_t x K matrix whose column k is h_k."""
        return np.column_stack([u.channel for u in self.users])

    def target_positions(self) -> list[tuple[float, float]]:
        return [t.position(self.bs_position) for t in self.targets]

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def with_rates(self, rates: Sequence[float]) -> "ScenarioConfig":
        users = tuple(
            replace(u, rate_threshold_bpshz=float(r)) for u, r in zip(self.users, rates)
        )
        return replace(self, users=users)


def synthesize_channels(config: ScenarioConfig) -> list[np.ndarray]:
    """Channel vectors from each user's fading spec.

    LoS users get ``sqrt(rho) * conj(b(theta_k))`` so that ``|h^H w|`` and the
    radar illumination ``|b(theta)^T w|`` share one pattern convention.
    Rayleigh users draw i.i.d. CN(0, rho) entries from ``default_rng(seed)``
    in user order; the draw is reproducible for a fixed seed.
    """
    rng = np.random.default_rng(config.seed)
    out = []
    for i, u in enumerate(config.users):
        rho = u.gain
        if u.fading == "los":
            if u.angle_rad is None:
                raise ValidationError("LoS user needs an angle", f"users[{i}].angle")
            out.append(np.sqrt(rho) * np.conj(steering_vector(config.n_tx, u.angle_rad)))
        elif u.fading == "rayleigh":
            z = rng.standard_normal(config.n_tx) + 1j * rng.standard_normal(config.n_tx)
            out.append(np.sqrt(rho / 2.0) * z)
        else:
            out.append(np.asarray(u.channel, dtype=complex))
    return out


# ---------------------------------------------------------------------------
# communication metrics
# ---------------------------------------------------------------------------

def _as_matrix(w) -> np.ndarray:
    if isinstance(w, Beamformer):
        return w.w
    w = np.asarray(w, dtype=complex)
    return w[:, None] if w.ndim == 1 else w


def sinr_and_rate(users: Sequence[CommUser], w) -> tuple[np.ndarray, np.ndarray]:
    """Per-user SINR and achievable rate log2(1 + SINR) for beamformer ``w``."""
    W = _as_matrix(w)
    H = np.column_stack([u.channel for u in users])
    if W.shape != H.shape:
        raise ValidationError(f"beamformer shape {W.shape} does not match channels {H.shape}")
    noise = np.array([u.noise_w for u in users])
    g = np.abs(H.conj().T @ W) ** 2  # g[k, l] = |h_k^H w_l|^2
    signal = np.diag(g)
    interference = g.sum(axis=1) - signal
    gamma = signal / (interference + noise)
    return gamma, np.log2(1.0 + gamma)


@dataclass(frozen=True, eq=False)
class Beamformer:
    """N_t x K beamforming matrix with its rate/power report."""

    w: np.ndarray
    per_user_rate: np.ndarray
    total_power_w: float

    @classmethod
    def from_matrix(cls, w, users: Sequence[CommUser]) -> "Beamformer":
        W = _as_matrix(w).astype(complex)
        _, rate = sinr_and_rate(users, W)
        return cls(W, rate, float(np.sum(np.abs(W) ** 2)))

    @property
    def w_v(self) -> np.ndarray:
        """Column stacking vec(W)."""
        return self.w.reshape(-1, order="F")

    def feasible(self, config: ScenarioConfig, rate_tol: float = 1e-6, power_tol: float = 1e-9) -> bool:
        gamma_req = np.array([u.rate_threshold_bpshz for u in config.users])
        return bool(
            np.all(self.per_user_rate >= gamma_req - rate_tol)
            and self.total_power_w <= config.power_budget_w * (1.0 + power_tol)
        )


def beampattern(w, theta_grid) -> tuple[np.ndarray, np.ndarray]:
    """Transmit pattern sum_k |b(theta)^T w_k|^2 and its max-normalised dB copy."""
    W = _as_matrix(w)
    grid = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    if grid.size == 0:
        raise ValidationError("empty angle grid")
    n = W.shape[0]
    steer = np.exp(1j * np.pi * np.outer(np.sin(grid), _centered_offsets(n)))
    power = np.sum(np.abs(steer @ W) ** 2, axis=1)
    peak = power.max()
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power / peak) if peak > 0 else np.full_like(power, -np.inf)
    return power, db
