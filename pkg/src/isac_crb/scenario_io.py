"""YAML scenario files.

Angles are in degrees, powers in dBm and path loss in dB on disk; everything
is converted to radians and watts on load. Unknown and duplicate keys are
rejected with the offending field path.
"""

from __future__ import annotations

import hashlib
import math
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ValidationError
from .scenario import CommUser, ScenarioConfig, Target, dbm_to_w, w_to_dbm

SCHEMA_VERSION = 1
SHIPPED = ("default", "single_pair", "tradeoff")

_TOP = {
    "schema_version": True,
    "name": False,
    "n_tx": True,
    "n_rx": True,
    "carrier_freq_hz": False,
    "omega_rad_s": False,
    "bs_position_m": False,
    "power_budget_dbm": True,
    "radar_noise_dbm": True,
    "signal_correlation": False,
    "seed": False,
    "delay_scale": False,
    "targets": True,
    "users": True,
}
_TARGET = {"angle_deg", "range_m", "position_m", "alpha"}
_USER = {"fading", "angle_deg", "pathloss_db", "noise_dbm", "rate_threshold_bpshz", "channel"}
_DIGITS = 12


class _UniqueKeyLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise ValidationError(f"duplicate key {key!r} (line {key_node.start_mark.line + 1})", str(key))
        seen.add(key)
    return loader.construct_mapping(node, deep=deep)


_UniqueKeyLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _num(doc: dict, key: str, path: str, default=None, kind=float):
    if key not in doc:
        if default is None:
            raise ValidationError("missing required field", f"{path}{key}")
        return default
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"expected a number, got {v!r}", f"{path}{key}")
    if kind is int:
        if float(v) != int(v):
            raise ValidationError(f"expected an integer, got {v!r}", f"{path}{key}")
        return int(v)
    if not math.isfinite(v):
        raise ValidationError("must be finite", f"{path}{key}")
    return float(v)


def _check_keys(doc, allowed, path: str):
    if not isinstance(doc, dict):
        raise ValidationError("expected a mapping", path.rstrip(".") or "<root>")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown key(s) {unknown}", f"{path}{unknown[0]}")


def _angle(doc: dict, path: str) -> float:
    deg = _num(doc, "angle_deg", path)
    if not -90.0 < deg < 90.0:
        raise ValidationError(f"angle {deg} deg outside (-90, 90)", f"{path}angle_deg")
    return math.radians(deg)


def _pair(v, path: str) -> tuple[float, float]:
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
        raise ValidationError("expected a two-element numeric list", path)
    return float(v[0]), float(v[1])


def config_from_dict(doc: dict) -> ScenarioConfig:
    _check_keys(doc, _TOP, "")
    for key, required in _TOP.items():
        if required and key not in doc:
            raise ValidationError("missing required field", key)
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema version {doc['schema_version']!r}", "schema_version")
    bs = _pair(doc.get("bs_position_m", [0.0, 0.0]), "bs_position_m")

    targets = []
    if not isinstance(doc["targets"], list) or not doc["targets"]:
        raise ValidationError("expected a non-empty list", "targets")
    for i, t in enumerate(doc["targets"]):
        p = f"targets[{i}]."
        _check_keys(t, _TARGET, p)
        alpha = complex(*_pair(t.get("alpha", [1.0, 0.0]), p + "alpha"))
        if "position_m" in t:
            if "angle_deg" in t or "range_m" in t:
                raise ValidationError("give either position_m or angle_deg/range_m", p + "position_m")
            xy = _pair(t["position_m"], p + "position_m")
            try:
                targets.append(Target.from_position(bs, xy, alpha))
            except ValidationError as e:
                raise type(e)(str(e), p + "position_m") from None
        else:
            rng = _num(t, "range_m", p)
            if not rng > 0:
                raise ValidationError("range must be > 0", p + "range_m")
            targets.append(Target(_angle(t, p), rng, alpha))

    users = []
    if not isinstance(doc["users"], list) or not doc["users"]:
        raise ValidationError("expected a non-empty list", "users")
    for i, u in enumerate(doc["users"]):
        p = f"users[{i}]."
        _check_keys(u, _USER, p)
        fading = u.get("fading", "los")
        channel = None
        if "channel" in u:
            raw = u["channel"]
            if not isinstance(raw, list) or not raw:
                raise ValidationError("expected a list of [re, im] pairs", p + "channel")
            channel = np.array([complex(*_pair(c, f"{p}channel[{j}]")) for j, c in enumerate(raw)])
        rate = _num(u, "rate_threshold_bpshz", p, 0.0)
        if rate < 0:
            raise ValidationError("rate threshold must be >= 0", p + "rate_threshold_bpshz")
        try:
            users.append(
                CommUser(
                    noise_w=dbm_to_w(_num(u, "noise_dbm", p)),
                    rate_threshold_bpshz=rate,
                    fading=fading,
                    angle_rad=_angle(u, p) if "angle_deg" in u else None,
                    pathloss_db=_num(u, "pathloss_db", p, 0.0),
                    channel=channel,
                )
            )
        except ValidationError as e:
            raise ValidationError(str(e).split(": ", 1)[-1], p + (e.field or "")) from None

    omega = doc.get("omega_rad_s")
    return ScenarioConfig(
        n_tx=_num(doc, "n_tx", "", kind=int),
        n_rx=_num(doc, "n_rx", "", kind=int),
        targets=tuple(targets),
        users=tuple(users),
        power_budget_w=dbm_to_w(_num(doc, "power_budget_dbm", "")),
        radar_noise_w=dbm_to_w(_num(doc, "radar_noise_dbm", "")),
        carrier_freq_hz=_num(doc, "carrier_freq_hz", "", 6e9),
        omega_rad_s=None if omega is None else _num(doc, "omega_rad_s", ""),
        bs_position=bs,
        signal_correlation=doc.get("signal_correlation", "coherent"),
        seed=_num(doc, "seed", "", 0, kind=int),
        delay_scale=_num(doc, "delay_scale", "", 1.0),
        name=str(doc.get("name", "scenario")),
    )


def _r(x: float) -> float:
    return round(float(x), _DIGITS)


def config_to_dict(config: ScenarioConfig) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": config.name,
        "n_tx": config.n_tx,
        "n_rx": config.n_rx,
        "carrier_freq_hz": float(config.carrier_freq_hz),
    }
    if config.omega_rad_s is not None:
        doc["omega_rad_s"] = float(config.omega_rad_s)
    doc.update(
        bs_position_m=[float(v) for v in config.bs_position],
        power_budget_dbm=_r(w_to_dbm(config.power_budget_w)),
        radar_noise_dbm=_r(w_to_dbm(config.radar_noise_w)),
        signal_correlation=config.signal_correlation,
        seed=config.seed,
        delay_scale=float(config.delay_scale),
    )
    doc["targets"] = [
        {"angle_deg": _r(math.degrees(t.angle_rad)), "range_m": float(t.range_m), "alpha": [t.alpha.real, t.alpha.imag]}
        for t in config.targets
    ]
    users = []
    for u in config.users:
        d = {"fading": u.fading}
        if u.angle_rad is not None:
            d["angle_deg"] = _r(math.degrees(u.angle_rad))
        d["pathloss_db"] = float(u.pathloss_db)
        d["noise_dbm"] = _r(w_to_dbm(u.noise_w))
        d["rate_threshold_bpshz"] = float(u.rate_threshold_bpshz)
        if u.fading == "fixed":
            d["channel"] = [[float(c.real), float(c.imag)] for c in u.channel]
        users.append(d)
    doc["users"] = users
    return doc


def loads(text: str, seed: int | None = None) -> ScenarioConfig:
    """Parse a scenario document; ``seed`` overrides the file's channel seed."""
    try:
        doc = yaml.load(text, Loader=_UniqueKeyLoader)
    except yaml.YAMLError as e:
        raise ValidationError(f"malformed YAML: {e}") from None
    if seed is not None and isinstance(doc, dict):
        doc = {**doc, "seed": int(seed)}
    return config_from_dict(doc)


def dumps(config: ScenarioConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False, default_flow_style=None)


def shipped_path(name: str) -> Path:
    if name not in SHIPPED:
        raise ValidationError(f"expected one of {SHIPPED}", "scenario")
    return Path(str(resources.files("isac_crb") / "scenarios" / f"{name}.yaml"))


def resolve_path(path_or_name: str | Path) -> Path:
    """A filesystem path, or the name of a shipped scenario."""
    p = Path(path_or_name)
    if p.exists():
        return p
    if str(path_or_name) in SHIPPED:
        return shipped_path(str(path_or_name))
    raise ValidationError(f"scenario file not found: {path_or_name}", "scenario")


def parse_scenario(path: str | Path, seed: int | None = None) -> ScenarioConfig:
    return loads(resolve_path(path).read_text(encoding="utf-8"), seed)


def load_shipped(name: str) -> ScenarioConfig:
    return parse_scenario(shipped_path(name))


def scenario_sha256(path: str | Path) -> str:
    return hashlib.sha256(resolve_path(path).read_bytes()).hexdigest()
