"""Run configuration: JSON parsing with field-path errors and canonical output."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .energy import HysteresisParams
from .evolution import BOTH, BRANCH_POLICIES, ForcingSchedule, PartitionSpec, ScheduleError
from .grid import DEFAULT_EPS0, MIN_GUARD_BAND, DomainError, GridDomain, domain_from_config
from .solver import MAX, MIN


class ConfigError(ValueError):
    """Schema or assumption violation; the message starts with the field path."""


_TOP_KEYS = {"domain", "params", "eps0", "initial", "amplitude", "selection", "schedule", "partition",
             "tolerances", "output", "seed", "branch_policy", "snapshots", "max_branches"}


@dataclass(frozen=True)
class Tolerances:
    tol_lin: float = 1e-10
    tol_E: float = 1e-10
    tol_EDI: float = 1e-8


@dataclass(frozen=True)
class RunConfig:
    domain: dict
    params: HysteresisParams
    eps0: float = DEFAULT_EPS0
    initial: dict = field(default_factory=lambda: {"distance": 0.0})
    amplitude: float | None = None
    selection: str = MAX
    schedule: ForcingSchedule | None = None
    partition: PartitionSpec | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    output: str = "out"
    seed: int = 0
    branch_policy: str = BOTH
    snapshots: tuple = ()
    max_branches: int = 8

    def build_domain(self) -> GridDomain:
        try:
            return domain_from_config(self.domain, eps0=self.eps0)
        except (DomainError, KeyError, TypeError) as exc:
            raise ConfigError(f"domain: {exc}") from exc

    def initial_mask(self, domain: GridDomain) -> np.ndarray:
        """DIRICHLET cells plus flippable cells within ``initial.distance`` of them."""
        r = float(self.initial.get("distance", 0.0))
        dist = ndimage.distance_transform_edt(~domain.dirichlet, sampling=domain.h)
        return domain.dirichlet | (domain.flippable & (dist <= r + 1e-9 * domain.h))

    def to_dict(self) -> dict:
        out = {
            "domain": dict(self.domain),
            "params": {"mu_minus": self.params.mu_minus, "mu_plus": self.params.mu_plus},
            "eps0": self.eps0,
            "initial": dict(self.initial),
            "selection": self.selection,
            "tolerances": {"tol_lin": self.tolerances.tol_lin, "tol_E": self.tolerances.tol_E,
                           "tol_EDI": self.tolerances.tol_EDI},
            "output": self.output,
            "seed": self.seed,
            "branch_policy": self.branch_policy,
            "snapshots": list(self.snapshots),
            "max_branches": self.max_branches,
        }
        if self.amplitude is not None:
            out["amplitude"] = self.amplitude
        if self.schedule is not None:
            out["schedule"] = {"times": list(self.schedule.times), "amplitudes": list(self.schedule.amplitudes)}
        if self.partition is not None:
            out["partition"] = self.partition.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _number(obj: dict, key: str, path: str, default=None, positive: bool = False) -> float:
    if key not in obj:
        if default is None:
            raise ConfigError(f"{path}.{key}: required field missing")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{path}.{key}: expected a finite number, got {v!r}")
    if positive and v <= 0:
        raise ConfigError(f"{path}.{key}: must be positive")
    return float(v)


def _object(obj: dict, key: str, path: str, required: bool = True) -> dict | None:
    if key not in obj:
        if required:
            raise ConfigError(f"{path}.{key}: required field missing")
        return None
    v = obj[key]
    if not isinstance(v, dict):
        raise ConfigError(f"{path}.{key}: expected an object")
    return v


def _number_list(obj: dict, key: str, path: str) -> list[float]:
    v = obj.get(key)
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path}.{key}: expected a non-empty list of numbers")
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError(f"{path}.{key}[{i}]: expected a finite number, got {x!r}")
    return [float(x) for x in v]


def _parse_domain(d: dict) -> dict:
    path = "domain"
    kind = d.get("kind")
    out = {"kind": kind}
    if kind == "interval":
        out["length"] = _number(d, "length", path, positive=True)
        out["h"] = _number(d, "h", path, positive=True)
        tw = d.get("two_sided", False)
        if not isinstance(tw, bool):
            raise ConfigError(f"{path}.two_sided: expected true or false")
        out["two_sided"] = tw
    elif kind == "disks":
        centers = d.get("centers")
        if not isinstance(centers, list) or not centers:
            raise ConfigError(f"{path}.centers: expected a non-empty list of [x, y] points")
        for i, c in enumerate(centers):
            if not (isinstance(c, list) and len(c) == 2 and all(isinstance(v, (int, float)) for v in c)):
                raise ConfigError(f"{path}.centers[{i}]: expected [x, y]")
        out["centers"] = [[float(v) for v in c] for c in centers]
        out["r0"] = _number(d, "r0", path, positive=True)
        box = d.get("box")
        if not (isinstance(box, list) and len(box) == 2 and all(isinstance(b, list) and len(b) == 2 for b in box)):
            raise ConfigError(f"{path}.box: expected [[xmin, xmax], [ymin, ymax]]")
        out["box"] = [[float(v) for v in b] for b in box]
        out["h"] = _number(d, "h", path, positive=True)
    else:
        raise ConfigError(f"{path}.kind: expected \"interval\" or \"disks\", got {kind!r}")
    gb = d.get("guard_band", MIN_GUARD_BAND)
    if not isinstance(gb, int) or isinstance(gb, bool) or gb < MIN_GUARD_BAND:
        raise ConfigError(f"{path}.guard_band: integer >= {MIN_GUARD_BAND} required")
    out["guard_band"] = gb
    return out


def parse_config(text: str) -> RunConfig:
    """Validate a JSON configuration; every error names the offending field."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"$: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("$: top level must be an object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown field")
    domain = _parse_domain(_object(raw, "domain", "$"))
    p = _object(raw, "params", "$")
    mu_m = _number(p, "mu_minus", "params")
    mu_p = _number(p, "mu_plus", "params")
    if not 0.0 < mu_m < 1.0:
        raise ConfigError("params.mu_minus: assumption: 0 < μ₋ < 1")
    if not mu_p > 0.0:
        raise ConfigError("params.mu_plus: assumption: 0 < μ₊")
    params = HysteresisParams(mu_m, mu_p)
    eps0 = _number(raw, "eps0", "$", default=DEFAULT_EPS0)
    if eps0 <= 0:
        raise ConfigError("eps0: assumption(iii): forcing floor eps0 must be positive")
    initial = _object(raw, "initial", "$", required=False) or {"distance": 0.0}
    dist = _number(initial, "distance", "initial", default=0.0)
    if dist < 0:
        raise ConfigError("initial.distance: must be nonnegative")
    initial = {"distance": dist}
    amplitude = None
    if "amplitude" in raw:
        amplitude = _number(raw, "amplitude", "$")
        if amplitude < eps0:
            raise ConfigError(f"amplitude: assumption(iii): forcing floor, {amplitude:g} < eps0 = {eps0:g}")
    selection = raw.get("selection", MAX)
    if selection not in (MIN, MAX):
        raise ConfigError("selection: expected \"min\" or \"max\"")
    schedule = None
    s = _object(raw, "schedule", "$", required=False)
    if s is not None:
        times = _number_list(s, "times", "schedule")
        amps = _number_list(s, "amplitudes", "schedule")
        if len(times) != len(amps):
            raise ConfigError("schedule.amplitudes: length differs from schedule.times")
        for i in range(len(amps) - 1):
            if amps[i + 1] == amps[i]:
                raise ConfigError(f"schedule.amplitudes[{i + 1}]: strict monotonicity violated on segment {i}")
        if min(amps) < eps0:
            raise ConfigError(f"schedule.amplitudes: assumption(iii): forcing floor, min {min(amps):g} < eps0 = {eps0:g}")
        try:
            schedule = ForcingSchedule(tuple(times), tuple(amps), eps0=eps0)
        except ScheduleError as exc:
            raise ConfigError(f"schedule: {exc}") from exc
    partition = None
    q = _object(raw, "partition", "$", required=False)
    if q is not None:
        if schedule is None:
            raise ConfigError("partition: requires a schedule")
        delta = _number(q, "delta", "partition", positive=True)
        mandatory = _number_list(q, "mandatory", "partition") if q.get("mandatory") else []
        for i, t in enumerate(mandatory):
            if not schedule.times[0] <= t <= schedule.times[-1]:
                raise ConfigError(f"partition.mandatory[{i}]: time {t:g} outside the schedule")
        ref = q.get("refinement", 2)
        if not isinstance(ref, int) or isinstance(ref, bool) or ref < 2:
            raise ConfigError("partition.refinement: integer >= 2 required")
        partition = PartitionSpec(delta, tuple(mandatory), ref)
    elif schedule is not None:
        partition = PartitionSpec(min(np.diff(schedule.times)))
    tol = _object(raw, "tolerances", "$", required=False) or {}
    tolerances = Tolerances(
        tol_lin=_number(tol, "tol_lin", "tolerances", default=1e-10, positive=True),
        tol_E=_number(tol, "tol_E", "tolerances", default=1e-10, positive=True),
        tol_EDI=_number(tol, "tol_EDI", "tolerances", default=1e-8, positive=True),
    )
    output = raw.get("output", "out")
    if not isinstance(output, str) or not output:
        raise ConfigError("output: expected a non-empty path string")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed: expected a nonnegative integer")
    policy = raw.get("branch_policy", BOTH)
    if policy not in BRANCH_POLICIES:
        raise ConfigError(f"branch_policy: expected one of {', '.join(BRANCH_POLICIES)}")
    snaps = tuple(_number_list(raw, "snapshots", "$")) if raw.get("snapshots") else ()
    max_br = raw.get("max_branches", 8)
    if not isinstance(max_br, int) or isinstance(max_br, bool) or max_br < 1:
        raise ConfigError("max_branches: expected a positive integer")
    cfg = RunConfig(domain, params, eps0, initial, amplitude, selection, schedule, partition, tolerances,
                    output, seed, policy, snaps, max_br)
    # geometry errors surface at parse time, before any solve
    cfg.build_domain()
    return cfg


def load_config(path: str) -> RunConfig:
    """Read and parse a config file; unreadable files raise OSError naming the path."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config(text)
