"""World and system parameters, YAML config loading, seeded random streams.

Internally every quantity is linear SI. The config file may give powers and
gains in dB/dBm instead; they are converted once at load time.

Config layout (all sections optional, missing fields take the defaults below)::

    scenario:
      base: [100, 100]            # charging base, m
      user: [1200, 400]           # communication user, m
      target: [450, 1150]         # true target, m
      initial_estimate: null      # first target guess; null -> area centre
      estimate_offset: null       # alternatively truth + [dx, dy]
      seed: 0
    system:
      alpha0_db: -50              # or alpha0 (linear)
      beta0_db: -47               # or beta0
      noise_psd_dbm_hz: -170      # or noise_psd (W/Hz)
      bandwidth: 1.0e6            # Hz
      tx_power_dbm: 20            # or tx_power (W)
      proc_gain: null             # null -> 0.1 * bandwidth
      altitude: 200
      vmax: 30
      t_fly: 1.5
      t_hover: 1
      mu: 5
      v_str: 20
      a: 10
      lx: 1500
      ly: 1500
    energy:
      p0: 80
      pi: 88.6
      u_tip: 120
      v0: 4.03
      d0: 0.6
      rho: 1.225
      s: 0.05
      area_a: 0.503
      e_tot: 35000                # or e_tot_kj
    experiment:
      eta: 0.5
      n_stg: 25
      n_tot: null                 # fixed total waypoint count (stage-size study)
      strategy: multi_stage
      runs: 100
      include_cov_term: true      # 8/d^4 Fisher term
      likelihood: candidate       # or "measured"
      max_sca_iter: 30
      sca_tol: 1.0e-4
      placement: fixed            # or "uniform": redraw target and user for every run
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError

Point = tuple[float, float]

CONFIG_ENV_VAR = "UAVISAC_CONFIG"

STRATEGIES = ("multi_stage", "one_stage", "straight", "comm_only", "sense_only")
LIKELIHOODS = ("candidate", "measured")
PLACEMENTS = ("fixed", "uniform")


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemParams:
    alpha0: float = db_to_linear(-50.0)
    beta0: float = db_to_linear(-47.0)
    noise_psd: float = dbm_to_watt(-170.0)
    bandwidth: float = 1.0e6
    tx_power: float = dbm_to_watt(20.0)
    proc_gain: float = 1.0e5
    altitude: float = 200.0
    vmax: float = 30.0
    t_fly: float = 1.5
    t_hover: float = 1.0
    mu: int = 5
    v_str: float = 20.0
    a: float = 10.0
    lx: float = 1500.0
    ly: float = 1500.0

    @property
    def noise_power(self) -> float:
        """sigma0^2 = N0 * B."""
        return self.noise_psd * self.bandwidth

    @property
    def comm_snr_ref(self) -> float:
        """P*alpha0/sigma0^2, the user SNR at 1 m."""
        return self.tx_power * self.alpha0 / self.noise_power

    @property
    def radar_info_gain(self) -> float:
        """P*Gp*beta0/(a*sigma0^2); the ranging Fisher weight is this over d^6."""
        return self.tx_power * self.proc_gain * self.beta0 / (self.a * self.noise_power)

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"system.{f.name} must be finite and > 0, got {value!r}")
        if int(self.mu) != self.mu or self.mu < 1:
            raise ConfigError(f"system.mu must be a positive integer, got {self.mu!r}")
        if self.v_str > self.vmax:
            raise ConfigError("system.v_str must not exceed system.vmax")


@dataclass(frozen=True)
class EnergyParams:
    p0: float = 80.0
    pi: float = 88.6
    u_tip: float = 120.0
    v0: float = 4.03
    d0: float = 0.6
    rho: float = 1.225
    s: float = 0.05
    area_a: float = 0.503
    e_tot: float = 35_000.0

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"energy.{f.name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class ExperimentParams:
    eta: float = 0.5
    n_stg: int = 25
    n_tot: int | None = None
    strategy: str = "multi_stage"
    runs: int = 100
    include_cov_term: bool = True
    likelihood: str = "candidate"
    max_sca_iter: int = 30
    sca_tol: float = 1e-4
    placement: str = "fixed"

    def validate(self) -> None:
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"experiment.eta must lie in [0, 1], got {self.eta!r}")
        if self.n_stg < 1:
            raise ConfigError("experiment.n_stg must be >= 1")
        if self.n_tot is not None and self.n_tot < 1:
            raise ConfigError("experiment.n_tot must be >= 1 when given")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"experiment.strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.runs < 1:
            raise ConfigError("experiment.runs must be >= 1")
        if self.likelihood not in LIKELIHOODS:
            raise ConfigError(f"experiment.likelihood must be one of {LIKELIHOODS}")
        if self.max_sca_iter < 1 or self.sca_tol <= 0:
            raise ConfigError("experiment.max_sca_iter >= 1 and sca_tol > 0 required")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"experiment.placement must be one of {PLACEMENTS}")


@dataclass(frozen=True)
class Scenario:
    base: Point = (100.0, 100.0)
    user: Point = (1200.0, 400.0)
    target_true: Point = (450.0, 1150.0)
    sys: SystemParams = field(default_factory=SystemParams)
    energy: EnergyParams = field(default_factory=EnergyParams)
    seed: int = 0
    initial_estimate: Point | None = None
    experiment: ExperimentParams = field(default_factory=ExperimentParams)

    def __post_init__(self) -> None:
        self.sys.validate()
        self.energy.validate()
        self.experiment.validate()
        for name in ("base", "user", "target_true"):
            self._check_inside(name, getattr(self, name))
        if self.initial_estimate is not None:
            self._check_inside("initial_estimate", self.initial_estimate)
        if not 0 <= self.seed < 2**64:
            raise ConfigError("scenario.seed must be a 64-bit unsigned integer")

    def _check_inside(self, name: str, p: Point) -> None:
        x, y = p
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ConfigError(f"scenario.{name} must be finite")
        if not (0.0 <= x <= self.sys.lx and 0.0 <= y <= self.sys.ly):
            raise ConfigError(
                f"scenario.{name}={list(p)} lies outside the area [0,{self.sys.lx}]x[0,{self.sys.ly}]"
            )

    @property
    def first_estimate(self) -> np.ndarray:
        if self.initial_estimate is None:
            return np.array([self.sys.lx / 2.0, self.sys.ly / 2.0])
        return np.asarray(self.initial_estimate, dtype=float)

    def placed(self, run: int, seed: int | None = None) -> Scenario:
        """The world seen by Monte-Carlo run ``run``.

        With uniform placement the target and user are drawn afresh per run, from a
        stream that depends on (seed, run) alone so every strategy sees the same draw.
        """
        if self.experiment.placement == "fixed":
            return self
        rng = new_rng(self.seed if seed is None else seed, f"placement/{run}")
        box = np.array([self.sys.lx, self.sys.ly])
        target, user = rng.uniform(0.0, 1.0, size=(2, 2)) * box
        return dataclasses.replace(self, target_true=tuple(target.tolist()), user=tuple(user.tolist()))

    def replace(self, **changes: Any) -> Scenario:
        """Copy with top-level or nested overrides (``sys``, ``energy``, ``experiment`` take dicts)."""
        for key in ("sys", "energy", "experiment"):
            if isinstance(changes.get(key), dict):
                changes[key] = dataclasses.replace(getattr(self, key), **changes[key])
        return dataclasses.replace(self, **changes)


def new_rng(seed: int, stream_label: str) -> np.random.Generator:
    """Independent deterministic stream for (seed, label)."""
    digest = hashlib.sha256(stream_label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *words]))


# ---------------------------------------------------------------- config I/O

_SECTIONS = ("scenario", "system", "energy", "experiment")


def _point(section: dict, key: str, where: str) -> Point | None:
    value = section.get(key)
    if value is None:
        return None
    try:
        x, y = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key} must be a pair of numbers, got {value!r}") from None
    return (x, y)


def _pop_number(section: dict, key: str, where: str) -> float | None:
    if key not in section:
        return None
    value = section.pop(key)
    if isinstance(value, str):
        # YAML 1.1 reads exponents without a sign (1.0e6) as strings
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {value!r}")
    return float(value)


def _pop_alternatives(section: dict, where: str, linear: str, **converters) -> float | None:
    """Read a field given either in linear units or via one of the log-unit keys."""
    found = [k for k in (linear, *converters) if k in section]
    if len(found) > 1:
        raise ConfigError(f"{where}: give only one of {found}")
    if not found:
        return None
    key = found[0]
    value = _pop_number(section, key, where)
    return value if key == linear else converters[key](value)


def scenario_from_dict(raw: dict) -> Scenario:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    sections = {}
    for name in _SECTIONS:
        sec = raw.get(name) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"section '{name}' must be a mapping")
        sections[name] = dict(sec)

    sc = sections["scenario"]
    sys_raw = sections["system"]
    en = sections["energy"]
    ex = sections["experiment"]

    sys_kwargs: dict[str, Any] = {}
    for key, conv in (
        ("alpha0", {"alpha0_db": db_to_linear}),
        ("beta0", {"beta0_db": db_to_linear}),
        ("noise_psd", {"noise_psd_dbm_hz": dbm_to_watt}),
        ("tx_power", {"tx_power_dbm": dbm_to_watt}),
    ):
        value = _pop_alternatives(sys_raw, "system", key, **conv)
        if value is not None:
            sys_kwargs[key] = value
    if sys_raw.get("proc_gain", 0) is None:
        del sys_raw["proc_gain"]
    proc_gain_given = "proc_gain" in sys_raw
    names = {f.name for f in dataclasses.fields(SystemParams)}
    for key in list(sys_raw):
        if key not in names:
            raise ConfigError(f"unknown field system.{key}")
        value = _pop_number(sys_raw, key, "system")
        sys_kwargs[key] = int(value) if key == "mu" else value
    if "mu" in sys_kwargs and sys_kwargs["mu"] < 1:
        raise ConfigError("system.mu must be a positive integer")
    if not proc_gain_given:
        sys_kwargs["proc_gain"] = 0.1 * sys_kwargs.get("bandwidth", SystemParams.bandwidth)
    system = SystemParams(**sys_kwargs)

    en_kwargs: dict[str, Any] = {}
    e_tot = _pop_alternatives(en, "energy", "e_tot", e_tot_kj=lambda kj: kj * 1e3)
    if e_tot is not None:
        en_kwargs["e_tot"] = e_tot
    names = {f.name for f in dataclasses.fields(EnergyParams)}
    for key in list(en):
        if key not in names:
            raise ConfigError(f"unknown field energy.{key}")
        en_kwargs[key] = _pop_number(en, key, "energy")
    energy = EnergyParams(**en_kwargs)

    ex_kwargs: dict[str, Any] = {}
    types = {"eta": float, "n_stg": int, "n_tot": int, "strategy": str, "runs": int,
             "include_cov_term": bool, "likelihood": str, "max_sca_iter": int, "sca_tol": float,
             "placement": str}
    for key, value in ex.items():
        if key not in types:
            raise ConfigError(f"unknown field experiment.{key}")
        if value is None and key == "n_tot":
            ex_kwargs[key] = None
            continue
        try:
            ex_kwargs[key] = types[key](value)
        except (TypeError, ValueError):
            raise ConfigError(f"experiment.{key} has invalid value {value!r}") from None
    experiment = ExperimentParams(**ex_kwargs)

    allowed = {"base", "user", "target", "initial_estimate", "estimate_offset", "seed"}
    unknown = set(sc) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) scenario.{sorted(unknown)}")
    kwargs: dict[str, Any] = {"sys": system, "energy": energy, "experiment": experiment}
    for key, dest in (("base", "base"), ("user", "user"), ("target", "target_true")):
        p = _point(sc, key, "scenario")
        if p is not None:
            kwargs[dest] = p
    init = _point(sc, "initial_estimate", "scenario")
    offset = _point(sc, "estimate_offset", "scenario")
    if init is not None and offset is not None:
        raise ConfigError("scenario: give initial_estimate or estimate_offset, not both")
    if offset is not None:
        tx, ty = kwargs.get("target_true", Scenario.target_true)
        init = (tx + offset[0], ty + offset[1])
    kwargs["initial_estimate"] = init
    if "seed" in sc:
        seed = sc["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError(f"scenario.seed must be an integer, got {seed!r}")
        kwargs["seed"] = seed
    return Scenario(**kwargs)


def scenario_to_dict(scenario: Scenario) -> dict:
    """Plain linear-unit mapping that :func:`scenario_from_dict` reads back exactly."""
    return {
        "scenario": {
            "base": list(scenario.base),
            "user": list(scenario.user),
            "target": list(scenario.target_true),
            "initial_estimate": None if scenario.initial_estimate is None else list(scenario.initial_estimate),
            "seed": scenario.seed,
        },
        "system": dataclasses.asdict(scenario.sys),
        "energy": dataclasses.asdict(scenario.energy),
        "experiment": dataclasses.asdict(scenario.experiment),
    }


def load_scenario(path: str | os.PathLike | None = None) -> Scenario:
    """Read a YAML config. With ``path=None`` the ``UAVISAC_CONFIG`` variable is consulted."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
        if not path:
            return Scenario()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        loc = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: parse error at {loc}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None
    try:
        return scenario_from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def save_scenario(scenario: Scenario, path: str | os.PathLike) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(scenario), sort_keys=False), encoding="utf-8")
