"""Experiment configuration: a flat key = value text format, profile
overrides, and the resolved ExperimentConfig object.

Precedence, lowest to highest: built-in defaults, --profile overrides,
keys in the config file, CLI flags (--seed / --out / --threads).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .attacks import AttackParams
from .features import NormalizationSpec
from .federated import GateConfig, GateStrategy, InfluenceTable
from .model import TrainConfig
from .trace import ChannelConfig, ScenarioConfig

KNOWN_METHODS = ("fl-tp", "fed-avg", "centralized")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


#: built-in defaults (full-scale protocol)
DEFAULTS: dict[str, str] = {
    "methods": "fl-tp, fed-avg, centralized",
    "penetrations": "0.25, 0.5, 0.75",
    "vehicle_counts": "4, 10, 20",
    "repeats": "50",
    "master_seed": "42",
    "out_dir": "results",
    "region_side": "10000",
    "dt": "1.0",
    "n_steps": "100",
    "v_max": "40",
    "accel_sigma": "0.5",
    "tx_power_dbm": "20",
    "path_loss_exponent": "2.0",
    "reference_distance": "1.0",
    "shadowing_sigma": "2.0",
    "rssi_min": "-100",
    "rssi_max": "-40",
    "hidden_size": "64",
    "learning_rate": "1e-5",
    "momentum": "0.5",
    "batch_size": "128",
    "local_episodes": "10",
    "global_rounds": "300",
    "gate_strategy": "accuracy",
    "gate_threshold": "0.2",
    "influence_constant": "1.0",
    "influence_constant_offset": "0.8",
    "influence_random": "1.0",
    "influence_random_offset": "0.8",
    "influence_eventual_stop": "1.0",
    "attack_fixed_x": "",  # empty -> region centre
    "attack_fixed_y": "",
    "attack_offset_x": "250",
    "attack_offset_y": "-150",
    "attack_random_offset_max": "300",
    "attack_stop_probability": "0.3",
    "train_fraction": "0.8",
    "judgment_threshold": "0.5",
    "checkpoints": "false",
}

#: profile overrides; "desk" is the CI-scale protocol
PROFILES: dict[str, dict[str, str]] = {
    "paper": {},
    "desk": {
        "vehicle_counts": "4",
        "global_rounds": "30",
        "repeats": "2",
        "n_steps": "64",
        "hidden_size": "32",
        # calibrated so 30 desk rounds land mid-descent, where the weighted
        # aggregation's ordering advantage over plain averaging is measurable
        "learning_rate": "0.0045",
    },
}


@dataclass
class ExperimentConfig:
    methods: list[str]
    penetrations: list[float]
    vehicle_counts: list[int]
    repeats: int
    master_seed: int
    out_dir: str
    scenario: ScenarioConfig  # template; n_vehicles/penetration/seed set per cell
    attack: AttackParams
    norm: NormalizationSpec
    train: TrainConfig
    gate: GateConfig
    influence: InfluenceTable
    train_fraction: float = 0.8
    judgment_threshold: float = 0.5
    checkpoints: bool = False

    def validate(self) -> None:
        if not self.methods:
            raise ConfigError("methods: at least one method required")
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise ConfigError(f"methods: unknown method {m!r} (choose from {KNOWN_METHODS})")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError(f"methods: duplicate entries in {self.methods}")
        if not self.penetrations:
            raise ConfigError("penetrations: at least one value required")
        for p in self.penetrations:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"penetrations: value {p} outside [0, 1]")
        if not self.vehicle_counts:
            raise ConfigError("vehicle_counts: at least one value required")
        for n in self.vehicle_counts:
            if n < 2:
                raise ConfigError(f"vehicle_counts: value {n} below 2")
        if self.repeats < 1:
            raise ConfigError(f"repeats: must be >= 1, got {self.repeats}")
        if self.master_seed < 0:
            raise ConfigError(f"master_seed: must be >= 0, got {self.master_seed}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction: must be in (0, 1), got {self.train_fraction}")
        if self.judgment_threshold <= 0:
            raise ConfigError(f"judgment_threshold: must be > 0, got {self.judgment_threshold}")
        try:
            self.scenario.validate()
            self.train.validate()
            self.gate.validate()
            self.norm.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{line_no}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{line_no}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _parse_float(kv: dict[str, str], key: str) -> float:
    try:
        return float(kv[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: not a number: {kv[key]!r}") from exc


def _parse_int(kv: dict[str, str], key: str) -> int:
    try:
        return int(kv[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: not an integer: {kv[key]!r}") from exc


def _parse_bool(kv: dict[str, str], key: str) -> bool:
    v = kv[key].lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: not a boolean: {kv[key]!r}")


def _parse_list(kv: dict[str, str], key: str, conv) -> list:
    items = [s.strip() for s in kv[key].split(",") if s.strip()]
    try:
        return [conv(s) for s in items]
    except ValueError as exc:
        raise ConfigError(f"{key}: bad list value in {kv[key]!r}") from exc


def config_from_kv(kv_in: dict[str, str], profile: str | None = None) -> ExperimentConfig:
    """Resolve raw key/value strings (plus optional profile) to a validated
    ExperimentConfig. Unknown keys are errors."""
    for key in kv_in:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")
    kv = dict(DEFAULTS)
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile: {profile!r} (choose from {sorted(PROFILES)})")
        kv.update(PROFILES[profile])
    kv.update(kv_in)

    vehicle_counts = _parse_list(kv, "vehicle_counts", int)
    if not vehicle_counts:
        raise ConfigError("vehicle_counts: at least one value required")
    region_side = _parse_float(kv, "region_side")
    v_max = _parse_float(kv, "v_max")
    fixed_x = _parse_float(kv, "attack_fixed_x") if kv["attack_fixed_x"] else region_side / 2.0
    fixed_y = _parse_float(kv, "attack_fixed_y") if kv["attack_fixed_y"] else region_side / 2.0
    p_stop = _parse_float(kv, "attack_stop_probability")

    strategy_name = kv["gate_strategy"].lower()
    try:
        strategy = GateStrategy(strategy_name)
    except ValueError as exc:
        raise ConfigError(f"gate_strategy: unknown strategy {kv['gate_strategy']!r}") from exc

    try:
        attack = AttackParams(
            region_side=region_side,
            v_max=v_max,
            fixed_point=(fixed_x, fixed_y),
            fixed_offset=(_parse_float(kv, "attack_offset_x"), _parse_float(kv, "attack_offset_y")),
            random_offset_max=_parse_float(kv, "attack_random_offset_max"),
            stop_probabilities=(1.0 - p_stop, p_stop),
        )
        influence = InfluenceTable(
            constant=_parse_float(kv, "influence_constant"),
            constant_offset=_parse_float(kv, "influence_constant_offset"),
            random=_parse_float(kv, "influence_random"),
            random_offset=_parse_float(kv, "influence_random_offset"),
            eventual_stop=_parse_float(kv, "influence_eventual_stop"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    cfg = ExperimentConfig(
        methods=_parse_list(kv, "methods", str),
        penetrations=_parse_list(kv, "penetrations", float),
        vehicle_counts=vehicle_counts,
        repeats=_parse_int(kv, "repeats"),
        master_seed=_parse_int(kv, "master_seed"),
        out_dir=kv["out_dir"],
        scenario=ScenarioConfig(
            n_vehicles=max(2, vehicle_counts[0]),
            penetration=0.0,
            region_side=region_side,
            dt=_parse_float(kv, "dt"),
            n_steps=_parse_int(kv, "n_steps"),
            v_max=v_max,
            accel_sigma=_parse_float(kv, "accel_sigma"),
            rng_seed=0,
            channel=ChannelConfig(
                tx_power_dbm=_parse_float(kv, "tx_power_dbm"),
                path_loss_exponent=_parse_float(kv, "path_loss_exponent"),
                reference_distance=_parse_float(kv, "reference_distance"),
                shadowing_sigma=_parse_float(kv, "shadowing_sigma"),
            ),
        ),
        attack=attack,
        norm=NormalizationSpec(
            region_side=region_side,
            v_max=v_max,
            rssi_min=_parse_float(kv, "rssi_min"),
            rssi_max=_parse_float(kv, "rssi_max"),
        ),
        train=TrainConfig(
            hidden_size=_parse_int(kv, "hidden_size"),
            learning_rate=_parse_float(kv, "learning_rate"),
            momentum=_parse_float(kv, "momentum"),
            batch_size=_parse_int(kv, "batch_size"),
            local_episodes=_parse_int(kv, "local_episodes"),
            global_rounds=_parse_int(kv, "global_rounds"),
        ),
        gate=GateConfig(strategy=strategy, threshold=_parse_float(kv, "gate_threshold")),
        influence=influence,
        train_fraction=_parse_float(kv, "train_fraction"),
        judgment_threshold=_parse_float(kv, "judgment_threshold"),
        checkpoints=_parse_bool(kv, "checkpoints"),
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path, profile: str | None = None) -> ExperimentConfig:
    """Read and resolve a config file. An empty file yields pure defaults."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_kv(parse_kv_text(text, source=str(path)), profile=profile)


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize a resolved config back to the flat text form; feeding the
    result to load_config reproduces an equal ExperimentConfig."""
    lines = [
        f"methods = {', '.join(cfg.methods)}",
        f"penetrations = {', '.join(repr(p) for p in cfg.penetrations)}",
        f"vehicle_counts = {', '.join(str(n) for n in cfg.vehicle_counts)}",
        f"repeats = {cfg.repeats}",
        f"master_seed = {cfg.master_seed}",
        f"out_dir = {cfg.out_dir}",
        f"region_side = {cfg.scenario.region_side!r}",
        f"dt = {cfg.scenario.dt!r}",
        f"n_steps = {cfg.scenario.n_steps}",
        f"v_max = {cfg.scenario.v_max!r}",
        f"accel_sigma = {cfg.scenario.accel_sigma!r}",
        f"tx_power_dbm = {cfg.scenario.channel.tx_power_dbm!r}",
        f"path_loss_exponent = {cfg.scenario.channel.path_loss_exponent!r}",
        f"reference_distance = {cfg.scenario.channel.reference_distance!r}",
        f"shadowing_sigma = {cfg.scenario.channel.shadowing_sigma!r}",
        f"rssi_min = {cfg.norm.rssi_min!r}",
        f"rssi_max = {cfg.norm.rssi_max!r}",
        f"hidden_size = {cfg.train.hidden_size}",
        f"learning_rate = {cfg.train.learning_rate!r}",
        f"momentum = {cfg.train.momentum!r}",
        f"batch_size = {cfg.train.batch_size}",
        f"local_episodes = {cfg.train.local_episodes}",
        f"global_rounds = {cfg.train.global_rounds}",
        f"gate_strategy = {cfg.gate.strategy.value}",
        f"gate_threshold = {cfg.gate.threshold!r}",
        f"influence_constant = {cfg.influence.constant!r}",
        f"influence_constant_offset = {cfg.influence.constant_offset!r}",
        f"influence_random = {cfg.influence.random!r}",
        f"influence_random_offset = {cfg.influence.random_offset!r}",
        f"influence_eventual_stop = {cfg.influence.eventual_stop!r}",
        f"attack_fixed_x = {cfg.attack.fixed_point[0]!r}",
        f"attack_fixed_y = {cfg.attack.fixed_point[1]!r}",
        f"attack_offset_x = {cfg.attack.fixed_offset[0]!r}",
        f"attack_offset_y = {cfg.attack.fixed_offset[1]!r}",
        f"attack_random_offset_max = {cfg.attack.random_offset_max!r}",
        f"attack_stop_probability = {cfg.attack.stop_probabilities[1]!r}",
        f"train_fraction = {cfg.train_fraction!r}",
        f"judgment_threshold = {cfg.judgment_threshold!r}",
        f"checkpoints = {'true' if cfg.checkpoints else 'false'}",
    ]
    return "\n".join(lines) + "\n"
