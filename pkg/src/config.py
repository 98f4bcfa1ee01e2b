"""Experiment configuration.

Hyperparameters live in frozen dataclasses whose defaults are the shared
values used by every experiment. Configurations can be read from flat
`key = value` files and overridden from the command line.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator, Mapping, Optional, Union

# Environment names and the instance used for hyperparameter tuning.
ENV_NAMES = ("procmaze", "buttongrid", "panflute", "opengrid")
TUNING_SIZES = {"procmaze": 4, "buttongrid": 4, "panflute": 7, "opengrid": 12}

AGENT_KINDS = ("er", "simple-model", "perfect-model")

# regime -> (environment steps, updates per step); both give 10^6 updates
REGIMES = {
    "high": (1_000_000, 1),
    "low": (100_000, 10),
}

TEMPERATURE_GRID = (0.0125, 0.025, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2)
STEP_SIZE_GRID = (1.25e-5, 2.5e-5, 5e-5, 1e-4, 2e-4, 4e-4, 8e-4, 1.6e-3, 3.2e-3)


class ConfigError(ValueError):
    """Raised for unknown keys or values that cannot be coerced."""
    pass


def iter_key_values(text: str) -> Iterator[tuple[str, str]]:
    """
    Yield (key, value) pairs from flat `key = value` text.

    Blank lines and `#` comments are skipped. Keys may repeat; callers decide
    what repetition means.

    Raises:
        ConfigError: For lines without an `=`
    """
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        yield key.strip().replace("-", "_"), value.strip()


def load_config_file(path: Union[str, Path]) -> dict[str, str]:
    """
    Read a flat config file into a dict of raw strings.

    Raises:
        ConfigError: If a key is given twice
    """
    values = {}
    for key, value in iter_key_values(Path(path).read_text()):
        if key in values:
            raise ConfigError(f"key {key!r} given twice in {path}")
        values[key] = value
    return values


def _coerce(value, target: type, key: str):
    if not isinstance(value, str):
        return value
    try:
        if target is bool:
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if target is int:
            return int(float(value)) if "e" in value.lower() else int(value)
        if target is float:
            return float(value)
        if target is tuple:
            return tuple(float(v) for v in value.split(","))
    except ValueError:
        raise ConfigError(f"cannot read {key!r} = {value!r} as {target.__name__}")
    return value


def _field_types(cls) -> dict[str, type]:
    mapping = {"int": int, "float": float, "bool": bool, "str": str}
    types = {}
    for f in fields(cls):
        name = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        types[f.name] = mapping.get(name, tuple if name.startswith("tuple") else str)
    return types


@dataclass(frozen=True)
class AgentHyper:
    """Network, optimizer and learning hyperparameters shared by all agents."""

    hidden_layers: int = 3
    hidden_units: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-5
    weight_decay: float = 1e-6
    discount: float = 0.9
    model_free_batch: int = 320
    rollout_batch: int = 32
    target_update_every: int = 100
    buffer_size: int = 100_000
    training_start: int = 1000
    model_step_size: float = 2e-4


@dataclass(frozen=True)
class EvalProtocol:
    """How greedy policies are scored."""

    eval_interval: int = 5000
    eval_episodes: int = 10
    eval_steps: int = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment: environment instance, agent, data regime and hyperparameters.

    `scale` shrinks the number of environment steps (and hence updates) for
    desk runs while keeping the regime's updates-per-step ratio.
    """

    env: str = "panflute"
    size: int = 7
    agent_kind: str = "simple-model"
    regime: str = "low"
    rollout_length: int = 10
    q_step_size: float = 2e-4
    temperature: float = 0.1
    seeds: int = 30
    base_seed: int = 0
    disable_spontaneous: bool = False
    eval_interval: int = 5000
    eval_episodes: int = 10
    eval_steps: int = 1000
    scale: float = 1.0
    workers: int = 1
    output: str = "results"
    hyper: AgentHyper = field(default_factory=AgentHyper)

    def __post_init__(self):
        if self.env not in ENV_NAMES:
            raise ConfigError(f"env must be one of {ENV_NAMES}, got {self.env!r}")
        if self.agent_kind not in AGENT_KINDS:
            raise ConfigError(f"agent_kind must be one of {AGENT_KINDS}, got {self.agent_kind!r}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {tuple(REGIMES)}, got {self.regime!r}")
        if self.rollout_length < 1:
            raise ConfigError("rollout_length must be at least 1")
        if self.q_step_size <= 0 or self.temperature <= 0:
            raise ConfigError("q_step_size and temperature must be positive")
        if not 0 < self.scale <= 1:
            raise ConfigError(f"scale must be in (0, 1], got {self.scale}")
        if self.seeds < 1 or self.eval_interval < 1:
            raise ConfigError("seeds and eval_interval must be positive")

    @classmethod
    def from_mapping(cls, values: Mapping[str, object], base: Optional["ExperimentConfig"] = None) -> "ExperimentConfig":
        """
        Build a config from raw values, coercing strings to field types.

        Keys naming AgentHyper fields update the nested hyperparameters.

        Raises:
            ConfigError: For unknown keys or values of the wrong type
        """
        base = base or cls()
        own = _field_types(cls)
        nested = _field_types(AgentHyper)
        top, hyper = {}, {}
        for key, value in values.items():
            key = key.replace("-", "_")
            if value is None:
                continue
            if key in own and key != "hyper":
                top[key] = _coerce(value, own[key], key)
            elif key in nested:
                hyper[key] = _coerce(value, nested[key], key)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if hyper:
            top["hyper"] = replace(base.hyper, **hyper)
        return replace(base, **top)

    @property
    def total_steps(self) -> int:
        steps, _ = REGIMES[self.regime]
        return max(1, int(round(steps * self.scale)))

    @property
    def updates_per_step(self) -> int:
        return REGIMES[self.regime][1]

    @property
    def total_updates(self) -> int:
        return self.total_steps * self.updates_per_step

    @property
    def eval_protocol(self) -> EvalProtocol:
        return EvalProtocol(self.eval_interval, self.eval_episodes, self.eval_steps)

    def identity(self) -> dict:
        """Fields that determine a seed's results; seeds, workers and output location excluded."""
        data = asdict(self)
        for key in ("seeds", "base_seed", "workers", "output"):
            data.pop(key)
        return data

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class GridSpec:
    """
    Hyperparameter grid over Q step size and softmax temperature.

    When the best cell lies on a boundary, the grid may be extended by one
    octave in that direction, at most `max_extensions` times per axis.
    """

    temperatures: tuple = TEMPERATURE_GRID
    step_sizes: tuple = STEP_SIZE_GRID
    max_extensions: int = 2

    def __post_init__(self):
        for name in ("temperatures", "step_sizes"):
            values = getattr(self, name)
            if not values or any(v <= 0 for v in values):
                raise ConfigError(f"{name} must be non-empty and positive")
            if list(values) != sorted(values):
                raise ConfigError(f"{name} must be sorted ascending")

    @property
    def cells(self) -> list[tuple[float, float]]:
        """(step_size, temperature) pairs, step size major."""
        return [(a, t) for a in self.step_sizes for t in self.temperatures]

    def extended(self, axis: str, upward: bool) -> "GridSpec":
        """Grid with one more octave on `axis` ('step_size' or 'temperature')."""
        name = "step_sizes" if axis == "step_size" else "temperatures"
        values = getattr(self, name)
        values = values + (values[-1] * 2,) if upward else (values[0] / 2,) + values
        return replace(self, **{name: values})
