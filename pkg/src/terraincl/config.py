"""Run configuration: one flat `key = value` namespace over all modules.

The config file format is plain text, one `key = value` per line with `#`
comments. Defaults are the paper-scale protocol (4096 training agents, 512
validation agents per terrain, 500-iteration phases); `desk_config()` scales
the same protocol down to a workstation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .env import EnvConfig
from .ppo import PpoConfig
from .terrain import TerrainKind, TerrainParams

# TerrainParams.seed is derived per patch from the run seed, never a file key.
_EXCLUDED_KEYS = {("terrain", "seed")}


@dataclass
class RunConfig:
    scenario: str = "easy2hard"
    seed: int = 1
    num_train_agents: int = 4096
    agents_per_terrain_val: int = 512
    phase_length: int = 500
    validation_enabled: bool = True
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    terrain: TerrainParams = field(default_factory=TerrainParams)

    @property
    def backend(self) -> str:
        return self.env.backend

    def validate(self) -> None:
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        for name in ("num_train_agents", "agents_per_terrain_val", "phase_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        self.env.validate()
        self.ppo.validate()
        self.terrain.validate()

    def copy(self) -> "RunConfig":
        return dataclasses.replace(
            self,
            env=dataclasses.replace(self.env),
            ppo=dataclasses.replace(self.ppo),
            terrain=dataclasses.replace(self.terrain),
        )


def desk_config() -> RunConfig:
    """Workstation-scale defaults; the protocol itself is unchanged."""
    return RunConfig(num_train_agents=256, agents_per_terrain_val=64, phase_length=50)


def _registry() -> dict[str, tuple[str | None, str, type]]:
    """Flat key -> (section attr or None, field name, type)."""
    registry: dict[str, tuple[str | None, str, type]] = {}

    def add(section, cls):
        for f in fields(cls):
            if f.name in ("env", "ppo", "terrain"):
                continue
            if (section, f.name) in _EXCLUDED_KEYS:
                continue
            if f.name in registry:
                raise AssertionError(f"duplicate config key {f.name}")
            registry[f.name] = (section, f.name, f.type)

    add(None, RunConfig)
    add("env", EnvConfig)
    add("ppo", PpoConfig)
    add("terrain", TerrainParams)
    return registry


_REGISTRY = _registry()


def _parse_value(raw: str, typ) -> object:
    raw = raw.strip()
    name = typ if isinstance(typ, str) else typ.__name__
    if name == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if name == "int":
        return int(raw)
    if name == "float":
        return float(raw)
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    by_section: dict[str | None, dict[str, object]] = {}
    for key, raw in overrides.items():
        if key not in _REGISTRY:
            raise ValueError(f"unknown config key {key!r}")
        section, name, typ = _REGISTRY[key]
        try:
            value = _parse_value(raw, typ)
        except ValueError as err:
            raise ValueError(f"config key {key!r}: {err}") from err
        by_section.setdefault(section, {})[name] = value
    return dataclasses.replace(
        cfg,
        env=dataclasses.replace(cfg.env, **by_section.get("env", {})),
        ppo=dataclasses.replace(cfg.ppo, **by_section.get("ppo", {})),
        terrain=dataclasses.replace(cfg.terrain, **by_section.get("terrain", {})),
        **by_section.get(None, {}),
    )


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    """Overlay `key = value` lines from `path` onto `base` (paper defaults)."""
    overrides: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, raw = text.partition("=")
            overrides[key.strip()] = raw.strip()
    return apply_overrides(base or RunConfig(), overrides)


def save_config(cfg: RunConfig, path) -> None:
    """Write the fully resolved configuration, including derived constants."""
    lines = []
    for key, (section, name, _) in _REGISTRY.items():
        target = cfg if section is None else getattr(cfg, section)
        lines.append(f"{key} = {_format_value(getattr(target, name))}")
    if cfg.env.backend == "surrogate":
        from .surrogate import surrogate_target

        lines.append("# surrogate optimal actions (fixed artifact constants):")
        seen = []
        for kind in TerrainKind:
            for rough in (False, True):
                label = kind.value + ("+rough" if rough else "")
                if label in seen:
                    continue
                seen.append(label)
                vec = ",".join(repr(float(v)) for v in surrogate_target(kind, rough))
                lines.append(f"# surrogate_target_{label} = {vec}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
