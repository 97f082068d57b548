"""Session configuration: one structure shared by the CLI, config files
and the HTTP API.

Config files are YAML (key/value with nested `optimizer` / `evolution`
sections) mirroring the SessionConfig fields exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .optimizer import EvolutionConfig, OptimizerConfig

CRITIC_KINDS = ("pseudo", "target", "remote")
MODES = ("transparency", "masked_transparency", "opacity")
AGGS = ("arithmetic", "harmonic")


@dataclass
class SessionConfig:
    patch_dir: str
    prompt: str = ""
    region_prompts: list[str] | None = None  # grid*grid prompts, row-major
    canvas: int = 224
    grid: int = 1
    crop: int | None = None  # defaults to canvas when grid == 1, else 224
    include_global: bool | None = None  # default: only when grid > 1
    mode: str = "transparency"
    epsilon: float = 1e-6
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    agg: str = "arithmetic"
    critic: str = "pseudo"  # pseudo | target | remote
    critic_endpoint: str = ""
    critic_seed: int = 0
    target_path: str = ""
    num_patches: int | None = None
    base_scale: float = 1.0
    patch_lo_res: int = 64
    flood_fill_tolerance: float | None = None
    parallel_critics: bool = False
    trace: bool = False
    out_dir: str = "out"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.agg not in AGGS:
            raise ValueError(f"agg must be one of {AGGS}, got {self.agg!r}")
        if self.critic not in CRITIC_KINDS:
            raise ValueError(f"critic must be one of {CRITIC_KINDS}, got {self.critic!r}")
        if self.critic == "remote" and not self.critic_endpoint:
            raise ValueError("remote critic requires critic_endpoint")
        if self.critic == "target" and not self.target_path:
            raise ValueError("target critic requires target_path")

    @property
    def effective_crop(self) -> int:
        if self.crop is not None:
            return self.crop
        return self.canvas if self.grid == 1 else 224

    @property
    def effective_include_global(self) -> bool:
        if self.include_global is not None:
            return self.include_global
        return self.grid > 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SessionConfig":
        data = dict(data)
        opt = data.pop("optimizer", {}) or {}
        evo = data.pop("evolution", {}) or {}
        if "background" in data and data["background"] is not None:
            data["background"] = tuple(float(v) for v in data["background"])
        if "region_prompts" in data and data["region_prompts"] is not None:
            data["region_prompts"] = [str(p) for p in data["region_prompts"]]
        return cls(
            optimizer=opt if isinstance(opt, OptimizerConfig) else OptimizerConfig(**opt),
            evolution=evo if isinstance(evo, EvolutionConfig) else EvolutionConfig(**evo),
            **data,
        )


def load_config_file(path: str | Path) -> SessionConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    return SessionConfig.from_dict(data)
