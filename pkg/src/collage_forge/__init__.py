"""Differentiable collage generation: patches, transforms, rendering,
critics, evolutionary optimization and a live session service."""

from .config import SessionConfig, load_config_file
from .critics import (
    CriticKind,
    CriticReport,
    CriticSpec,
    CriticUnavailableError,
    LossAggregation,
    ProtocolError,
    RegionLayout,
    evaluate,
    evaluate_layout,
)
from .optimizer import (
    EvolutionConfig,
    OptimizerConfig,
    Population,
    RngStreams,
    RunResult,
    init_population,
    run,
)
from .patches import NoPatchesError, Patch, PatchLibrary, flood_fill_segment, load_library
from .renderer import (
    CanvasSpec,
    CollageGenome,
    Compositing,
    GradientBundle,
    PatchState,
    RenderMode,
    backward,
    hit_test,
    render,
    render_hires,
)
from .session import EditCommand, Session, SessionRegistry
from .transforms import HumanPose, build_matrix, from_human, squash, to_human

__version__ = "0.1.0"

__all__ = [
    "CanvasSpec",
    "CollageGenome",
    "Compositing",
    "CriticKind",
    "CriticReport",
    "CriticSpec",
    "CriticUnavailableError",
    "EditCommand",
    "EvolutionConfig",
    "GradientBundle",
    "HumanPose",
    "LossAggregation",
    "NoPatchesError",
    "OptimizerConfig",
    "Patch",
    "PatchLibrary",
    "PatchState",
    "Population",
    "ProtocolError",
    "RegionLayout",
    "RenderMode",
    "RngStreams",
    "RunResult",
    "Session",
    "SessionConfig",
    "SessionRegistry",
    "backward",
    "build_matrix",
    "evaluate",
    "evaluate_layout",
    "flood_fill_segment",
    "from_human",
    "hit_test",
    "init_population",
    "load_config_file",
    "load_library",
    "render",
    "render_hires",
    "run",
    "squash",
    "to_human",
]
