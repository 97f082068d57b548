"""HTTP JSON API over the session registry.

Thin layer: pydantic models validate the wire shapes, the registry and
Session objects do the work, and domain exceptions map onto HTTP status
codes (unknown id -> 404, wrong phase -> 409, bad input -> 400/422).
"""

from __future__ import annotations

import base64

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .config import SessionConfig
from .critics import CriticUnavailableError, ProtocolError
from .patches import NoPatchesError
from .session import (
    ChecksumError,
    EditCommand,
    EditWhileRunningError,
    InvalidPhaseError,
    LibraryMismatchError,
    SessionNotFoundError,
    SessionRegistry,
)
from .transforms import HumanPose

# -- wire models ----------------------------------------------------------


class OptimizerModel(BaseModel):
    steps: int = 1000
    lr_affine: float = 0.05
    lr_color: float = 0.05
    lr_order: float = 0.05
    method: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = 5.0
    seed: int = 0


class EvolutionModel(BaseModel):
    population: int = 4
    tournament_period: int = 100
    p_swap: float = 0.05
    sigma_affine: float = 0.02
    sigma_color: float = 0.02
    sigma_order: float = 0.02
    enabled: bool = True


class SessionConfigModel(BaseModel):
    patch_dir: str
    prompt: str = ""
    region_prompts: list[str] | None = None
    canvas: int = 224
    grid: int = 1
    crop: int | None = None
    include_global: bool | None = None
    mode: str = "transparency"
    epsilon: float = 1e-6
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    agg: str = "arithmetic"
    critic: str = "pseudo"
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
    optimizer: OptimizerModel = Field(default_factory=OptimizerModel)
    evolution: EvolutionModel = Field(default_factory=EvolutionModel)

    def to_config(self) -> SessionConfig:
        return SessionConfig.from_dict(self.model_dump())


class SessionStateModel(BaseModel):
    session_id: str
    phase: str
    step: int
    selected_genome: int
    genome_losses: list[float | None]
    population: int
    num_patches: int
    total_critics: int
    last_error: str | None = None


class CreateSessionResponse(BaseModel):
    session_id: str
    state: SessionStateModel


class ControlRequest(BaseModel):
    action: str  # run | pause | step_n
    n: int = 1


class PoseModel(BaseModel):
    x: float
    y: float
    rotation: float
    scale: float
    squeeze: float
    shear: float
    rgb: tuple[float, float, float]
    order: float
    # Source patch size, so clients can reconstruct the transformed quad.
    patch_width: int
    patch_height: int

    @classmethod
    def from_pose(cls, pose: HumanPose, dims: tuple[int, int]) -> "PoseModel":
        return cls(
            x=pose.x,
            y=pose.y,
            rotation=pose.rotation,
            scale=pose.scale,
            squeeze=pose.squeeze,
            shear=pose.shear,
            rgb=pose.rgb,
            order=pose.order,
            patch_width=dims[0],
            patch_height=dims[1],
        )


class EditRequest(BaseModel):
    genome_id: int = 0
    patch_index: int
    x: float | None = None
    y: float | None = None
    rotation: float | None = None
    scale: float | None = None
    squeeze: float | None = None
    shear: float | None = None
    rgb: tuple[float, float, float] | None = None
    order: float | None = None

    def fields_dict(self) -> dict:
        keys = ("x", "y", "rotation", "scale", "squeeze", "shear", "rgb", "order")
        return {k: getattr(self, k) for k in keys if getattr(self, k) is not None}


class EditResponse(BaseModel):
    pose: PoseModel
    clamped: bool


class HitResponse(BaseModel):
    patch_index: int | None


class SnapshotResponse(BaseModel):
    step: int
    phase: str
    genome_id: int
    png_base64: str
    poses: list[PoseModel]


class ExportRequest(BaseModel):
    width: int
    height: int


class ExportResponse(BaseModel):
    path: str
    sha256: str
    step: int


class CheckpointRequest(BaseModel):
    action: str  # save | load
    path: str


class CheckpointResponse(BaseModel):
    action: str
    path: str
    state: SessionStateModel


# -- app ------------------------------------------------------------------


def create_app(registry: SessionRegistry | None = None) -> FastAPI:
    app = FastAPI(title="collage-forge", version="0.1.0")
    # the browser studio is served from its own origin
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.registry = registry if registry is not None else SessionRegistry()

    def reg() -> SessionRegistry:
        return app.state.registry

    @app.exception_handler(SessionNotFoundError)
    async def _not_found(request: Request, exc: SessionNotFoundError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(InvalidPhaseError)
    async def _invalid_phase(request: Request, exc: InvalidPhaseError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(EditWhileRunningError)
    async def _edit_running(request: Request, exc: EditWhileRunningError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(LibraryMismatchError)
    async def _lib_mismatch(request: Request, exc: LibraryMismatchError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(ChecksumError)
    async def _checksum(request: Request, exc: ChecksumError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(NoPatchesError)
    async def _no_patches(request: Request, exc: NoPatchesError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(CriticUnavailableError)
    async def _critic_down(request: Request, exc: CriticUnavailableError):
        return JSONResponse(status_code=502, content={"detail": str(exc)})

    @app.exception_handler(ProtocolError)
    async def _protocol(request: Request, exc: ProtocolError):
        return JSONResponse(status_code=502, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def _bad_value(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def state_model(session) -> SessionStateModel:
        return SessionStateModel(**session.state())

    @app.post("/session", response_model=CreateSessionResponse)
    def create_session(config: SessionConfigModel) -> CreateSessionResponse:
        session = reg().create(config.to_config())
        return CreateSessionResponse(session_id=session.id, state=state_model(session))

    @app.get("/session/{session_id}/state", response_model=SessionStateModel)
    def get_state(session_id: str) -> SessionStateModel:
        return state_model(reg().get(session_id))

    @app.post("/session/{session_id}/control", response_model=SessionStateModel)
    def control(session_id: str, req: ControlRequest) -> SessionStateModel:
        session = reg().get(session_id)
        return SessionStateModel(**session.control(req.action, req.n))

    @app.post("/session/{session_id}/edit", response_model=EditResponse)
    def edit(session_id: str, req: EditRequest) -> EditResponse:
        session = reg().get(session_id)
        pose, clamped = session.apply_edit(
            EditCommand(
                genome_id=req.genome_id,
                patch_index=req.patch_index,
                fields=req.fields_dict(),
            )
        )
        dims = session.patch_dims(req.genome_id)[req.patch_index]
        return EditResponse(pose=PoseModel.from_pose(pose, dims), clamped=clamped)

    @app.get("/session/{session_id}/hit", response_model=HitResponse)
    def hit(session_id: str, x: int, y: int) -> HitResponse:
        session = reg().get(session_id)
        return HitResponse(patch_index=session.hit(x, y))

    @app.get("/session/{session_id}/snapshot")
    def snapshot(session_id: str, request: Request):
        session = reg().get(session_id)
        snap = session.snapshot()
        if "image/png" in request.headers.get("accept", ""):
            return Response(content=snap["png"], media_type="image/png")
        return SnapshotResponse(
            step=snap["step"],
            phase=snap["phase"],
            genome_id=snap["genome_id"],
            png_base64=base64.b64encode(snap["png"]).decode("ascii"),
            poses=[
                PoseModel.from_pose(p, d)
                for p, d in zip(snap["poses"], snap["patch_dims"])
            ],
        )

    @app.post("/session/{session_id}/export", response_model=ExportResponse)
    def export(session_id: str, req: ExportRequest) -> ExportResponse:
        session = reg().get(session_id)
        return ExportResponse(**session.export_hires(req.width, req.height))

    @app.post("/session/{session_id}/checkpoint", response_model=CheckpointResponse)
    def checkpoint(session_id: str, req: CheckpointRequest) -> CheckpointResponse:
        session = reg().get(session_id)
        if req.action == "save":
            session.checkpoint_save(req.path)
        elif req.action == "load":
            session.checkpoint_load(req.path)
        else:
            raise ValueError(f"unknown checkpoint action {req.action!r}")
        return CheckpointResponse(action=req.action, path=req.path, state=state_model(session))

    @app.delete("/session/{session_id}")
    def delete_session(session_id: str) -> dict:
        reg().delete(session_id)
        return {"deleted": session_id}

    return app


app = create_app()
