"""Live optimization sessions: control, edits, snapshots, checkpoints.

A session owns one population and a single worker thread that executes
gradient steps.  Every mutation of session state is serialized through
one lock, and the worker only takes the lock for the duration of one
step, so reads (state, snapshot, hit) wait at most one step boundary and
edits can never interleave with a step.

Phases: paused <-> running -> finished / error.  Edits require paused so
a render never mixes pre- and post-edit parameters.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SessionConfig
from .critics import (
    CriticKind,
    CriticSpec,
    CriticUnavailableError,
    ProtocolError,
    LossAggregation,
    RegionLayout,
    box_downsample_rgb,
)
from .optimizer import (
    OptState,
    Population,
    RngStreams,
    init_population,
    step as optimizer_step,
    tournament,
)
from .patches import PatchLibrary, load_library, load_rgba_file
from .png_io import encode_png
from .renderer import CanvasSpec, Compositing, RenderMode, hit_test, render, render_hires
from .transforms import HumanPose, from_human, to_human

CHECKPOINT_MAGIC = b"CFORGE\x00\x01"


class SessionNotFoundError(Exception):
    pass


class InvalidPhaseError(Exception):
    pass


class EditWhileRunningError(Exception):
    pass


class ChecksumError(Exception):
    pass


class LibraryMismatchError(Exception):
    pass


PHASE_PAUSED = "paused"
PHASE_RUNNING = "running"
PHASE_FINISHED = "finished"
PHASE_ERROR = "error"


@dataclass
class EditCommand:
    genome_id: int
    patch_index: int
    fields: dict  # subset of HumanPose field names


def build_layout(config: SessionConfig, library_canvas_target=None) -> RegionLayout:
    """Build the critic layout from a session config.

    For target critics every region critic compares against the matching
    crop of the target image and the global critic against its
    box-downsampled whole.
    """
    c, g, k = config.canvas, config.grid, config.effective_crop
    include_global = config.effective_include_global
    n_regions = g * g
    prompts = config.region_prompts or [config.prompt] * n_regions
    if len(prompts) != n_regions:
        raise ValueError(f"need {n_regions} region prompts, got {len(prompts)}")

    def region_critic(i: int, oy: int, ox: int) -> CriticSpec:
        if config.critic == "remote":
            return CriticSpec(
                kind=CriticKind.REMOTE, prompt=prompts[i], endpoint=config.critic_endpoint
            )
        if config.critic == "target":
            return CriticSpec(
                kind=CriticKind.TARGET_IMAGE,
                target=library_canvas_target[oy : oy + k, ox : ox + k],
            )
        return CriticSpec(kind=CriticKind.PSEUDO_EMBEDDING, seed=config.critic_seed + i)

    stride = 0 if g == 1 else (c - k) // max(g - 1, 1)
    offsets = [(r * stride, col * stride) for r in range(g) for col in range(g)]
    region_critics = [region_critic(i, oy, ox) for i, (oy, ox) in enumerate(offsets)]

    global_critic = None
    if include_global:
        if config.critic == "remote":
            global_critic = CriticSpec(
                kind=CriticKind.REMOTE, prompt=config.prompt, endpoint=config.critic_endpoint
            )
        elif config.critic == "target":
            global_critic = CriticSpec(
                kind=CriticKind.TARGET_IMAGE,
                target=box_downsample_rgb(library_canvas_target, c // k),
            )
        else:
            global_critic = CriticSpec(
                kind=CriticKind.PSEUDO_EMBEDDING, seed=config.critic_seed + n_regions
            )
    return RegionLayout(
        grid=g,
        crop=k,
        canvas_side=c,
        region_critics=region_critics,
        global_critic=global_critic,
        include_global=include_global,
    )


def _load_target(config: SessionConfig) -> np.ndarray | None:
    if config.critic != "target":
        return None
    rgba = load_rgba_file(Path(config.target_path))
    target = rgba[:, :, :3].astype(np.float64)
    if target.shape[:2] != (config.canvas, config.canvas):
        raise ValueError(
            f"target image is {target.shape[1]}x{target.shape[0]}, "
            f"need {config.canvas}x{config.canvas}"
        )
    return target


class Session:
    """One optimization session and its worker thread."""

    def __init__(self, config: SessionConfig, library: PatchLibrary | None = None):
        self.id = uuid.uuid4().hex[:12]
        self.config = config
        self.library = library if library is not None else load_library(
            config.patch_dir, config.patch_lo_res, config.flood_fill_tolerance
        )
        self.canvas = CanvasSpec(config.canvas, config.canvas, config.background)
        self.mode = RenderMode(Compositing(config.mode), config.epsilon)
        self.agg = LossAggregation(config.agg)
        self.layout = build_layout(config, _load_target(config))
        self.streams = RngStreams.from_seed(config.optimizer.seed)
        pop_size = config.evolution.population if config.evolution.enabled else max(
            1, config.evolution.population
        )
        self.population = init_population(
            self.library,
            self.canvas,
            self.mode,
            pop_size,
            self.streams.init,
            config.num_patches,
            config.base_scale,
        )
        self.step_count = 0
        self.trace: list[tuple[int, int, float]] = []
        self.phase = PHASE_PAUSED
        self.last_error: str | None = None

        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._pending_steps: int | None = None  # None = free-running when phase==running
        self._closed = False
        self._worker = threading.Thread(target=self._worker_loop, daemon=True)
        self._worker.start()

    # -- worker ---------------------------------------------------------

    def _worker_loop(self) -> None:
        while True:
            with self._cond:
                while not self._closed and not self._should_step():
                    self._cond.wait()
                if self._closed:
                    return
            self._execute_one_step()

    def _should_step(self) -> bool:
        return self.phase == PHASE_RUNNING and (
            self._pending_steps is None or self._pending_steps > 0
        )

    def _execute_one_step(self) -> None:
        with self._cond:
            if not self._should_step():
                return
            try:
                losses = optimizer_step(
                    self.population,
                    self.library,
                    self.layout,
                    self.agg,
                    self.config.optimizer,
                    self.config.parallel_critics,
                )
                self.step_count += 1
                self.trace.extend(
                    (self.step_count, gid, float(loss)) for gid, loss in enumerate(losses)
                )
                evo = self.config.evolution
                if (
                    evo.enabled
                    and len(self.population) >= 2
                    and self.step_count % evo.tournament_period == 0
                ):
                    tournament(
                        self.population,
                        len(self.library),
                        evo,
                        self.streams.select,
                        self.streams.mutate,
                    )
                if self._pending_steps is not None:
                    self._pending_steps -= 1
                    if self._pending_steps <= 0:
                        self._pending_steps = None
                        self.phase = PHASE_PAUSED
                if self.step_count >= self.config.optimizer.steps:
                    self.phase = PHASE_FINISHED
                    self._pending_steps = None
            except (CriticUnavailableError, ProtocolError) as exc:
                self.phase = PHASE_PAUSED
                self._pending_steps = None
                self.last_error = str(exc)
            except Exception as exc:  # unexpected: terminal
                self.phase = PHASE_ERROR
                self._pending_steps = None
                self.last_error = f"{type(exc).__name__}: {exc}"
            finally:
                self._cond.notify_all()

    # -- control --------------------------------------------------------

    def control(self, action: str, n: int = 0) -> dict:
        with self._cond:
            if action == "pause":
                if self.phase == PHASE_RUNNING:
                    self.phase = PHASE_PAUSED
                    self._pending_steps = None
                return self.state()
            if self.phase in (PHASE_FINISHED, PHASE_ERROR):
                raise InvalidPhaseError(f"cannot {action} a {self.phase} session")
            if action == "run":
                self.phase = PHASE_RUNNING
                self._pending_steps = None
                self._cond.notify_all()
                return self.state()
            if action == "step_n":
                if n < 1:
                    raise ValueError("step_n needs n >= 1")
                self.phase = PHASE_RUNNING
                self._pending_steps = n
                self._cond.notify_all()
                while self.phase == PHASE_RUNNING:
                    self._cond.wait()
                return self.state()
            raise ValueError(f"unknown action {action!r}")

    def close(self) -> None:
        with self._cond:
            self._closed = True
            if self.phase == PHASE_RUNNING:
                self.phase = PHASE_PAUSED
                self._pending_steps = None
            self._cond.notify_all()
        self._worker.join(timeout=10.0)

    # -- reads ----------------------------------------------------------

    def state(self) -> dict:
        with self._lock:
            losses = [
                None if not np.isfinite(v) else float(v) for v in self.population.last_losses
            ]
            return {
                "session_id": self.id,
                "phase": self.phase,
                "step": self.step_count,
                "selected_genome": self.population.best_index(),
                "genome_losses": losses,
                "population": len(self.population),
                "num_patches": len(self.population.genomes[0].states),
                "total_critics": self.layout.total_critics,
                "last_error": self.last_error,
            }

    def poses(self, genome_id: int | None = None) -> list[HumanPose]:
        with self._lock:
            gid = self.population.best_index() if genome_id is None else genome_id
            genome = self.population.genomes[gid]
            return [
                to_human(
                    s.affine,
                    s.color,
                    s.order_raw,
                    self.canvas.width,
                    self.canvas.height,
                    self.config.base_scale,
                )
                for s in genome.states
            ]

    def patch_dims(self, genome_id: int | None = None) -> list[tuple[int, int]]:
        """Source (width, height) in pixels of each patch of one genome."""
        with self._lock:
            gid = self.population.best_index() if genome_id is None else genome_id
            genome = self.population.genomes[gid]
            return [
                (self.library[s.patch_id].width, self.library[s.patch_id].height)
                for s in genome.states
            ]

    def snapshot(self) -> dict:
        """PNG of the current best genome plus its per-patch poses."""
        with self._lock:
            gid = self.population.best_index()
            image = render(self.population.genomes[gid], self.library)
            return {
                "step": self.step_count,
                "phase": self.phase,
                "genome_id": gid,
                "png": encode_png(image),
                "poses": self.poses(gid),
                "patch_dims": self.patch_dims(gid),
            }

    def hit(self, x: int, y: int) -> int | None:
        with self._lock:
            gid = self.population.best_index()
            return hit_test(self.population.genomes[gid], self.library, x, y)

    # -- edits ----------------------------------------------------------

    def apply_edit(self, edit: EditCommand) -> tuple[HumanPose, bool]:
        """Apply a partial human pose to one patch; only while paused."""
        with self._lock:
            if self.phase == PHASE_RUNNING:
                raise EditWhileRunningError("pause the session before editing")
            if self.phase in (PHASE_ERROR,):
                raise InvalidPhaseError("session is in error state")
            if not (0 <= edit.genome_id < len(self.population)):
                raise SessionNotFoundError(f"no genome {edit.genome_id}")
            genome = self.population.genomes[edit.genome_id]
            if not (0 <= edit.patch_index < len(genome.states)):
                raise SessionNotFoundError(f"no patch {edit.patch_index}")
            update = from_human(
                edit.fields, self.canvas.width, self.canvas.height, self.config.base_scale
            )
            state = genome.states[edit.patch_index]
            for idx, value in update.affine.items():
                state.affine[idx] = value
            if update.color_rgb is not None:
                state.color[:] = update.color_rgb
            if update.order_raw is not None:
                state.order_raw = update.order_raw
            # stale momentum would immediately fight the human's adjustment
            self.population.opt_states[edit.genome_id].reset_patch(edit.patch_index)
            pose = to_human(
                state.affine,
                state.color,
                state.order_raw,
                self.canvas.width,
                self.canvas.height,
                self.config.base_scale,
            )
            return pose, update.clamped

    # -- export ---------------------------------------------------------

    def export_hires(self, width: int, height: int) -> dict:
        if width < self.canvas.width or height < self.canvas.height:
            raise ValueError("export dimensions must be >= canvas dimensions")
        with self._lock:
            gid = self.population.best_index()
            image = render_hires(self.population.genomes[gid], self.library, width, height)
            step_count = self.step_count
        png = encode_png(image)
        digest = hashlib.sha256(png).hexdigest()
        out_dir = Path(self.config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"export_{self.id}_step{step_count}_{width}x{height}.png"
        path.write_bytes(png)
        manifest_path = out_dir / "manifest.json"
        manifest = {}
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text())
        manifest[path.name] = {"sha256": digest, "step": step_count}
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return {"path": str(path), "sha256": digest, "step": step_count}

    # -- checkpoints ------------------------------------------------------

    def checkpoint_save(self, path: str | Path) -> None:
        with self._lock:
            arrays: list[tuple[str, np.ndarray]] = []
            genome_meta = []
            for gid, (genome, opt) in enumerate(
                zip(self.population.genomes, self.population.opt_states)
            ):
                arrays.append((f"params_{gid}", genome.to_param_array()))
                arrays.append((f"adam_m_{gid}", opt.m))
                arrays.append((f"adam_v_{gid}", opt.v))
                genome_meta.append(
                    {"patch_ids": [s.patch_id for s in genome.states], "opt_t": opt.t}
                )
            arrays.append(("last_losses", self.population.last_losses))
            arrays.append(("trace", np.asarray(self.trace, dtype=np.float64).reshape(-1, 3)))

            blob = bytearray()
            manifest = []
            for name, arr in arrays:
                data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
                manifest.append({"name": name, "shape": list(arr.shape), "offset": len(blob)})
                blob.extend(data)

            header = {
                "version": 1,
                "step": self.step_count,
                "phase": self.phase if self.phase != PHASE_RUNNING else PHASE_PAUSED,
                "library_hash": self.library.content_hash(),
                "config": self.config.to_dict(),
                "genomes": genome_meta,
                "rng": {
                    "init": self.streams.init.bit_generator.state,
                    "mutate": self.streams.mutate.bit_generator.state,
                    "select": self.streams.select.bit_generator.state,
                },
                "arrays": manifest,
            }
            header_bytes = json.dumps(header).encode("utf-8")
            payload = (
                CHECKPOINT_MAGIC
                + struct.pack("<I", len(header_bytes))
                + header_bytes
                + bytes(blob)
            )
            digest = hashlib.sha256(payload).digest()
            Path(path).write_bytes(payload + digest)

    def checkpoint_load(self, path: str | Path) -> None:
        raw = Path(path).read_bytes()
        if len(raw) < len(CHECKPOINT_MAGIC) + 4 + 32:
            raise ChecksumError("checkpoint file truncated")
        payload, digest = raw[:-32], raw[-32:]
        if hashlib.sha256(payload).digest() != digest:
            raise ChecksumError("checkpoint checksum mismatch")
        if not payload.startswith(CHECKPOINT_MAGIC):
            raise ChecksumError("not a collage-forge checkpoint")
        offset = len(CHECKPOINT_MAGIC)
        (header_len,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        header = json.loads(payload[offset : offset + header_len].decode("utf-8"))
        blob = payload[offset + header_len :]

        with self._lock:
            if self.phase == PHASE_RUNNING:
                raise InvalidPhaseError("pause the session before loading a checkpoint")
            if header["library_hash"] != self.library.content_hash():
                raise LibraryMismatchError("checkpoint was built against a different patch library")
            if len(header["genomes"]) != len(self.population.genomes):
                raise ValueError(
                    f"checkpoint holds {len(header['genomes'])} genomes, "
                    f"session has {len(self.population.genomes)}"
                )

            def load_array(name: str) -> np.ndarray:
                meta = next(m for m in header["arrays"] if m["name"] == name)
                shape = tuple(meta["shape"])
                count = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(
                    blob, dtype="<f8", count=count, offset=meta["offset"]
                )
                return arr.reshape(shape).copy()

            for gid, meta in enumerate(header["genomes"]):
                genome = self.population.genomes[gid]
                params = load_array(f"params_{gid}")
                if params.shape[0] != len(genome.states):
                    raise ValueError(
                        f"checkpoint genome {gid} holds {params.shape[0]} patches, "
                        f"session genome has {len(genome.states)}"
                    )
                for state, pid in zip(genome.states, meta["patch_ids"]):
                    state.patch_id = int(pid)
                genome.set_param_array(params)
                opt = self.population.opt_states[gid]
                opt.m = load_array(f"adam_m_{gid}")
                opt.v = load_array(f"adam_v_{gid}")
                opt.t = int(meta["opt_t"])
            self.population.last_losses = load_array("last_losses")
            trace = load_array("trace")
            self.trace = [(int(s), int(g), float(l)) for s, g, l in trace]
            self.step_count = int(header["step"])
            self.phase = header["phase"]
            self.last_error = None
            self.streams.init.bit_generator.state = header["rng"]["init"]
            self.streams.mutate.bit_generator.state = header["rng"]["mutate"]
            self.streams.select.bit_generator.state = header["rng"]["select"]


class SessionRegistry:
    """In-memory session store; single active session unless multi-gated."""

    def __init__(self, allow_multiple: bool = False):
        self.allow_multiple = allow_multiple
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, config: SessionConfig) -> Session:
        with self._lock:
            if not self.allow_multiple and self._sessions:
                raise InvalidPhaseError(
                    "a session is already active; enable multi-session or delete it first"
                )
            session = Session(config)
            self._sessions[session.id] = session
            return session

    def get(self, session_id: str) -> Session:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise SessionNotFoundError(f"no session {session_id}") from None

    def delete(self, session_id: str) -> None:
        with self._lock:
            session = self._sessions.pop(session_id, None)
        if session is None:
            raise SessionNotFoundError(f"no session {session_id}")
        session.close()

    def close_all(self) -> None:
        with self._lock:
            sessions = list(self._sessions.values())
            self._sessions.clear()
        for session in sessions:
            session.close()
