"""Gradient descent on genome parameters with microbial-GA tournaments.

A population of genomes descends the critic loss in lockstep; every
`tournament_period` steps two random individuals are compared and the
loser is overwritten by a mutated copy of the winner (swap a random
patch with probability p_swap, then add Gaussian noise to the raw
parameters).  The winner is never touched.

Initialization, mutation and tournament selection draw from independent
substreams of the master seed, so reordering critic evaluations can
never change mutation draws and runs are bit-reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np

from .critics import LossAggregation, RegionLayout, evaluate_layout
from .patches import PatchLibrary
from .renderer import CanvasSpec, CollageGenome, PatchState, RenderMode, backward, render
from .transforms import initial_patch_params


@dataclass
class OptimizerConfig:
    steps: int = 1000
    lr_affine: float = 0.05
    lr_color: float = 0.05
    lr_order: float = 0.05
    method: str = "adam"  # "adam" or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = 5.0  # max gradient norm per patch
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if min(self.lr_affine, self.lr_color, self.lr_order) <= 0:
            raise ValueError("learning rates must be positive")
        if self.method not in ("adam", "sgd"):
            raise ValueError(f"unknown method {self.method!r}")

    def lr_vector(self) -> np.ndarray:
        return np.array([self.lr_affine] * 6 + [self.lr_color] * 3 + [self.lr_order])


@dataclass
class EvolutionConfig:
    population: int = 4
    tournament_period: int = 100
    p_swap: float = 0.05
    sigma_affine: float = 0.02
    sigma_color: float = 0.02
    sigma_order: float = 0.02
    enabled: bool = True

    def __post_init__(self):
        if self.enabled and not (2 <= self.population <= 10):
            raise ValueError("population must be in [2, 10] when evolution is enabled")
        if self.population < 1:
            raise ValueError("population must be >= 1")
        if self.tournament_period < 1:
            raise ValueError("tournament_period must be >= 1")


@dataclass
class OptState:
    """Per-genome first/second moment estimates and step count."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n_states: int) -> "OptState":
        return cls(m=np.zeros((n_states, 10)), v=np.zeros((n_states, 10)))

    def reset(self) -> None:
        self.m[:] = 0.0
        self.v[:] = 0.0
        self.t = 0

    def reset_patch(self, index: int) -> None:
        self.m[index] = 0.0
        self.v[index] = 0.0


@dataclass
class RngStreams:
    """Independent child streams of one master seed."""

    init: np.random.Generator
    mutate: np.random.Generator
    select: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        children = np.random.SeedSequence(seed).spawn(3)
        return cls(*(np.random.default_rng(c) for c in children))


@dataclass
class Population:
    genomes: list[CollageGenome]
    opt_states: list[OptState]
    last_losses: np.ndarray  # per-genome loss from the most recent step

    def __len__(self) -> int:
        return len(self.genomes)

    def best_index(self) -> int:
        return int(np.argmin(self.last_losses))


def init_population(
    library: PatchLibrary,
    canvas: CanvasSpec,
    mode: RenderMode,
    pop_size: int,
    rng: np.random.Generator,
    num_patches: int | None = None,
    base_scale: float = 1.0,
) -> Population:
    """Randomly initialized genomes; patch i starts as library patch i mod N."""
    n = num_patches if num_patches is not None else len(library)
    genomes = []
    for _ in range(pop_size):
        states = []
        for i in range(n):
            affine, color, order = initial_patch_params(rng)
            states.append(
                PatchState(patch_id=i % len(library), affine=affine, color=color, order_raw=order)
            )
        genomes.append(CollageGenome(states=states, mode=mode, canvas=canvas, base_scale=base_scale))
    return Population(
        genomes=genomes,
        opt_states=[OptState.zeros(n) for _ in range(pop_size)],
        last_losses=np.full(pop_size, np.inf),
    )


def _clip_per_patch(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grad
    norms = np.sqrt((grad * grad).sum(axis=1, keepdims=True))
    scale = np.where(norms > max_norm, max_norm / np.maximum(norms, 1e-30), 1.0)
    return grad * scale


def apply_update(
    genome: CollageGenome, state: OptState, grad: np.ndarray, config: OptimizerConfig
) -> None:
    """One descent step on the genome's raw parameters."""
    grad = _clip_per_patch(grad, config.grad_clip)
    lr = config.lr_vector()
    params = genome.to_param_array()
    if config.method == "adam":
        state.t += 1
        state.m = config.beta1 * state.m + (1.0 - config.beta1) * grad
        state.v = config.beta2 * state.v + (1.0 - config.beta2) * grad * grad
        m_hat = state.m / (1.0 - config.beta1**state.t)
        v_hat = state.v / (1.0 - config.beta2**state.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    else:
        params -= lr * grad
    genome.set_param_array(params)


def step(
    population: Population,
    library: PatchLibrary,
    layout: RegionLayout,
    agg: LossAggregation,
    config: OptimizerConfig,
    parallel_critics: bool = False,
) -> np.ndarray:
    """One gradient step for every genome; returns per-genome losses.

    All gradients are computed before any parameter moves, so a critic
    failure aborts the whole step without mutating anything.
    """
    side = layout.canvas_side
    pending = []
    for genome in population.genomes:
        image = render(genome, library, (side, side))
        report = evaluate_layout(layout, agg, image, parallel=parallel_critics)
        bundle = backward(genome, library, report.dL_dImage, (side, side))
        pending.append((report.aggregate, bundle.to_param_array()))

    losses = np.array([loss for loss, _ in pending])
    for genome, state, (_, grad) in zip(population.genomes, population.opt_states, pending):
        apply_update(genome, state, grad, config)
    population.last_losses = losses
    return losses


def mutate(
    genome: CollageGenome,
    library_size: int,
    evo: EvolutionConfig,
    rng: np.random.Generator,
) -> CollageGenome:
    """In-place mutation: optional patch swap, then Gaussian parameter noise.

    Zero-probability and zero-sigma branches draw nothing from the rng so a
    disabled mutation leaves the genome bit-identical.
    """
    for state in genome.states:
        if evo.p_swap > 0 and rng.random() < evo.p_swap:
            state.patch_id = int(rng.integers(library_size))
        if evo.sigma_affine > 0:
            state.affine += rng.normal(0.0, evo.sigma_affine, size=6)
        if evo.sigma_color > 0:
            state.color += rng.normal(0.0, evo.sigma_color, size=3)
        if evo.sigma_order > 0:
            state.order_raw += float(rng.normal(0.0, evo.sigma_order))
    return genome


def tournament(
    population: Population,
    library_size: int,
    evo: EvolutionConfig,
    select_rng: np.random.Generator,
    mutate_rng: np.random.Generator,
) -> tuple[int, int]:
    """Microbial GA step: loser becomes a mutated copy of the winner.

    Two distinct genomes are drawn uniformly; the lower-loss one wins
    (ties break toward the lower index).  The loser's optimizer moments
    reset because they described a discarded trajectory.
    """
    p = len(population)
    i = int(select_rng.integers(p))
    j = int(select_rng.integers(p - 1))
    if j >= i:
        j += 1
    li, lj = population.last_losses[i], population.last_losses[j]
    if li < lj or (li == lj and i < j):
        winner, loser = i, j
    else:
        winner, loser = j, i

    win_genome = population.genomes[winner]
    lose_genome = population.genomes[loser]
    lose_genome.states = [s.copy() for s in win_genome.states]
    mutate(lose_genome, library_size, evo, mutate_rng)
    population.opt_states[loser].reset()
    population.last_losses[loser] = population.last_losses[winner]
    return winner, loser


@dataclass
class RunResult:
    best_genome: CollageGenome
    best_loss: float
    trace: list[tuple[int, int, float]] = dc_field(default_factory=list)  # (step, genome, loss)


def run(
    config: OptimizerConfig,
    evo: EvolutionConfig,
    population: Population,
    library: PatchLibrary,
    layout: RegionLayout,
    agg: LossAggregation,
    parallel_critics: bool = False,
    on_step=None,
    streams: RngStreams | None = None,
) -> RunResult:
    """Run `config.steps` gradient steps with periodic tournaments.

    Fully deterministic for a given seed.  `on_step(step, losses)` is an
    optional observer hook; pass `streams` to continue existing rng state
    instead of reseeding.
    """
    if streams is None:
        streams = RngStreams.from_seed(config.seed)
    trace: list[tuple[int, int, float]] = []
    for s in range(1, config.steps + 1):
        losses = step(population, library, layout, agg, config, parallel_critics)
        trace.extend((s, gid, float(loss)) for gid, loss in enumerate(losses))
        if on_step is not None:
            on_step(s, losses)
        if evo.enabled and len(population) >= 2 and s % evo.tournament_period == 0:
            tournament(population, len(library), evo, streams.select, streams.mutate)
    best = population.best_index()
    return RunResult(
        best_genome=population.genomes[best].copy(),
        best_loss=float(population.last_losses[best]),
        trace=trace,
    )


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "genome_id", "loss"])
        writer.writerows(trace)
