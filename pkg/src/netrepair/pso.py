"""Constriction-coefficient particle swarm search over the localized
final-layer weights.

Positions are candidate replacement values for the chosen kernel entries.
Fitness rewards fixing the negative inputs while keeping the positives:

    (n_patched + 1) / (loss_neg + 1) + (n_intact + 1) / (loss_pos + 1)

The identity patch (current weight values) is evaluated once and seeds the
global best, so a repair can never return something worse than doing
nothing. Per-particle random draws come from sub-streams keyed on
(seed, iteration, particle) so a parallel evaluation order cannot change
the outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import localize as loc
from .fileio import Patch, validate_patch_coords
from .nets import Dataset, NetworkModel, penultimate, softmax, PROB_FLOOR


def chi(phi: float) -> float:
    """Constriction coefficient 2 / (phi - 2 + sqrt(phi^2 - 4 phi))."""
    if phi < 4.0:
        raise ValueError(f"phi must be >= 4 for a real constriction, got {phi}")
    return 2.0 / (phi - 2.0 + math.sqrt(phi * phi - 4.0 * phi))


@dataclass
class SwarmConfig:
    phi1: float = 4.1
    phi2: float = 4.1
    pop_size: int = 100
    max_iters: int = 100
    stagnation_limit: int = 10
    seed: int = 0
    # off by default: clamping |v| up to wb/5 fights convergence
    enforce_min_speed: bool = False

    def __post_init__(self):
        if self.phi1 != self.phi2:
            raise ValueError("phi1 and phi2 must be equal")
        if self.phi1 < 4.0:
            raise ValueError("phi must be >= 4")

    @property
    def chi(self) -> float:
        return chi(self.phi1)


@dataclass
class VelocityBounds:
    wb: float

    @property
    def v_low(self) -> float:
        return self.wb / 5.0

    @property
    def v_high(self) -> float:
        return self.wb * 5.0

    @classmethod
    def from_model(cls, model: NetworkModel) -> "VelocityBounds":
        w = model.head.kernel
        return cls(float(w.max() - w.min()))

    def clamp(self, v: np.ndarray, enforce_min: bool = False) -> np.ndarray:
        out = np.clip(v, -self.v_high, self.v_high)
        if enforce_min:
            small = np.abs(out) < self.v_low
            out = np.where(small, np.sign(out) * self.v_low +
                           (out == 0) * self.v_low, out)
        return out


@dataclass
class FitnessValue:
    total: float
    n_patched: int
    n_intact: int
    loss_neg: float
    loss_pos: float


@dataclass
class HeadState:
    """Precomputed activation caches so fitness needs no full forward."""

    kernel: np.ndarray        # (h, C) float32, unpatched
    bias: np.ndarray          # (C,)
    cache_neg: np.ndarray     # (n_neg, h)
    labels_neg: np.ndarray
    cache_pos: np.ndarray     # (n_pos, h)
    labels_pos: np.ndarray
    base_logits_neg: np.ndarray = field(init=False)
    base_logits_pos: np.ndarray = field(init=False)

    def __post_init__(self):
        self.base_logits_neg = self.cache_neg @ self.kernel + self.bias
        self.base_logits_pos = self.cache_pos @ self.kernel + self.bias

    @classmethod
    def build(cls, model: NetworkModel, i_neg: Dataset,
              i_pos: Dataset) -> "HeadState":
        return cls(model.head.kernel, model.head.bias,
                   penultimate(model, i_neg.features), i_neg.labels,
                   penultimate(model, i_pos.features), i_pos.labels)


def _patched_logits(head: HeadState, base, cache, coords, position):
    logits = base.copy()
    for (c, v) in zip(coords, position):
        old = head.kernel[c.i, c.j]
        logits[:, c.j] += cache[:, c.i] * (np.float32(v) - old)
    return logits


def _set_stats(logits, labels):
    probs = softmax(logits)
    correct = int((probs.argmax(axis=1) == labels).sum())
    p = probs[np.arange(len(labels)), labels].astype(np.float64)
    loss = float(-np.log(np.maximum(p, PROB_FLOOR)).mean()) if len(labels) \
        else 0.0
    return correct, loss


def fitness(position: np.ndarray, coords: list[loc.WeightCoord],
            head: HeadState) -> FitnessValue:
    """Eq-style two-term fitness of one candidate patch."""
    position = np.asarray(position, dtype=np.float32)
    ln = _patched_logits(head, head.base_logits_neg, head.cache_neg,
                         coords, position)
    lp = _patched_logits(head, head.base_logits_pos, head.cache_pos,
                         coords, position)
    n_patched, loss_neg = _set_stats(ln, head.labels_neg)
    n_intact, loss_pos = _set_stats(lp, head.labels_pos)
    total = (n_patched + 1) / (loss_neg + 1) + (n_intact + 1) / (loss_pos + 1)
    return FitnessValue(total, n_patched, n_intact, loss_neg, loss_pos)


@dataclass
class Swarm:
    positions: np.ndarray       # (P, d)
    velocities: np.ndarray      # (P, d)
    local_best_pos: np.ndarray  # (P, d)
    local_best_fit: np.ndarray  # (P,)
    global_best_pos: np.ndarray
    global_best_fit: float
    global_best_value: FitnessValue


def _substream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, *tags])


def init_swarm(model: NetworkModel, coords: list[loc.WeightCoord],
               config: SwarmConfig, head: HeadState) -> Swarm:
    """Positions sampled from Normal(mean, std) of all sibling weights;
    velocities start at zero; the identity patch seeds the global best."""
    if not coords:
        raise ValueError("no coordinates to optimise")
    w = model.head.kernel.astype(np.float64)
    mu, sigma = float(w.mean()), float(w.std())
    if sigma == 0.0:
        sigma = 1e-3
    d = len(coords)
    rng = _substream(config.seed, 0xA11CE)
    positions = rng.normal(mu, sigma, (config.pop_size, d))
    velocities = np.zeros((config.pop_size, d))

    identity = np.array([model.head.kernel[c.i, c.j] for c in coords],
                        dtype=np.float64)
    best_value = fitness(identity, coords, head)
    gbest_pos = identity.copy()
    gbest_fit = best_value.total

    local_fit = np.empty(config.pop_size)
    for p in range(config.pop_size):
        fv = fitness(positions[p], coords, head)
        local_fit[p] = fv.total
        if fv.total > gbest_fit:
            gbest_pos = positions[p].copy()
            gbest_fit = fv.total
            best_value = fv
    return Swarm(positions, velocities, positions.copy(), local_fit,
                 gbest_pos, gbest_fit, best_value)


def step_swarm(swarm: Swarm, coords: list[loc.WeightCoord], head: HeadState,
               bounds: VelocityBounds, config: SwarmConfig,
               iteration: int) -> bool:
    """One synchronous update; returns True if the global best improved."""
    k = config.chi
    d = swarm.positions.shape[1]
    for p in range(config.pop_size):
        rng = _substream(config.seed, iteration, p)
        u1 = rng.uniform(0.0, config.phi1, d)
        u2 = rng.uniform(0.0, config.phi2, d)
        v = k * (swarm.velocities[p]
                 + u1 * (swarm.local_best_pos[p] - swarm.positions[p])
                 + u2 * (swarm.global_best_pos - swarm.positions[p]))
        v = bounds.clamp(v, config.enforce_min_speed)
        swarm.velocities[p] = v
        swarm.positions[p] = swarm.positions[p] + v

    improved = False
    for p in range(config.pop_size):
        fv = fitness(swarm.positions[p], coords, head)
        if fv.total > swarm.local_best_fit[p]:
            swarm.local_best_fit[p] = fv.total
            swarm.local_best_pos[p] = swarm.positions[p].copy()
        if fv.total > swarm.global_best_fit:
            swarm.global_best_fit = fv.total
            swarm.global_best_pos = swarm.positions[p].copy()
            swarm.global_best_value = fv
            improved = True
    return improved


@dataclass
class TraceRow:
    iteration: int
    best_fitness: float
    n_patched: int
    n_intact: int


@dataclass
class RepairTrace:
    rows: list[TraceRow]
    coords: list[loc.WeightCoord]
    seed: int
    method: str
    iterations_run: int


def repair(model: NetworkModel, i_neg: Dataset, i_pos: Dataset,
           loc_method: str, config: SwarmConfig,
           candidate_multiplier: int = loc.DEFAULT_CANDIDATE_MULTIPLIER
           ) -> tuple[Patch, RepairTrace]:
    """Full pipeline: localize, swarm-optimise, return best patch + trace."""
    coords = loc.localize(model, i_neg, loc_method, seed=config.seed,
                          candidate_multiplier=candidate_multiplier)
    head = HeadState.build(model, i_neg, i_pos)
    bounds = VelocityBounds.from_model(model)
    swarm = init_swarm(model, coords, config, head)

    rows = [TraceRow(0, swarm.global_best_fit,
                     swarm.global_best_value.n_patched,
                     swarm.global_best_value.n_intact)]
    stagnant = 0
    iters = 0
    for t in range(1, config.max_iters + 1):
        improved = step_swarm(swarm, coords, head, bounds, config, t)
        iters = t
        rows.append(TraceRow(t, swarm.global_best_fit,
                             swarm.global_best_value.n_patched,
                             swarm.global_best_value.n_intact))
        stagnant = 0 if improved else stagnant + 1
        if stagnant >= config.stagnation_limit:
            break

    head_idx = len(model.layers) - 1
    entries = tuple((head_idx, c.i, c.j, float(np.float32(v)))
                    for c, v in zip(coords, swarm.global_best_pos))
    patch = Patch(entries, seed=config.seed, method=loc_method,
                  fitness=float(swarm.global_best_fit))
    trace = RepairTrace(rows, coords, config.seed, loc_method, iters)
    return patch, trace


def apply_patch(model: NetworkModel, patch: Patch) -> NetworkModel:
    """New model differing from `model` exactly at the patch coordinates."""
    validate_patch_coords(patch, model)
    kernel = model.head.kernel.copy()
    for _, i, j, v in patch.entries:
        kernel[i, j] = np.float32(v)
    return model.replace_head_kernel(kernel)
