"""Weight localisation: score every final-layer kernel weight by mean
absolute loss gradient and by forward impact, keep the top pool by
gradient, and return the Pareto front of the two maximised objectives.

Also provides the two comparison baselines: top-k by gradient only, and
seeded random selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import Dataset, NetworkModel, head_forward, penultimate

METHOD_PARETO = "loc"
METHOD_GRADIENT = "gl"
METHOD_RANDOM = "rs"
METHODS = (METHOD_PARETO, METHOD_GRADIENT, METHOD_RANDOM)

DEFAULT_CANDIDATE_MULTIPLIER = 20


@dataclass(frozen=True, order=True)
class WeightCoord:
    i: int  # penultimate neuron
    j: int  # output neuron


@dataclass(frozen=True)
class LocalizedWeight:
    coord: WeightCoord
    grad_loss: float
    fwd_imp: float


def gradient_loss_scores(model: NetworkModel, i_neg: Dataset) -> np.ndarray:
    """Mean |d loss / d w| over I_neg, one score per final-kernel entry."""
    if len(i_neg) == 0:
        raise ValueError("I_neg must be nonempty")
    cache = penultimate(model, i_neg.features).astype(np.float64)
    probs = head_forward(model.head, cache.astype(np.float32)).astype(np.float64)
    delta = probs
    delta[np.arange(len(i_neg)), i_neg.labels] -= 1.0
    # grad for input x is outer(o(x), delta(x)); |o_i*d_j| = |o_i|*|d_j|
    return np.einsum("ni,nj->ij", np.abs(cache), np.abs(delta)) / len(i_neg)


def forward_impact_scores(model: NetworkModel, i_neg: Dataset) -> np.ndarray:
    """Mean |o_i * w_ij| over I_neg for every final-kernel entry."""
    if len(i_neg) == 0:
        raise ValueError("I_neg must be nonempty")
    cache = penultimate(model, i_neg.features).astype(np.float64)
    mean_abs_o = np.abs(cache).mean(axis=0)
    return mean_abs_o[:, None] * np.abs(model.head.kernel.astype(np.float64))


def forward_impact(model: NetworkModel, i_neg: Dataset,
                   coord: WeightCoord) -> float:
    return float(forward_impact_scores(model, i_neg)[coord.i, coord.j])


def pareto_front(pool: list[LocalizedWeight]) -> list[LocalizedWeight]:
    """Non-dominated subset, both objectives maximised.

    w survives iff no other element is >= on both scores and > on at
    least one; exact duplicates on both scores are all kept.
    """
    if not pool:
        raise ValueError("empty pool")
    g = np.array([w.grad_loss for w in pool])
    f = np.array([w.fwd_imp for w in pool])
    keep = []
    for k in range(len(pool)):
        dominated = np.any(
            (g >= g[k]) & (f >= f[k]) & ((g > g[k]) | (f > f[k])))
        if not dominated:
            keep.append(pool[k])
    return keep


def _top_by_gradient(scores: np.ndarray, count: int,
                     include_boundary_ties: bool) -> list[WeightCoord]:
    flat = scores.ravel()
    order = np.argsort(-flat, kind="stable")
    count = min(count, len(flat))
    if include_boundary_ties and count < len(flat):
        cutoff = flat[order[count - 1]]
        while count < len(flat) and flat[order[count]] == cutoff:
            count += 1
    w = scores.shape[1]
    return [WeightCoord(int(k // w), int(k % w)) for k in order[:count]]


def localize(model: NetworkModel, i_neg: Dataset, method: str, seed: int = 0,
             candidate_multiplier: int = DEFAULT_CANDIDATE_MULTIPLIER
             ) -> list[WeightCoord]:
    """Pick final-layer kernel coordinates to repair.

    loc: Pareto front over (grad loss, forward impact) of the top
    |I_neg| * multiplier pool by gradient (ties at the boundary kept).
    gl: top |I_neg| by gradient alone.  rs: |I_neg| distinct seeded
    random coordinates.
    """
    if method not in METHODS:
        raise ValueError(f"unknown localisation method {method!r}")
    if len(i_neg) == 0:
        raise ValueError("I_neg must be nonempty")
    h, c = model.head.kernel.shape

    if method == METHOD_RANDOM:
        rng = np.random.default_rng(seed)
        count = min(len(i_neg), h * c)
        picks = rng.choice(h * c, size=count, replace=False)
        return sorted(WeightCoord(int(k // c), int(k % c)) for k in picks)

    grads = gradient_loss_scores(model, i_neg)
    if method == METHOD_GRADIENT:
        return sorted(_top_by_gradient(grads, len(i_neg),
                                       include_boundary_ties=False))

    pool_size = len(i_neg) * candidate_multiplier  # clamped inside
    coords = _top_by_gradient(grads, pool_size, include_boundary_ties=True)
    impacts = forward_impact_scores(model, i_neg)
    pool = [LocalizedWeight(cd, float(grads[cd.i, cd.j]),
                            float(impacts[cd.i, cd.j])) for cd in coords]
    front = pareto_front(pool)
    return sorted(w.coord for w in front)


def scored_pool_rows(model: NetworkModel, i_neg: Dataset,
                     candidate_multiplier: int = DEFAULT_CANDIDATE_MULTIPLIER):
    """Debug dump rows: (i, j, grad_loss, fwd_imp, on_front)."""
    grads = gradient_loss_scores(model, i_neg)
    impacts = forward_impact_scores(model, i_neg)
    coords = _top_by_gradient(grads, len(i_neg) * candidate_multiplier,
                              include_boundary_ties=True)
    pool = [LocalizedWeight(cd, float(grads[cd.i, cd.j]),
                            float(impacts[cd.i, cd.j])) for cd in coords]
    front = {w.coord for w in pareto_front(pool)}
    return [(w.coord.i, w.coord.j, w.grad_loss, w.fwd_imp,
             int(w.coord in front)) for w in pool]
