"""Finite belief samples: user-supplied sets and reachability trees.

The solvers tabulate values over a finite set of beliefs.  The standard
point-based recipe applies: expand every Bayes posterior of the initial
belief up to a fixed depth, deduplicate near-identical measures, cap the
total, and optionally pad with random mixtures of what was found.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptySample
from .filtering import bayes_update, obs_marginal
from .measures import (
    DISCRETE,
    EUCLIDEAN_1D,
    DiscreteMeasure,
    cdf_embedding,
    make_measure,
    w1_lp,
)
from .model import PomdpModel

__all__ = ["BeliefSample", "user_sample", "reachability_tree", "DEDUP_W1_TOL"]

# beliefs closer than this in W1 are treated as the same sample point
DEDUP_W1_TOL = 1e-6


@dataclass(eq=False)
class BeliefSample:
    """Ordered, deduplicated belief set with its construction record.

    ``edges`` lists (parent index, action, node, child index) for every
    tree expansion that produced a new sample point; mixture-padded points
    have no edge.  ``truncated`` marks that the cap cut the expansion off.
    """

    beliefs: tuple[DiscreteMeasure, ...]
    provenance: str
    edges: tuple[tuple[int, int, int, int], ...] = ()
    truncated: bool = False
    _weight_matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.beliefs = tuple(self.beliefs)
        if len(self.beliefs) == 0:
            raise EmptySample("a belief sample needs at least one belief")
        g = self.beliefs[0].grid
        for b in self.beliefs[1:]:
            if not b.grid.same_points(g):
                raise DimensionMismatch("sample beliefs live on different grids")

    @property
    def n(self) -> int:
        return len(self.beliefs)

    @property
    def grid(self):
        return self.beliefs[0].grid

    def weight_matrix(self) -> np.ndarray:
        """(n_beliefs, n_states) stack of the belief weights (cached)."""
        if self._weight_matrix is None:
            self._weight_matrix = np.stack([b.weights for b in self.beliefs])
        return self._weight_matrix


def user_sample(beliefs) -> BeliefSample:
    return BeliefSample(tuple(beliefs), provenance="user_supplied")


def _embed_rows(grid, weight_rows: np.ndarray) -> np.ndarray | None:
    """Rows whose pairwise L1 distance equals W1, if the metric allows it.

    1-D: cell-width-scaled CDFs.  Discrete: half the weights (L1 becomes
    total variation, which is W1 under the discrete metric).  Explicit
    tables have no such embedding -> None, callers fall back to the LP.
    """
    if grid.metric_kind == EUCLIDEAN_1D:
        return np.cumsum(weight_rows, axis=1)[:, :-1] * np.diff(grid.points)[None, :]
    if grid.metric_kind == DISCRETE:
        return 0.5 * weight_rows
    return None


def _dists_to_kept(grid, cand: DiscreteMeasure, kept_rows: np.ndarray) -> np.ndarray:
    emb = _embed_rows(grid, np.vstack([kept_rows, cand.weights[None, :]]))
    if emb is not None:
        return np.abs(emb[:-1] - emb[-1][None, :]).sum(axis=1)
    # table metric: exact but slow; fine at the sizes such models come in
    kept = [make_measure(grid, row) for row in kept_rows]
    return np.array([w1_lp(b, cand) for b in kept])


def reachability_tree(
    model: PomdpModel,
    mu0: DiscreteMeasure,
    depth: int = 3,
    *,
    cap: int = 5000,
    dedup_tol: float = DEDUP_W1_TOL,
    mixtures: int = 0,
    seed: int = 0,
) -> BeliefSample:
    """Breadth-first posterior expansion of ``mu0``.

    Every action/observation-node pair with positive marginal probability
    spawns a child posterior; children within ``dedup_tol`` in W1 of an
    existing sample point are dropped.  After the tree (or the cap) is
    exhausted, up to ``mixtures`` random pairwise mixtures of collected
    beliefs are appended, drawn from a generator seeded with ``seed`` —
    the whole construction is deterministic.
    """
    model.check_belief(mu0)
    if depth < 0:
        raise DimensionMismatch("depth must be >= 0")
    beliefs = [mu0]
    rows = mu0.weights[None, :]
    edges: list[tuple[int, int, int, int]] = []
    truncated = False

    frontier = [0]
    for _ in range(depth):
        if truncated or not frontier:
            break
        next_frontier: list[int] = []
        for parent in frontier:
            if truncated:
                break
            for a in range(model.n_actions):
                probs = obs_marginal(model, beliefs[parent], a).node_probs
                for j in np.flatnonzero(probs > 0):
                    post = bayes_update(model, beliefs[parent], a, int(j))
                    d = _dists_to_kept(model.state_grid, post, rows)
                    if d.min() < dedup_tol:
                        continue
                    if len(beliefs) >= cap:
                        truncated = True
                        break
                    edges.append((parent, a, int(j), len(beliefs)))
                    next_frontier.append(len(beliefs))
                    beliefs.append(post)
                    rows = np.vstack([rows, post.weights[None, :]])
                if truncated:
                    break
        frontier = next_frontier

    rng = np.random.default_rng(seed)
    attempts = 0
    added = 0
    while added < mixtures and not truncated and attempts < 20 * max(mixtures, 1):
        attempts += 1
        i, j = rng.integers(0, len(beliefs), size=2)
        kappa = rng.uniform(0.1, 0.9)
        mix = make_measure(
            model.state_grid,
            kappa * beliefs[i].weights + (1.0 - kappa) * beliefs[j].weights,
        )
        d = _dists_to_kept(model.state_grid, mix, rows)
        if d.min() < dedup_tol:
            continue
        if len(beliefs) >= cap:
            truncated = True
            break
        beliefs.append(mix)
        rows = np.vstack([rows, mix.weights[None, :]])
        added += 1

    return BeliefSample(
        tuple(beliefs),
        provenance=f"reachability_tree(depth={depth}, seed={seed})",
        edges=tuple(edges),
        truncated=truncated,
    )
