"""Belief-space reduction: expected reward, prediction, Bayes update.

The hidden-state problem is driven entirely through four maps on beliefs:

* ``expected_reward``  -- mean reward under the current belief,
* ``predict``          -- push the belief through the transition kernel,
* ``obs_marginal``     -- likelihood of each observation node under the
                          predicted belief (the observation marginal),
* ``bayes_update``     -- condition the predicted belief on one node.

Together they realise the belief recursion: observing node j after playing
action a moves belief mu to the normalised product of its prediction with
the j-th likelihood column.  The node marginals ``phi_j * lam_j`` are
exactly the mixture weights that glue the posteriors back into the
prediction, which is what the consistency tests exercise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroLikelihood
from .measures import DiscreteMeasure, make_measure
from .model import PomdpModel

__all__ = [
    "PredictedMeasure",
    "ObservationMarginal",
    "SampledTransition",
    "expected_reward",
    "predict",
    "obs_marginal",
    "bayes_update",
    "sample_transition",
]

# posterior atoms below this (normalised) weight are dropped and the rest
# renormalised; keeps deep filtering supports tidy without moving W1 beyond
# rounding scale
POSTERIOR_PRUNE_TOL = 1e-15

_ZERO_LIKELIHOOD_TOL = 1e-300


@dataclass(frozen=True)
class PredictedMeasure:
    """One-step-ahead state distribution, tagged with its origin."""

    measure: DiscreteMeasure
    origin: DiscreteMeasure
    action: int


@dataclass(frozen=True)
class ObservationMarginal:
    """Per-node likelihoods lam_j of the predicted belief.

    ``node_probs`` (phi_j * lam_j) are the actual probabilities of the
    nodes; they sum to one because the density rows are quadrature
    normalised at model load.
    """

    lam: np.ndarray
    quad_weights: np.ndarray

    @property
    def node_probs(self) -> np.ndarray:
        return self.quad_weights * self.lam


@dataclass(frozen=True)
class SampledTransition:
    node_index: int
    node_value: float
    posterior: DiscreteMeasure


def expected_reward(model: PomdpModel, mu: DiscreteMeasure, a: int) -> float:
    model.check_belief(mu)
    return float(np.dot(model.reward[a], mu.weights))


def predict(model: PomdpModel, mu: DiscreteMeasure, a: int) -> PredictedMeasure:
    """Belief pushed through the transition kernel of action ``a``."""
    model.check_belief(mu)
    w = mu.weights @ model.trans[a]
    return PredictedMeasure(
        measure=make_measure(model.state_grid, w), origin=mu, action=a
    )


def obs_marginal(model: PomdpModel, mu: DiscreteMeasure, a: int) -> ObservationMarginal:
    pred = predict(model, mu, a).measure
    lam = pred.weights @ model.obs_density[a]
    return ObservationMarginal(lam=lam, quad_weights=model.obs_quadrature.weights)


def _posterior_from_pred(model: PomdpModel, pred_w: np.ndarray, a: int, j: int):
    """Shared un-normalised Bayes step; raises on a ~impossible node."""
    unnorm = pred_w * model.obs_density[a, :, j]
    lam = unnorm.sum()
    if lam <= _ZERO_LIKELIHOOD_TOL:
        raise ZeroLikelihood(
            f"node {j} has marginal likelihood {lam:.3e} under the prior"
        )
    post = unnorm / lam
    post = np.where(post < POSTERIOR_PRUNE_TOL, 0.0, post)
    return make_measure(model.state_grid, post)


def bayes_update(model: PomdpModel, mu: DiscreteMeasure, a: int, j: int) -> DiscreteMeasure:
    """Posterior after playing ``a`` and observing quadrature node ``j``."""
    if not 0 <= j < model.n_obs:
        raise IndexError(f"observation node {j} out of range")
    pred = predict(model, mu, a).measure
    return _posterior_from_pred(model, pred.weights, a, j)


def sample_transition(
    model: PomdpModel, mu: DiscreteMeasure, a: int, rng_seed: int
) -> SampledTransition:
    """Draw an observation node with probability phi_j*lam_j and condition.

    The per-call seed (no shared generator state) keeps parallel rollouts
    reproducible.
    """
    pred = predict(model, mu, a).measure
    lam = pred.weights @ model.obs_density[a]
    probs = model.obs_quadrature.weights * lam
    rng = np.random.default_rng(rng_seed)
    j = int(rng.choice(len(probs), p=probs / probs.sum()))
    return SampledTransition(
        node_index=j,
        node_value=float(model.obs_quadrature.nodes[j]),
        posterior=_posterior_from_pred(model, pred.weights, a, j),
    )
