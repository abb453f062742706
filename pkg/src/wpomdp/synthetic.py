"""Small finite models used by tests, demos, and the CLI examples.

All of them use the discrete metric, unit quadrature weights (so the
observation "density" rows are ordinary stochastic matrices), and constants
chosen so the drift certificate gamma = alpha * beta_hat lands strictly
inside (0.5, 1) -- large enough to make the contraction statements
non-vacuous, small enough that desk-scale iteration counts stay tiny.
"""

from __future__ import annotations

import numpy as np

from .measures import DISCRETE, StateGrid, WeightFunction, make_measure
from .model import ObservationQuadrature, PomdpModel

__all__ = [
    "finite_obs_quadrature",
    "revealing_toy",
    "absorbing_unit_reward_toy",
    "pbvi_toy",
    "random_finite_model",
    "uniform_belief",
]


def finite_obs_quadrature(n_obs: int) -> ObservationQuadrature:
    """Finite observation alphabet: nodes 0..n-1, unit weights."""
    return ObservationQuadrature(np.arange(n_obs, dtype=float), np.ones(n_obs))


def uniform_belief(model: PomdpModel):
    return make_measure(model.state_grid, np.ones(model.n_states))


def revealing_toy(alpha: float = 0.75) -> PomdpModel:
    """Two states, two actions, perfectly revealing observations.

    Because every posterior is a point mass, the set of point masses plus
    any extra beliefs is closed under the belief recursion; exact-sample
    evaluation is possible and the solver cross-checks become sharp.
    Constants: k = 0.5, beta_hat = 1.2, so gamma = 0.9 at the default
    discount.
    """
    grid = StateGrid(np.array([0.0, 1.0]), DISCRETE)
    trans = np.array([
        [[0.9, 0.1], [0.3, 0.7]],
        [[0.6, 0.4], [0.5, 0.5]],
    ])
    obs = np.array([np.eye(2), np.eye(2)])
    reward = np.array([
        [1.0, -0.5],
        [0.2, 0.8],
    ])
    return PomdpModel(
        state_grid=grid,
        actions=("stay", "mix"),
        obs_quadrature=finite_obs_quadrature(2),
        trans=trans,
        obs_density=obs,
        reward=reward,
        discount=alpha,
        weight=WeightFunction(x0=0.0, k=0.5),
    )


def absorbing_unit_reward_toy(alpha: float = 0.8) -> PomdpModel:
    """Unit reward, everything absorbed at the anchor: value is 1/(1-alpha).

    The drift estimate is exactly one (all mass lands on the weight
    anchor), so the certificate constants are r_bar = 1, gamma = alpha.
    """
    grid = StateGrid(np.array([0.0, 1.0]), DISCRETE)
    absorb = np.array([[1.0, 0.0], [1.0, 0.0]])
    trans = np.array([absorb, absorb])
    obs = np.ones((2, 2, 1))
    reward = np.ones((2, 2))
    return PomdpModel(
        state_grid=grid,
        actions=("a", "b"),
        obs_quadrature=finite_obs_quadrature(1),
        trans=trans,
        obs_density=obs,
        reward=reward,
        discount=alpha,
        weight=WeightFunction(x0=0.0, k=0.5),
    )


def pbvi_toy(alpha: float = 0.7) -> PomdpModel:
    """Two-state/two-action/two-observation model with noisy observations.

    The reference model for comparing the Lipschitz-set backup against a
    classical alpha-vector backup: under the discrete metric both must
    produce identical vectors.
    """
    grid = StateGrid(np.array([0.0, 1.0]), DISCRETE)
    trans = np.array([
        [[0.7, 0.3], [0.4, 0.6]],
        [[0.2, 0.8], [0.9, 0.1]],
    ])
    obs = np.array([
        [[0.85, 0.15], [0.25, 0.75]],
        [[0.60, 0.40], [0.30, 0.70]],
    ])
    reward = np.array([
        [1.5, -1.0],
        [-0.3, 2.0],
    ])
    return PomdpModel(
        state_grid=grid,
        actions=("listen", "act"),
        obs_quadrature=finite_obs_quadrature(2),
        trans=trans,
        obs_density=obs,
        reward=reward,
        discount=alpha,
        weight=WeightFunction(x0=0.0, k=0.4),
    )


def random_finite_model(
    seed: int,
    n_states: int = 3,
    n_actions: int = 2,
    n_obs: int = 3,
    alpha: float = 0.7,
    k: float = 0.3,
) -> PomdpModel:
    """Randomised finite model with a guaranteed-valid certificate.

    Under the discrete metric the weight takes two values {1, 1+k}, so the
    drift is at most 1+k and alpha*(1+k) < 1 keeps gamma below one for the
    defaults.  Rewards are two-sided in [-2, 2].
    """
    rng = np.random.default_rng(seed)
    if alpha * (1 + k) >= 1:
        raise ValueError("pick alpha*(1+k) < 1 so the model always certifies")
    grid = StateGrid(np.arange(n_states, dtype=float), DISCRETE)
    trans = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))
    obs = rng.dirichlet(np.ones(n_obs), size=(n_actions, n_states))
    # keep likelihood columns bounded away from zero so posteriors exist
    obs = 0.9 * obs + 0.1 / n_obs
    reward = rng.uniform(-2.0, 2.0, size=(n_actions, n_states))
    return PomdpModel(
        state_grid=grid,
        actions=tuple(f"a{i}" for i in range(n_actions)),
        obs_quadrature=finite_obs_quadrature(n_obs),
        trans=trans,
        obs_density=obs,
        reward=reward,
        discount=alpha,
        weight=WeightFunction(x0=0.0, k=k),
    )
