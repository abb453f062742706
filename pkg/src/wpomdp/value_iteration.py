"""Bellman backups on tabulated belief values, fixed-point iteration with
certified stopping, greedy selectors, and Monte Carlo policy evaluation.

Values live on a fixed :class:`~wpomdp.sampling.BeliefSample`.  Posteriors
of sampled beliefs generally leave the sample, so backups need a
generalizer; two are provided:

* exact-sample lookup, valid when the sample is closed under filtering
  (every posterior coincides with a sample point), and
* a nearest-neighbour rule with Lipschitz correction,
  max_i (v_i - L * W1(mu, b_i)), the McShane-style lower extension of the
  table.

``solve_vi`` precomputes all posterior geometry once, so a sweep is a few
fused array operations regardless of the generalizer.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    NonFiniteValue,
    SolverFailure,
)
from .filtering import bayes_update, expected_reward, obs_marginal
from .measures import DiscreteMeasure, make_measure
from .model import CertifiedConstants, PomdpModel, certify
from .sampling import BeliefSample, _embed_rows

__all__ = [
    "TabulatedValue",
    "Selector",
    "VIResult",
    "bellman_backup_point",
    "bellman_backup",
    "greedy_selector",
    "exact_sample_evaluator",
    "mcshane_evaluator",
    "solve_vi",
    "rollout_estimate",
    "NearestAnchorPolicy",
    "selector_policy",
]

# distances below this are "the same belief" for exact-sample lookup
_EXACT_MATCH_TOL = 1e-9

# fixed work-unit sizes; results are assembled by index, so outputs are
# identical for any worker count.  The inner distance block keeps the
# (rows x sample x states) broadcast temporaries modest.
_CHUNK = 256
_DIST_CHUNK = 64


@dataclass(eq=False)
class TabulatedValue:
    """Finite value table over a belief sample."""

    sample: BeliefSample
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.sample.n,):
            raise DimensionMismatch("one value per sampled belief required")
        if not np.isfinite(self.values).all():
            raise NonFiniteValue("value table contains non-finite entries")

    @classmethod
    def zeros(cls, sample: BeliefSample) -> "TabulatedValue":
        return cls(sample, np.zeros(sample.n))


@dataclass(frozen=True)
class Selector:
    """Greedy action per sampled belief (ties -> lowest action index)."""

    sample: BeliefSample
    actions: tuple[int, ...]

    def action_at(self, i: int) -> int:
        return self.actions[i]


@dataclass(eq=False)
class VIResult:
    value: TabulatedValue
    selector: Selector
    iterations: int
    error_bound: float
    sup_diffs: tuple[float, ...]
    converged: bool
    constants: CertifiedConstants
    lip_estimate: float


# --------------------------------------------------------------------------
# sample geometry shared by the generalizers and the solver
# --------------------------------------------------------------------------

class _SampleGeometry:
    """W1 distances from arbitrary beliefs to the sample, vectorised.

    Uses the L1-isometric embedding where one exists (1-D, discrete); the
    explicit-table metric falls back to per-pair transport solves and is
    only meant for desk-size models.
    """

    def __init__(self, sample: BeliefSample):
        self.sample = sample
        self.rows = sample.weight_matrix()
        self.emb = _embed_rows(sample.grid, self.rows)

    def dists_from_rows(self, rows: np.ndarray) -> np.ndarray:
        """(m, sample.n) distance block for m belief weight rows."""
        if self.emb is None:
            from .measures import w1_lp  # local: only the slow path needs it

            grid = self.sample.grid
            out = np.empty((len(rows), self.sample.n))
            for i, r in enumerate(rows):
                mu = make_measure(grid, r)
                out[i] = [w1_lp(mu, b) for b in self.sample.beliefs]
            return out
        out = np.empty((len(rows), self.sample.n))
        for s in range(0, len(rows), _DIST_CHUNK):
            q = _embed_rows(self.sample.grid, rows[s:s + _DIST_CHUNK])
            out[s:s + _DIST_CHUNK] = np.abs(
                q[:, None, :] - self.emb[None, :, :]
            ).sum(axis=2)
        return out

    def dists_from(self, mu: DiscreteMeasure) -> np.ndarray:
        return self.dists_from_rows(mu.weights[None, :])[0]

    def pairwise(self) -> np.ndarray:
        return self.dists_from_rows(self.rows)


def _table_lip_estimate(values: np.ndarray, pair_d: np.ndarray) -> float:
    """Largest |dv| / W1 over sample pairs (0 when no pair is separated)."""
    gaps = np.abs(values[:, None] - values[None, :])
    mask = pair_d > 1e-9
    if not mask.any():
        return 0.0
    return float((gaps[mask] / pair_d[mask]).max())


def exact_sample_evaluator(table: TabulatedValue, *, atol: float = _EXACT_MATCH_TOL):
    """Value lookup for samples closed under filtering; off-sample raises."""
    geom = _SampleGeometry(table.sample)

    def evaluate(mu: DiscreteMeasure) -> float:
        d = geom.dists_from(mu)
        i = int(d.argmin())
        if d[i] > atol:
            raise SolverFailure(
                f"belief is {d[i]:.3e} away from the sample; "
                "exact-sample evaluation needs a filtering-closed sample"
            )
        return float(table.values[i])

    return evaluate


def mcshane_evaluator(
    table: TabulatedValue,
    *,
    lip_bound: float | None = None,
    k_neighbors: int | None = None,
):
    """Lower-bound extension max_i (v_i - L * W1(mu, b_i)).

    ``lip_bound`` defaults to the largest difference quotient measured on
    the table itself; restricting to ``k_neighbors`` nearest sample points
    trades tightness for speed without breaking the lower-bound property.
    """
    geom = _SampleGeometry(table.sample)
    if lip_bound is None:
        lip_bound = _table_lip_estimate(table.values, geom.pairwise())

    def evaluate(mu: DiscreteMeasure) -> float:
        d = geom.dists_from(mu)
        if k_neighbors is not None and k_neighbors < len(d):
            keep = np.argpartition(d, k_neighbors)[:k_neighbors]
            return float((table.values[keep] - lip_bound * d[keep]).max())
        return float((table.values - lip_bound * d).max())

    return evaluate


# --------------------------------------------------------------------------
# Bellman operator, reference (per-belief) form
# --------------------------------------------------------------------------

def bellman_backup_point(model: PomdpModel, value_eval, mu: DiscreteMeasure, a: int) -> float:
    """One-action backup r~(mu,a) + alpha * E_nodes[ value(posterior) ].

    Nodes with zero marginal probability contribute nothing and are
    skipped (conditioning on them is undefined).
    """
    marg = obs_marginal(model, mu, a)
    acc = 0.0
    for j, p in enumerate(marg.node_probs):
        if p <= 0.0:
            continue
        v = value_eval(bayes_update(model, mu, a, j))
        if not np.isfinite(v):
            raise NonFiniteValue(f"generalizer returned {v!r} at node {j}")
        acc += p * v
    return expected_reward(model, mu, a) + model.discount * acc


def _backup_all_actions(model, value_eval, mu):
    return [bellman_backup_point(model, value_eval, mu, a) for a in range(model.n_actions)]


def bellman_backup(model: PomdpModel, value: TabulatedValue, value_eval) -> TabulatedValue:
    """Full Jacobi sweep: max_a backup of every sampled belief.

    ``value_eval`` is the generalizer for the *current* table; the new
    table is written only after all reads, matching the operator
    semantics.
    """
    certify(model)
    out = np.array(
        [max(_backup_all_actions(model, value_eval, mu)) for mu in value.sample.beliefs]
    )
    return TabulatedValue(value.sample, out)


def greedy_selector(model: PomdpModel, value: TabulatedValue, value_eval) -> Selector:
    acts = []
    for mu in value.sample.beliefs:
        q = _backup_all_actions(model, value_eval, mu)
        acts.append(int(np.argmax(q)))
    return Selector(value.sample, tuple(acts))


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------

def _nearest_in_sample(
    geom: _SampleGeometry, rows: np.ndarray, k: int, parallel: int
) -> tuple[np.ndarray, np.ndarray]:
    """k smallest sample distances per row, ascending: (idx, dist), (m, k).

    Work is split into fixed chunks; each chunk is row-independent, so the
    result is byte-identical for every worker count.
    """
    m, big = len(rows), geom.sample.n
    k = min(k, big)
    idx = np.empty((m, k), dtype=np.int32)
    dst = np.empty((m, k))
    spans = [(s, min(s + _CHUNK, m)) for s in range(0, m, _CHUNK)]

    def work(span):
        s, e = span
        d = geom.dists_from_rows(rows[s:e])
        part = np.argpartition(d, k - 1, axis=1)[:, :k]
        picked = np.take_along_axis(d, part, axis=1)
        order = np.argsort(picked, axis=1, kind="stable")
        idx[s:e] = np.take_along_axis(part, order, axis=1)
        dst[s:e] = np.take_along_axis(picked, order, axis=1)

    if parallel > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            list(pool.map(work, spans))
    else:
        for span in spans:
            work(span)
    return idx, dst


class _Precomputed:
    """Everything a sweep needs, gathered in one pass over (belief, action).

    Shapes: B sampled beliefs, A actions, J nodes, K kept neighbours.
    ``nn_idx``/``nn_dist`` give, for each (b, a, j) posterior, its nearest
    sample points; invalid (zero-probability) nodes carry zeros and are
    masked by ``node_probs`` anyway.
    """

    def __init__(self, model: PomdpModel, sample: BeliefSample, k_neighbors: int, parallel: int):
        B, A = sample.n, model.n_actions
        J, n = model.n_obs, model.n_states
        K = min(k_neighbors, B)
        W = sample.weight_matrix()
        geom = _SampleGeometry(sample)

        self.tilde_w = W @ model.weight.values_on(model.state_grid)
        self.reward = W @ model.reward.T  # (B, A)
        self.node_probs = np.empty((B, A, J))
        self.nn_idx = np.zeros((B, A, J, K), dtype=np.int32)
        self.nn_dist = np.zeros((B, A, J, K))
        self.pair_dist = geom.pairwise()

        phi = model.obs_quadrature.weights
        for a in range(A):
            pred = W @ model.trans[a]  # (B, n)
            lam = pred @ model.obs_density[a]  # (B, J)
            self.node_probs[:, a, :] = phi[None, :] * lam
            # posterior rows for all (b, j) of this action at once
            post = pred[:, None, :] * model.obs_density[a].T[None, :, :]
            valid = lam > 0.0
            post /= np.where(valid, lam, 1.0)[:, :, None]
            idx, dst = _nearest_in_sample(geom, post.reshape(B * J, n), K, parallel)
            mask = valid[:, :, None]
            self.nn_idx[:, a] = np.where(mask, idx.reshape(B, J, K), 0)
            self.nn_dist[:, a] = np.where(mask, dst.reshape(B, J, K), 0.0)

        self.closed = bool(
            (np.where(self.node_probs > 0, self.nn_dist[..., 0], 0.0) <= _EXACT_MATCH_TOL).all()
        )


def solve_vi(
    model: PomdpModel,
    sample: BeliefSample,
    epsilon: float = 1e-3,
    max_iters: int = 1000,
    *,
    generalizer: str = "auto",
    k_neighbors: int = 16,
    parallel: int = 1,
) -> VIResult:
    """Value iteration from the zero table with a certified stop.

    Runs exactly the number of sweeps the a-priori geometric bound
    r_bar * gamma^t / (1 - gamma) needs to fall below ``epsilon`` (the
    empirical sup-difference is reported alongside, and is typically far
    smaller).  If ``max_iters`` cuts the run short the result is returned
    with ``converged=False`` rather than raised.

    generalizer: "exact" demands a filtering-closed sample; "mcshane"
    forces the nearest-neighbour extension; "auto" picks "exact" exactly
    when the sample is closed.
    """
    constants = certify(model)
    if epsilon <= 0:
        raise SolverFailure("epsilon must be positive")
    pre = _Precomputed(model, sample, k_neighbors, parallel)
    if generalizer == "auto":
        generalizer = "exact" if pre.closed else "mcshane"
    if generalizer == "exact" and not pre.closed:
        raise SolverFailure("sample is not filtering-closed; exact mode impossible")
    if generalizer not in ("exact", "mcshane"):
        raise SolverFailure(f"unknown generalizer {generalizer!r}")

    t_star = constants.iterations_for(epsilon)
    v = np.zeros(sample.n)
    lip_hat = 0.0
    sup_diffs = []
    q = pre.reward  # the zero-sweep greedy actions, if we never iterate
    t = 0
    while t < min(t_star, max_iters):
        if generalizer == "exact":
            post_vals = v[pre.nn_idx[..., 0]]
        else:
            post_vals = (v[pre.nn_idx] - lip_hat * pre.nn_dist).max(axis=-1)
        q = pre.reward + model.discount * (pre.node_probs * post_vals).sum(axis=-1)
        v_new = q.max(axis=1)
        sup_diffs.append(float((np.abs(v_new - v) / pre.tilde_w).max()))
        v = v_new
        t += 1
        if generalizer == "mcshane":
            # never let the correction slope shrink between sweeps: keeps
            # the effective operator stationary once the estimate settles
            lip_hat = max(lip_hat, _table_lip_estimate(v, pre.pair_dist))

    table = TabulatedValue(sample, v)
    selector = Selector(sample, tuple(int(i) for i in q.argmax(axis=1)))
    return VIResult(
        value=table,
        selector=selector,
        iterations=t,
        error_bound=constants.apriori_bound(t),
        sup_diffs=tuple(sup_diffs),
        converged=(t >= t_star),
        constants=constants,
        lip_estimate=lip_hat,
    )


# --------------------------------------------------------------------------
# Monte Carlo policy evaluation
# --------------------------------------------------------------------------

class NearestAnchorPolicy:
    """Vectorised belief->action map: copy the action of the nearest anchor.

    ``coarse_dim`` optionally subsamples the embedding columns so that
    huge path batches stay cheap; the lookup then uses an L1 proxy of W1
    instead of the exact distance.
    """

    def __init__(self, grid, anchor_rows: np.ndarray, actions, *, coarse_dim: int | None = None):
        emb = _embed_rows(grid, np.asarray(anchor_rows, dtype=float))
        if emb is None:
            raise DimensionMismatch("anchor policies need an embeddable metric")
        self.grid = grid
        self.cols = None
        if coarse_dim is not None and coarse_dim < emb.shape[1]:
            self.cols = np.linspace(0, emb.shape[1] - 1, coarse_dim).round().astype(int)
            emb = emb[:, self.cols]
        self.emb = np.ascontiguousarray(emb)
        self.actions = np.asarray(actions, dtype=np.int64)
        if len(self.actions) != len(self.emb):
            raise DimensionMismatch("one action per anchor required")

    def act_batch(self, rows: np.ndarray) -> np.ndarray:
        q = _embed_rows(self.grid, rows)
        if self.cols is not None:
            q = q[:, self.cols]
        out = np.empty(len(rows), dtype=np.int64)
        for s in range(0, len(rows), _CHUNK):
            block = np.abs(q[s:s + _CHUNK, None, :] - self.emb[None, :, :]).sum(axis=2)
            out[s:s + _CHUNK] = self.actions[block.argmin(axis=1)]
        return out

    def __call__(self, mu: DiscreteMeasure) -> int:
        return int(self.act_batch(mu.weights[None, :])[0])


def selector_policy(result: VIResult, *, coarse_dim: int | None = None) -> NearestAnchorPolicy:
    sample = result.selector.sample
    return NearestAnchorPolicy(
        sample.grid,
        sample.weight_matrix(),
        result.selector.actions,
        coarse_dim=coarse_dim,
    )


def rollout_estimate(
    model: PomdpModel,
    policy,
    mu0: DiscreteMeasure,
    horizon: int,
    n_paths: int,
    seed: int = 0,
    *,
    path_chunk: int = 4096,
) -> tuple[float, float]:
    """Discounted reward of ``policy`` over simulated hidden trajectories.

    Each path samples a hidden start from mu0 and runs ``horizon + 1``
    decision steps; the policy only ever sees the exactly-filtered belief.
    Paths are simulated in fixed-size chunks with per-chunk seeded
    generators, so results do not depend on how workers are scheduled.
    ``policy`` is either a plain callable on beliefs or an object with a
    vectorised ``act_batch`` (weights-matrix in, action vector out).
    Returns (mean, standard error).
    """
    model.check_belief(mu0)
    if horizon < 0 or n_paths <= 0:
        raise DimensionMismatch("need horizon >= 0 and n_paths > 0")
    batched = hasattr(policy, "act_batch")
    n, A, J = model.n_states, model.n_actions, model.n_obs
    trans_cum = np.cumsum(model.trans, axis=2)  # (A, n, n)
    # node draw for a path in state x' under action a: phi_j q(y_j|x',a)
    node_cum = np.cumsum(
        model.obs_density * model.obs_quadrature.weights[None, None, :], axis=2
    )  # (A, n, J)

    totals = np.empty(n_paths)
    for c, start in enumerate(range(0, n_paths, path_chunk)):
        p = min(path_chunk, n_paths - start)
        rng = np.random.default_rng([seed, c])
        x = rng.choice(n, size=p, p=mu0.weights)
        beliefs = np.broadcast_to(mu0.weights, (p, n)).copy()
        disc = 1.0
        acc = np.zeros(p)
        for t in range(horizon + 1):
            if batched:
                acts = policy.act_batch(beliefs)
            else:
                acts = np.fromiter(
                    (policy(make_measure(model.state_grid, b)) for b in beliefs),
                    dtype=np.int64,
                    count=p,
                )
            acc += disc * model.reward[acts, x]
            disc *= model.discount
            if t == horizon:
                break
            u = rng.random(p)
            x = np.minimum((trans_cum[acts, x] < u[:, None]).sum(axis=1), n - 1)
            u = rng.random(p)
            nodes = np.minimum((node_cum[acts, x] < u[:, None]).sum(axis=1), J - 1)
            pred = np.empty_like(beliefs)
            for a in range(A):  # grouped GEMMs, one per action in use
                sel = acts == a
                if sel.any():
                    pred[sel] = beliefs[sel] @ model.trans[a]
            like = model.obs_density[acts, :, nodes]  # (p, n)
            post = pred * like
            mass = np.maximum(post.sum(axis=1, keepdims=True), 1e-300)
            beliefs = post / mass
        totals[start:start + p] = acc
    mean = float(totals.mean())
    stderr = float(totals.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0
    return mean, stderr
