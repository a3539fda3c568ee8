"""Policy evaluation three ways.

* exact: stationary distribution of the uniformized chain under a fixed
  policy (power iteration) and the resulting average cost rate,
* statistical: event-driven simulation with batch-means confidence
  intervals,
* exhaustive: brute-force enumeration of every deterministic stationary
  policy on a tiny box, the testing oracle for the DP solver.

States of the box are indexed row-major with x2 fastest:
``s = x1 * (L2 + 1) + x2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy import stats

from .dp import PolicyTable, TruncationSpec
from .model import TandemModel

POLICY_ENUM_CAP = 10_000_000


class NotConvergedError(RuntimeError):
    """Fixed-point iteration did not reach the residual tolerance."""


class TooLargeError(ValueError):
    """The policy space exceeds the exhaustive-enumeration cap."""


@dataclass(frozen=True)
class StationaryDistribution:
    pi: np.ndarray  # probabilities over box states, row-major
    residual: float  # max |pi P - pi| at the last sweep
    iterations: int
    reducible_suspected: bool


@dataclass(frozen=True)
class SimEstimate:
    g_hat: float
    half_width: float  # 95% batch-means confidence half-width
    batches: int
    events: int
    seed: int


def _trunc_from_policy(policy: PolicyTable) -> TruncationSpec:
    n1, n2 = policy.a_idx.shape
    return TruncationSpec(L1=n1 - 1, L2=n2 - 1, margin=0)


def _event_tables(model: TandemModel, policy: PolicyTable, trunc: TruncationSpec):
    """Jump targets, probabilities and cost rates of the uniformized chain.

    Each state has four branches: arrival, node-1 completion, node-2
    completion and the slack self-loop.  Branches blocked by truncation or
    an empty node keep their probability but target the state itself.
    """
    n1, n2 = trunc.shape
    n = n1 * n2
    s = np.arange(n)
    x1, x2 = s // n2, s % n2
    lam = model.uniformization_rate
    a = policy.a_idx.reshape(n)
    b = policy.b_idx.reshape(n)

    p_arr = model.arrival_rate / lam
    t_arr = np.where(x1 < trunc.L1, s + n2, s)
    p1 = model.node1.mu[a] / lam
    t1 = np.where((x1 > 0) & (x2 < trunc.L2), s - n2 + 1, s)
    p2 = model.node2.mu[b] / lam
    t2 = np.where(x2 > 0, s - 1, s)
    p_self = 1.0 - p_arr - p1 - p2

    cost = (model.h1 * x1 + model.h2 * x2
            + model.node1.cost[a] + model.node2.cost[b])
    return p_arr, t_arr, p1, t1, p2, t2, p_self, cost


def policy_chain(model: TandemModel, policy: PolicyTable,
                 trunc: TruncationSpec | None = None) -> scipy.sparse.csr_matrix:
    """Row-stochastic transition matrix of the chain under ``policy``."""
    if trunc is None:
        trunc = _trunc_from_policy(policy)
    p_arr, t_arr, p1, t1, p2, t2, p_self, _ = _event_tables(model, policy, trunc)
    n = trunc.n_states
    s = np.arange(n)
    rows = np.concatenate([s, s, s, s])
    cols = np.concatenate([t_arr, t1, t2, s])
    vals = np.concatenate([np.full(n, p_arr), p1, p2, p_self])
    chain = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return chain


def stationary_distribution(chain: scipy.sparse.csr_matrix, tol: float = 1e-12,
                            max_iters: int = 200_000) -> StationaryDistribution:
    """Fixed point of ``pi <- pi P`` from the uniform start.

    Renormalizes every sweep and stops once ``max |pi P - pi| <= tol``.
    Under a reducible policy the limit concentrates on the recurrent states
    reachable from the start; such outputs carry ``reducible_suspected``
    when some state has vanishing mass and no inflow from other states.
    """
    n = chain.shape[0]
    pt = chain.T.tocsr()
    pi = np.full(n, 1.0 / n)
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        nxt = pt @ pi
        residual = float(np.abs(nxt - pi).max())
        pi = nxt / nxt.sum()
        if residual <= tol:
            break
    else:
        raise NotConvergedError(
            f"stationary distribution residual {residual:.3e} > tol {tol:.3e} "
            f"after {max_iters} sweeps"
        )

    no_inflow = _offdiagonal_inflow(chain) == 0.0
    reducible = bool(np.any((pi < 1e-15) & no_inflow))
    return StationaryDistribution(
        pi=pi, residual=residual, iterations=iterations,
        reducible_suspected=reducible,
    )


def _offdiagonal_inflow(chain: scipy.sparse.csr_matrix) -> np.ndarray:
    stripped = chain.tolil(copy=True)
    stripped.setdiag(0.0)
    return np.asarray(stripped.tocsr().sum(axis=0)).ravel()


def average_cost(model: TandemModel, policy: PolicyTable,
                 pi: StationaryDistribution | np.ndarray) -> float:
    """Average cost rate: stationary expectation of the stage cost."""
    pi_vec = pi.pi if isinstance(pi, StationaryDistribution) else np.asarray(pi)
    trunc = _trunc_from_policy(policy)
    *_, cost = _event_tables(model, policy, trunc)
    return float(np.dot(cost, pi_vec))


def simulate(model: TandemModel, policy: PolicyTable, n_events: int,
             seed: int, warmup_frac: float = 0.2,
             n_batches: int = 20) -> SimEstimate:
    """Time-average cost estimate from a uniformized-chain simulation.

    Starting empty, the chain jumps ``n_events`` times with iid Exp(Lambda)
    holding times; the cost-rate integral is accumulated exactly.  The
    first ``warmup_frac`` of simulated time is discarded and the remainder
    split into ``n_batches`` equal-duration batches for a 95% batch-means
    interval.  Randomness comes from a PCG64 stream seeded with ``seed``:
    first ``n_events`` exponential holding times, then ``n_events`` uniform
    jump draws, so runs are bit-reproducible.
    """
    if n_batches < 2:
        raise ValueError("need at least 2 batches")
    if n_events < 10 * n_batches:
        raise ValueError(f"need n_events >= {10 * n_batches} for {n_batches} batches")
    if not (0.0 <= warmup_frac < 1.0):
        raise ValueError("warmup_frac must lie in [0, 1)")

    trunc = _trunc_from_policy(policy)
    p_arr, t_arr, p1, t1, p2, t2, _, cost = _event_tables(model, policy, trunc)
    rng = np.random.Generator(np.random.PCG64(seed))
    dts = rng.exponential(1.0 / model.uniformization_rate, n_events)
    us = rng.random(n_events).tolist()

    # Branch thresholds per state: arrival | svc1 | svc2 | self-loop.
    b1 = (p_arr + p1).tolist()
    b2 = (p_arr + p1 + p2).tolist()
    ta = t_arr.tolist()
    tb = t1.tolist()
    tc = t2.tolist()
    path = [0] * n_events
    s = 0
    for i in range(n_events):
        path[i] = s
        u = us[i]
        if u < p_arr:
            s = ta[s]
        elif u < b1[s]:
            s = tb[s]
        elif u < b2[s]:
            s = tc[s]
        # else: slack self-loop

    rates = cost[np.asarray(path)]
    knot_t = np.concatenate([[0.0], np.cumsum(dts)])
    knot_c = np.concatenate([[0.0], np.cumsum(rates * dts)])
    total_t = knot_t[-1]
    t_warm = warmup_frac * total_t
    bounds = np.linspace(t_warm, total_t, n_batches + 1)
    c_at = np.interp(bounds, knot_t, knot_c)
    width = (total_t - t_warm) / n_batches
    means = np.diff(c_at) / width
    g_hat = float((c_at[-1] - c_at[0]) / (total_t - t_warm))
    sd = float(means.std(ddof=1))
    half = float(stats.t.ppf(0.975, n_batches - 1) * sd / np.sqrt(n_batches))
    return SimEstimate(g_hat=g_hat, half_width=half, batches=n_batches,
                       events=n_events, seed=seed)


def policy_space_size(model: TandemModel, trunc: TruncationSpec) -> int:
    """Number of deterministic stationary state-dependent policies on the box."""
    n_choices = model.node1.n_actions * model.node2.n_actions
    return n_choices ** trunc.n_states


def brute_force_optimal(model: TandemModel, trunc: TruncationSpec,
                        pi_tol: float = 1e-12, max_sweeps: int = 50_000,
                        chunk_size: int = 1 << 18):
    """Exhaustive minimum over every deterministic policy on the box.

    Each policy is scored by the same uniform-start power iteration as
    :func:`stationary_distribution`, run for all policies of a chunk in
    lockstep (the sweep is a batch of vector updates, one per event branch).
    Returns ``(g_star, best_policy)``; ties go to the lexicographically
    smallest policy in state-major, (a, b)-minor order.  Refuses instances
    above ``POLICY_ENUM_CAP`` policies.
    """
    n_a = model.node1.n_actions
    n_b = model.node2.n_actions
    n_choices = n_a * n_b
    n = trunc.n_states
    total = policy_space_size(model, trunc)
    if total > POLICY_ENUM_CAP:
        raise TooLargeError(
            f"{total} policies exceed the enumeration cap {POLICY_ENUM_CAP}"
        )

    n1, n2 = trunc.shape
    s = np.arange(n)
    x1, x2 = s // n2, s % n2
    lam = model.uniformization_rate
    p_arr = model.arrival_rate / lam
    t_arr = np.where(x1 < trunc.L1, s + n2, s)
    t_sv1 = np.where((x1 > 0) & (x2 < trunc.L2), s - n2 + 1, s)
    t_sv2 = np.where(x2 > 0, s - 1, s)
    # Per-choice tables; choice c encodes (a, b) = (c // n_b, c % n_b).
    choice_a, choice_b = np.arange(n_choices) // n_b, np.arange(n_choices) % n_b
    p1_of = model.node1.mu[choice_a] / lam
    p2_of = model.node2.mu[choice_b] / lam
    rcost_of = model.node1.cost[choice_a] + model.node2.cost[choice_b]
    hold = model.h1 * x1 + model.h2 * x2

    weights = n_choices ** np.arange(n - 1, -1, -1, dtype=object)
    best_g = np.inf
    best_digits = None
    for start in range(0, total, chunk_size):
        stop = min(start + chunk_size, total)
        idx = np.arange(start, stop, dtype=np.int64)
        digits = np.empty((n, stop - start), dtype=np.int64)
        for state in range(n):
            digits[state] = (idx // int(weights[state])) % n_choices
        p1 = p1_of[digits]  # (n, chunk)
        p2 = p2_of[digits]
        p_stay = 1.0 - p_arr - p1 - p2

        pi = np.full((n, stop - start), 1.0 / n)
        for _ in range(max_sweeps):
            nxt = pi * p_stay
            for state in range(n):
                row = pi[state]
                nxt[t_arr[state]] += p_arr * row
                nxt[t_sv1[state]] += p1[state] * row
                nxt[t_sv2[state]] += p2[state] * row
            residual = float(np.abs(nxt - pi).max())
            pi = nxt / nxt.sum(axis=0)
            if residual <= pi_tol:
                break
        else:
            raise NotConvergedError(
                f"policy enumeration sweep residual {residual:.3e} > {pi_tol:.3e}"
            )

        g = np.einsum("sp,sp->p", pi, hold[:, None] + rcost_of[digits])
        local = int(np.argmin(g))
        if g[local] < best_g:
            best_g = float(g[local])
            best_digits = digits[:, local].copy()

    a_idx = (best_digits // n_b).reshape(n1, n2)
    b_idx = (best_digits % n_b).reshape(n1, n2)
    best_policy = PolicyTable.from_indices(a_idx, b_idx, n_a, n_b)
    return best_g, best_policy
