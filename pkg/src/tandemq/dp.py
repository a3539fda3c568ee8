"""Uniformized dynamic programming for the tandem-queue control problem.

The controlled chain is converted to discrete time by sampling at rate
``Lambda = lambda + mu1_max + mu2_max``; transition probabilities are
``rate / Lambda`` with self-loops absorbing the slack.  Stage costs are kept
as cost *rates* (not per-stage costs), so the gain returned by
:func:`rvi_solve` is the long-run average cost per unit of original time and
the per-state argmins coincide with the ones of the rate-normalized problem.

The infinite lattice is truncated to the box ``0..L1 x 0..L2``.  Arrivals at
``x1 = L1`` self-loop, node-1 completions at ``x2 = L2`` self-loop
(blocking), and service at an empty node self-loops while its resource cost
is still charged.  That last convention is what pins the idle action to 0 at
empty nodes.

Sweeps are synchronous (Jacobi): each iterate depends only on the previous
one, so results are deterministic and independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .model import TandemModel


@dataclass(frozen=True)
class TruncationSpec:
    """Finite box 0..L1 x 0..L2 plus the margin checks exclude at each side."""

    L1: int
    L2: int
    margin: int = 3

    def __post_init__(self):
        if self.L1 < 2 or self.L2 < 2:
            raise ValueError(f"buffer caps must be >= 2, got {(self.L1, self.L2)}")
        if not (0 <= self.margin < min(self.L1, self.L2) / 2):
            raise ValueError(
                f"margin must satisfy 0 <= margin < min(L1,L2)/2, got {self.margin}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.L1 + 1, self.L2 + 1)

    @property
    def n_states(self) -> int:
        return (self.L1 + 1) * (self.L2 + 1)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-9
    max_iters: int = 200_000
    tie_tol: float = 1e-10
    x_ref: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.tie_tol < 0:
            raise ValueError("tie_tol must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class PolicyTable:
    """Per-state canonical action indices plus the full argmin index sets.

    The canonical index is the smallest member of the argmin set (cheapest
    resource choice among the minimizers).
    """

    a_idx: np.ndarray  # (n1, n2) int
    b_idx: np.ndarray  # (n1, n2) int
    a_sets: np.ndarray  # (n1, n2, |A|) bool
    b_sets: np.ndarray  # (n1, n2, |B|) bool

    @classmethod
    def from_argmin_sets(cls, a_sets: np.ndarray, b_sets: np.ndarray) -> "PolicyTable":
        # argmax over bool returns the first True, i.e. the smallest member.
        return cls(
            a_idx=a_sets.argmax(axis=-1),
            b_idx=b_sets.argmax(axis=-1),
            a_sets=a_sets,
            b_sets=b_sets,
        )

    @classmethod
    def from_indices(cls, a_idx: np.ndarray, b_idx: np.ndarray,
                     n_a: int, n_b: int) -> "PolicyTable":
        """Wrap explicit per-state indices; argmin sets become singletons."""
        a_idx = np.asarray(a_idx, dtype=int)
        b_idx = np.asarray(b_idx, dtype=int)
        a_sets = np.eye(n_a, dtype=bool)[a_idx]
        b_sets = np.eye(n_b, dtype=bool)[b_idx]
        return cls(a_idx=a_idx, b_idx=b_idx, a_sets=a_sets, b_sets=b_sets)

    @property
    def a_counts(self) -> np.ndarray:
        return self.a_sets.sum(axis=-1)

    @property
    def b_counts(self) -> np.ndarray:
        return self.b_sets.sum(axis=-1)


@dataclass(frozen=True)
class Solution:
    """Converged (or flagged) output of relative value iteration."""

    v: np.ndarray  # relative values, v[x_ref] = 0
    g: float  # gain: average cost per unit original time
    policy: PolicyTable
    iterations: int
    final_span: float
    g_lower: float
    g_upper: float
    converged: bool
    trunc: TruncationSpec
    options: SolverOptions


def span(d: np.ndarray) -> float:
    """max(d) - min(d); the relative-value-iteration stopping seminorm."""
    d = np.asarray(d, dtype=float)
    if d.size == 0:
        raise ValueError("span of an empty table is undefined")
    return float(d.max() - d.min())


def _argmin_members(q: np.ndarray, qmin: np.ndarray, tie_tol: float) -> np.ndarray:
    # Membership within a relative band above the minimum; the max(1, |min|)
    # floor keeps the band meaningful when the minimum is near zero.
    return (q - qmin) <= tie_tol * np.maximum(1.0, np.abs(qmin))


def apply_T1(model: TandemModel, v: np.ndarray, x: tuple[int, int],
             trunc: TruncationSpec, tie_tol: float = 1e-10):
    """Node-1 event operator at one state: (min value, argmin index array).

    Minimizes ``mu1(a)/Lambda * v(x-e1+e2) + (mu1_max-mu1(a))/Lambda * v(x)
    + c1(a)``.  With no customer at node 1, or the move blocked by a full
    node 2, the completion self-loops and only the resource cost
    differentiates actions.
    """
    x1, x2 = x
    mu1 = model.node1.mu
    here = v[x1, x2]
    moved = v[x1 - 1, x2 + 1] if (x1 > 0 and x2 < trunc.L2) else here
    q = (mu1 * moved + (mu1[-1] - mu1) * here) / model.uniformization_rate \
        + model.node1.cost
    qmin = q.min()
    members = np.flatnonzero(_argmin_members(q, qmin, tie_tol))
    return float(qmin), members


def apply_T2(model: TandemModel, v: np.ndarray, x: tuple[int, int],
             trunc: TruncationSpec, tie_tol: float = 1e-10):
    """Node-2 event operator at one state; self-loops when node 2 is empty."""
    x1, x2 = x
    mu2 = model.node2.mu
    here = v[x1, x2]
    moved = v[x1, x2 - 1] if x2 > 0 else here
    q = (mu2 * moved + (mu2[-1] - mu2) * here) / model.uniformization_rate \
        + model.node2.cost
    qmin = q.min()
    members = np.flatnonzero(_argmin_members(q, qmin, tie_tol))
    return float(qmin), members


def apply_T(model: TandemModel, v: np.ndarray, trunc: TruncationSpec,
            tie_tol: float = 1e-10):
    """One synchronous sweep of the dynamic-programming operator.

    Returns ``(Tv, a_sets, b_sets)`` where the sets are boolean argmin
    masks of shape ``(n1, n2, n_actions)``.  Per state the transition
    probabilities used sum to exactly 1 (arrival + both service events +
    their slack self-loops), so a constant shift of ``v`` shifts ``Tv`` by
    the same constant.
    """
    lam = model.arrival_rate
    Lam = model.uniformization_rate
    mu1, c1 = model.node1.mu, model.node1.cost
    mu2, c2 = model.node2.mu, model.node2.cost
    n1, n2 = trunc.shape
    if v.shape != (n1, n2):
        raise ValueError(f"v has shape {v.shape}, expected {(n1, n2)}")

    # Arrival target x + e1, self-loop at the x1 = L1 wall.
    v_arr = np.empty_like(v)
    v_arr[:-1, :] = v[1:, :]
    v_arr[-1, :] = v[-1, :]
    # Node-1 completion target x - e1 + e2; self-loop at x1 = 0 or x2 = L2.
    v_m1 = v.copy()
    v_m1[1:, :-1] = v[:-1, 1:]
    # Node-2 completion target x - e2; self-loop at x2 = 0.
    v_m2 = v.copy()
    v_m2[:, 1:] = v[:, :-1]

    q1 = (mu1[:, None, None] * v_m1[None, :, :]
          + (mu1[-1] - mu1)[:, None, None] * v[None, :, :]) / Lam \
        + c1[:, None, None]
    t1 = q1.min(axis=0)
    a_sets = _argmin_members(q1, t1[None, :, :], tie_tol)

    q2 = (mu2[:, None, None] * v_m2[None, :, :]
          + (mu2[-1] - mu2)[:, None, None] * v[None, :, :]) / Lam \
        + c2[:, None, None]
    t2 = q2.min(axis=0)
    b_sets = _argmin_members(q2, t2[None, :, :], tie_tol)

    holding = model.h1 * np.arange(n1, dtype=float)[:, None] \
        + model.h2 * np.arange(n2, dtype=float)[None, :]
    tv = (lam / Lam) * v_arr + t1 + t2 + holding
    return tv, np.moveaxis(a_sets, 0, -1), np.moveaxis(b_sets, 0, -1)


def rvi_solve(model: TandemModel, trunc: TruncationSpec,
              options: SolverOptions | None = None) -> Solution:
    """Relative value iteration for the average-cost optimality equation.

    Iterates ``w = Tv``, renormalizes ``v <- w - w(x_ref)``, and stops when
    the span of ``w - v`` drops to ``tol``.  The span bounds bracket the
    gain; the midpoint is reported.  If ``max_iters`` is hit the best
    iterate so far is still returned with ``converged=False``.
    """
    opts = options if options is not None else SolverOptions()
    ref = opts.x_ref
    n1, n2 = trunc.shape
    if not (0 <= ref[0] <= trunc.L1 and 0 <= ref[1] <= trunc.L2):
        raise ValueError(f"x_ref {ref} outside the box")

    v = np.zeros((n1, n2))
    g_lower = g_upper = sp = np.nan
    converged = False
    a_sets = b_sets = None
    iterations = 0
    for iterations in range(1, opts.max_iters + 1):
        w, a_sets, b_sets = apply_T(model, v, trunc, opts.tie_tol)
        d = w - v
        g_lower = float(d.min())
        g_upper = float(d.max())
        sp = g_upper - g_lower
        v = w - w[ref]
        if sp <= opts.tol:
            converged = True
            break

    policy = PolicyTable.from_argmin_sets(a_sets, b_sets)
    return Solution(
        v=v,
        g=0.5 * (g_lower + g_upper),
        policy=policy,
        iterations=iterations,
        final_span=sp,
        g_lower=g_lower,
        g_upper=g_upper,
        converged=converged,
        trunc=trunc,
        options=opts,
    )


class DecouplingViolation(NamedTuple):
    """Two interior states on one fiber whose canonical action disagrees."""

    node: int  # 1 or 2
    state_a: tuple[int, int]
    state_b: tuple[int, int]
    idx_a: int
    idx_b: int


def extract_marginals(policy: PolicyTable, trunc: TruncationSpec):
    """Project the policy onto per-node marginals f1(x1), f2(x2).

    f1(x1) is the majority canonical node-1 index over the interior x2
    window (ties to the smaller index); symmetrically for f2.  A decoupling
    violation is recorded for every pair of margin-interior states sharing
    x1 (resp. x2) whose canonical node-1 (resp. node-2) index differs.
    """
    lo1, hi1 = trunc.margin, trunc.L1 - trunc.margin
    lo2, hi2 = trunc.margin, trunc.L2 - trunc.margin
    n_a = policy.a_sets.shape[-1]
    n_b = policy.b_sets.shape[-1]

    f1 = np.array(
        [np.bincount(policy.a_idx[x1, lo2:hi2 + 1], minlength=n_a).argmax()
         for x1 in range(trunc.L1 + 1)]
    )
    f2 = np.array(
        [np.bincount(policy.b_idx[lo1:hi1 + 1, x2], minlength=n_b).argmax()
         for x2 in range(trunc.L2 + 1)]
    )

    violations: list[DecouplingViolation] = []
    for x1 in range(lo1, hi1 + 1):
        fiber = policy.a_idx[x1, lo2:hi2 + 1]
        if (fiber == fiber[0]).all():
            continue
        for i in range(len(fiber)):
            for j in range(i + 1, len(fiber)):
                if fiber[i] != fiber[j]:
                    violations.append(DecouplingViolation(
                        1, (x1, lo2 + i), (x1, lo2 + j),
                        int(fiber[i]), int(fiber[j])))
    for x2 in range(lo2, hi2 + 1):
        fiber = policy.b_idx[lo1:hi1 + 1, x2]
        if (fiber == fiber[0]).all():
            continue
        for i in range(len(fiber)):
            for j in range(i + 1, len(fiber)):
                if fiber[i] != fiber[j]:
                    violations.append(DecouplingViolation(
                        2, (lo1 + i, x2), (lo1 + j, x2),
                        int(fiber[i]), int(fiber[j])))
    return f1, f2, violations
