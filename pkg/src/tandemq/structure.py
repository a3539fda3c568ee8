"""Numerical verification of the structural claims about solved instances.

Every check is a pure function of (model, solution, trunc, tolerances) and
scans only margin-interior states: each state referenced by a comparison
must lie inside the box shrunk by ``trunc.margin`` on every side.  Checks
whose hypotheses fail are reported SKIPPED (or run informationally as INFO
in ``mode="info"``), never silently passed.

Checked claims, all on the canonical (smallest-argmin) policy selector:

* relative values nondecreasing in each coordinate,
* swap dominance of values under the documented holding-cost gates,
* nonnegative second differences along e2 and e1 - e2,
* per-node policy monotonicity,
* node ordering b >= a when the cross-node cost/rate premises hold,
* singleton argmin sets when the cost-per-rate increments are monotone,
* idle action 0 at empty nodes,
* bang-bang structure scan with explicit premise audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dp import Solution, TruncationSpec, extract_marginals
from .model import TandemModel

VALUE_TOL = 1e-9

PASS = "PASS"
FAIL = "FAIL"
SKIPPED = "SKIPPED"
INFO = "INFO"


@dataclass(frozen=True)
class Violation:
    check: str
    states: tuple  # states involved, innermost-first
    lhs: float
    rhs: float
    magnitude: float  # by how much the required inequality fails


@dataclass
class CheckEntry:
    check: str
    status: str
    violations: list[Violation] = field(default_factory=list)
    evidence: dict = field(default_factory=dict)


@dataclass
class CheckReport:
    entries: list[CheckEntry]
    params: dict

    @property
    def failed(self) -> list[CheckEntry]:
        return [e for e in self.entries if e.status == FAIL]

    @property
    def ok(self) -> bool:
        return not self.failed

    def entry(self, check: str) -> CheckEntry:
        for e in self.entries:
            if e.check == check:
                return e
        raise KeyError(check)


def _window(trunc: TruncationSpec) -> tuple[int, int, int, int]:
    m = trunc.margin
    return m, trunc.L1 - m, m, trunc.L2 - m


def _asserted(check: str, violations: list[Violation],
              evidence: dict | None = None) -> CheckEntry:
    return CheckEntry(check=check, status=FAIL if violations else PASS,
                      violations=violations, evidence=evidence or {})


def check_nondecreasing(model: TandemModel, solution: Solution,
                        trunc: TruncationSpec,
                        value_tol: float = VALUE_TOL) -> CheckEntry:
    """v(x + e_i) >= v(x) in both coordinates on the interior."""
    v = solution.v
    lo1, hi1, lo2, hi2 = _window(trunc)
    violations = []
    deficit = v[lo1:hi1, lo2:hi2 + 1] - v[lo1 + 1:hi1 + 1, lo2:hi2 + 1]
    for i, j in np.argwhere(deficit > value_tol):
        x = (lo1 + int(i), lo2 + int(j))
        violations.append(Violation(
            "value_nondecreasing", ((x[0] + 1, x[1]), x),
            lhs=float(v[x[0] + 1, x[1]]), rhs=float(v[x]),
            magnitude=float(deficit[i, j])))
    deficit = v[lo1:hi1 + 1, lo2:hi2] - v[lo1:hi1 + 1, lo2 + 1:hi2 + 1]
    for i, j in np.argwhere(deficit > value_tol):
        x = (lo1 + int(i), lo2 + int(j))
        violations.append(Violation(
            "value_nondecreasing", ((x[0], x[1] + 1), x),
            lhs=float(v[x[0], x[1] + 1]), rhs=float(v[x]),
            magnitude=float(deficit[i, j])))
    return _asserted("value_nondecreasing", violations)


def _swap_entry(check: str, v: np.ndarray, trunc: TruncationSpec, gate: bool,
                gate_note: str, kind: str, value_tol: float,
                mode: str) -> CheckEntry:
    if not gate and mode != "info":
        return CheckEntry(check=check, status=SKIPPED,
                          evidence={"gate": gate_note, "holds": False})
    lo1, hi1, lo2, hi2 = _window(trunc)
    violations = []
    # Anchor x needs x1 >= 1, x2 >= 1 and all referenced states interior;
    # only the swap12 variant references x - e2.
    x2_lo = max(lo2 + 1, 1) if kind == "swap12" else max(lo2, 1)
    for x1 in range(max(lo1 + 1, 1), hi1 + 1):
        for x2 in range(x2_lo, hi2):
            if kind == "swap12":
                lhs, rhs = v[x1 - 1, x2 + 1], v[x1, x2 - 1]
                states = ((x1 - 1, x2 + 1), (x1, x2 - 1))
            else:  # "keep": v(x) >= v(x - e1 + e2)
                lhs, rhs = v[x1, x2], v[x1 - 1, x2 + 1]
                states = ((x1, x2), (x1 - 1, x2 + 1))
            if rhs - lhs > value_tol:
                violations.append(Violation(check, states, float(lhs),
                                            float(rhs), float(rhs - lhs)))
    entry = _asserted(check, violations,
                      evidence={"gate": gate_note, "holds": gate})
    if not gate:
        entry.status = INFO
    return entry


def check_swap_dominance(model: TandemModel, solution: Solution,
                         trunc: TruncationSpec, value_tol: float = VALUE_TOL,
                         mode: str = "default") -> list[CheckEntry]:
    """Value dominance under a one-step customer swap, gated on h1, h2.

    (ii) with 2*h2 >= h1: v(x - e1 + e2) >= v(x - e2);
    (iii) with h1 >= h2:  v(x) >= v(x - e1 + e2); both for x1, x2 >= 1.
    """
    h1, h2 = model.h1, model.h2
    return [
        _swap_entry("swap_dominance_ii", solution.v, trunc,
                    2 * h2 >= h1, f"2*h2 >= h1 ({2 * h2} >= {h1})",
                    "swap12", value_tol, mode),
        _swap_entry("swap_dominance_iii", solution.v, trunc,
                    h1 >= h2, f"h1 >= h2 ({h1} >= {h2})",
                    "keep", value_tol, mode),
    ]


def check_quasiconvexity(model: TandemModel, solution: Solution,
                         trunc: TruncationSpec,
                         value_tol: float = VALUE_TOL) -> list[CheckEntry]:
    """Nonnegative second differences of v along e2 and along e1 - e2."""
    v = solution.v
    lo1, hi1, lo2, hi2 = _window(trunc)
    entries = []

    violations = []
    for x1 in range(lo1, hi1 + 1):
        for x2 in range(max(lo2 + 1, 1), hi2):
            second = v[x1, x2 + 1] - 2 * v[x1, x2] + v[x1, x2 - 1]
            if second < -value_tol:
                violations.append(Violation(
                    "quasiconvex_e2", ((x1, x2),),
                    lhs=float(second), rhs=0.0, magnitude=float(-second)))
    entries.append(_asserted("quasiconvex_e2", violations))

    violations = []
    for x1 in range(max(lo1 + 1, 1), hi1):
        for x2 in range(max(lo2 + 1, 1), hi2):
            second = v[x1 + 1, x2 - 1] - 2 * v[x1, x2] + v[x1 - 1, x2 + 1]
            if second < -value_tol:
                violations.append(Violation(
                    "quasiconvex_e1_e2", ((x1, x2),),
                    lhs=float(second), rhs=0.0, magnitude=float(-second)))
    entries.append(_asserted("quasiconvex_e1_e2", violations))
    return entries


def _set_bounds(sets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smallest and largest member index of each argmin set."""
    n = sets.shape[-1]
    lo = sets.argmax(axis=-1)
    hi = n - 1 - sets[..., ::-1].argmax(axis=-1)
    return lo, hi


def check_policy_monotonicity(model: TandemModel, solution: Solution,
                              trunc: TruncationSpec,
                              mode: str = "default") -> list[CheckEntry]:
    """Canonical action indices nondecreasing along their own coordinate.

    Node-2 action in x2, node-1 action in x1.  The all-selections variant
    (min of the argmin set one step up >= max of the set below) is strict
    under exact ties, so it only runs informationally in ``mode="info"``.
    """
    pol = solution.policy
    lo1, hi1, lo2, hi2 = _window(trunc)
    entries = []

    violations = []
    for x1 in range(lo1, hi1 + 1):
        for x2 in range(lo2, hi2):
            lower, upper = int(pol.b_idx[x1, x2]), int(pol.b_idx[x1, x2 + 1])
            if upper < lower:
                violations.append(Violation(
                    "policy_monotone_b", ((x1, x2 + 1), (x1, x2)),
                    lhs=float(upper), rhs=float(lower),
                    magnitude=float(lower - upper)))
    entries.append(_asserted("policy_monotone_b", violations))

    violations = []
    for x2 in range(lo2, hi2 + 1):
        for x1 in range(lo1, hi1):
            lower, upper = int(pol.a_idx[x1, x2]), int(pol.a_idx[x1 + 1, x2])
            if upper < lower:
                violations.append(Violation(
                    "policy_monotone_a", ((x1 + 1, x2), (x1, x2)),
                    lhs=float(upper), rhs=float(lower),
                    magnitude=float(lower - upper)))
    entries.append(_asserted("policy_monotone_a", violations))

    if mode == "info":
        b_lo, b_hi = _set_bounds(pol.b_sets)
        violations = []
        for x1 in range(lo1, hi1 + 1):
            for x2 in range(lo2, hi2):
                if b_lo[x1, x2 + 1] < b_hi[x1, x2]:
                    violations.append(Violation(
                        "policy_monotone_b_allsel", ((x1, x2 + 1), (x1, x2)),
                        lhs=float(b_lo[x1, x2 + 1]), rhs=float(b_hi[x1, x2]),
                        magnitude=float(b_hi[x1, x2] - b_lo[x1, x2 + 1])))
        entries.append(CheckEntry("policy_monotone_b_allsel", INFO, violations))
        a_lo, a_hi = _set_bounds(pol.a_sets)
        violations = []
        for x2 in range(lo2, hi2 + 1):
            for x1 in range(lo1, hi1):
                if a_lo[x1 + 1, x2] < a_hi[x1, x2]:
                    violations.append(Violation(
                        "policy_monotone_a_allsel", ((x1 + 1, x2), (x1, x2)),
                        lhs=float(a_lo[x1 + 1, x2]), rhs=float(a_hi[x1, x2]),
                        magnitude=float(a_hi[x1, x2] - a_lo[x1 + 1, x2])))
        entries.append(CheckEntry("policy_monotone_a_allsel", INFO, violations))
    return entries


def check_node_ordering(model: TandemModel, solution: Solution,
                        trunc: TruncationSpec) -> CheckEntry:
    """Canonical node-2 allocation at least the node-1 one, b >= a.

    Applies only when the two grids list the same resource amounts and, for
    every ordered pair of amounts a >= b, node 1's cost increment dominates
    node 2's while node 2's rate increment dominates node 1's.  Premises
    are verified exhaustively and recorded; the ordering is asserted only
    when they hold.
    """
    n1s, n2s = model.node1, model.node2
    evidence: dict = {"grids_identical": bool(np.array_equal(n1s.actions,
                                                             n2s.actions))}
    if not evidence["grids_identical"]:
        evidence["reason"] = "node grids differ; cross-node premises undefined"
        return CheckEntry("node_ordering", SKIPPED, evidence=evidence)

    k = n1s.n_actions
    cost_ok = True
    rate_ok = True
    cost_witness = rate_witness = None
    for i in range(k):
        for j in range(i):
            # pair (a, b) = (actions[i], actions[j]) with a > b
            if n1s.cost[i] - n1s.cost[j] < n2s.cost[i] - n2s.cost[j]:
                cost_ok = False
                cost_witness = cost_witness or (i, j)
            if n2s.mu[i] - n2s.mu[j] < n1s.mu[i] - n1s.mu[j]:
                rate_ok = False
                rate_witness = rate_witness or (i, j)
    evidence["cost_premise"] = cost_ok
    evidence["rate_premise"] = rate_ok
    if cost_witness:
        evidence["cost_counterexample_pair"] = cost_witness
    if rate_witness:
        evidence["rate_counterexample_pair"] = rate_witness
    if not (cost_ok and rate_ok):
        evidence["reason"] = "cross-node premises fail"
        return CheckEntry("node_ordering", SKIPPED, evidence=evidence)

    pol = solution.policy
    lo1, hi1, lo2, hi2 = _window(trunc)
    violations = []
    for x1 in range(max(lo1, 1), hi1 + 1):
        for x2 in range(max(lo2, 1), hi2 + 1):
            a = int(pol.a_idx[x1, x2])
            b = int(pol.b_idx[x1, x2])
            if n2s.actions[b] < n1s.actions[a]:
                violations.append(Violation(
                    "node_ordering", ((x1, x2),),
                    lhs=float(n2s.actions[b]), rhs=float(n1s.actions[a]),
                    magnitude=float(n1s.actions[a] - n2s.actions[b])))
    return _asserted("node_ordering", violations, evidence)


def _cell_quotients(spec) -> np.ndarray:
    return np.diff(spec.cost) / np.diff(spec.mu)


def check_uniqueness_conditions(model: TandemModel, solution: Solution,
                                trunc: TruncationSpec) -> CheckEntry:
    """Singleton argmin sets when both cost-per-rate increment sequences
    are monotone (either direction), the finite-grid reading of monotone
    marginal cost per marginal rate."""
    evidence: dict = {}
    if model.node1.n_actions < 3 or model.node2.n_actions < 3:
        evidence["reason"] = "grids need >= 3 points for difference quotients"
        return CheckEntry("uniqueness", SKIPPED, evidence=evidence)

    monotone = []
    for name, spec in (("node1", model.node1), ("node2", model.node2)):
        cells = _cell_quotients(spec)
        mono = bool(np.all(np.diff(cells) >= 0) or np.all(np.diff(cells) <= 0))
        evidence[f"{name}_cell_quotients"] = [float(c) for c in cells]
        evidence[f"{name}_monotone"] = mono
        monotone.append(mono)
    if not all(monotone):
        evidence["reason"] = "cost-per-rate increments not monotone"
        return CheckEntry("uniqueness", SKIPPED, evidence=evidence)

    pol = solution.policy
    lo1, hi1, lo2, hi2 = _window(trunc)
    violations = []
    a_counts, b_counts = pol.a_counts, pol.b_counts
    for x1 in range(lo1, hi1 + 1):
        for x2 in range(lo2, hi2 + 1):
            if a_counts[x1, x2] > 1:
                violations.append(Violation(
                    "uniqueness", ((x1, x2),),
                    lhs=float(a_counts[x1, x2]), rhs=1.0,
                    magnitude=float(a_counts[x1, x2] - 1)))
            if b_counts[x1, x2] > 1:
                violations.append(Violation(
                    "uniqueness", ((x1, x2),),
                    lhs=float(b_counts[x1, x2]), rhs=1.0,
                    magnitude=float(b_counts[x1, x2] - 1)))
    return _asserted("uniqueness", violations, evidence)


def check_idle_zero(model: TandemModel, solution: Solution,
                    trunc: TruncationSpec) -> CheckEntry:
    """Canonical action 0 wherever the node is empty.

    With strictly positive costs this is the no-benefit argument; with free
    resources it still holds because ties break to the smallest action.
    This check lives on the x1 = 0 and x2 = 0 axes by construction, so the
    margin shaves only the far (truncation) ends of each axis.
    """
    pol = solution.policy
    evidence = {
        "node1_costs_strictly_positive": bool(np.all(model.node1.cost[1:] > 0)),
        "node2_costs_strictly_positive": bool(np.all(model.node2.cost[1:] > 0)),
    }
    violations = []
    for x2 in range(0, trunc.L2 - trunc.margin + 1):
        a = int(pol.a_idx[0, x2])
        if a != 0:
            violations.append(Violation(
                "idle_zero", ((0, x2),), lhs=float(a), rhs=0.0,
                magnitude=float(a)))
    for x1 in range(0, trunc.L1 - trunc.margin + 1):
        b = int(pol.b_idx[x1, 0])
        if b != 0:
            violations.append(Violation(
                "idle_zero", ((x1, 0),), lhs=float(b), rhs=0.0,
                magnitude=float(b)))
    return _asserted("idle_zero", violations, evidence)


def check_bangbang(model: TandemModel, solution: Solution,
                   trunc: TruncationSpec) -> CheckEntry:
    """Premise audit plus extreme-action structure scan.

    Premises per node, on the grid: cost-per-rate ratio non-increasing over
    positive actions, and the forward difference quotient dc/dmu strictly
    above the ratio at every interior grid point.  The scan always reports
    the fraction of interior states whose canonical actions are extreme
    ({0, max} at both nodes); PASS/FAIL is asserted only when the premises
    hold, otherwise the entry is informational.
    """
    pol = solution.policy
    lo1, hi1, lo2, hi2 = _window(trunc)
    n_a = model.node1.n_actions
    n_b = model.node2.n_actions
    a_extreme = np.isin(pol.a_idx[lo1:hi1 + 1, lo2:hi2 + 1], [0, n_a - 1])
    b_extreme = np.isin(pol.b_idx[lo1:hi1 + 1, lo2:hi2 + 1], [0, n_b - 1])
    both = a_extreme & b_extreme
    evidence: dict = {
        "bang_bang_fraction": float(both.mean()),
        "node1_extreme_fraction": float(a_extreme.mean()),
        "node2_extreme_fraction": float(b_extreme.mean()),
    }

    if n_a < 3 or n_b < 3:
        evidence["reason"] = ("no interior grid actions; premises untestable, "
                              "fraction reported only")
        return CheckEntry("bangbang", INFO, evidence=evidence)

    premises_hold = True
    for name, spec in (("node1", model.node1), ("node2", model.node2)):
        ratio = spec.cost[1:] / spec.mu[1:]
        ratio_noninc = bool(np.all(np.diff(ratio) <= 0))
        cells = _cell_quotients(spec)
        # Forward quotient at interior grid point k is cells[k].
        interior = range(1, spec.n_actions - 1)
        quotient_above = [bool(cells[k] > spec.cost[k] / spec.mu[k])
                          for k in interior]
        evidence[f"{name}_ratio_nonincreasing"] = ratio_noninc
        evidence[f"{name}_quotient_above_ratio"] = quotient_above
        premises_hold = premises_hold and ratio_noninc and all(quotient_above)
    evidence["premises_hold"] = premises_hold

    if not premises_hold:
        evidence["reason"] = ("premises do not hold on this grid; "
                              "structure scan is informational")
        return CheckEntry("bangbang", INFO, evidence=evidence)

    violations = []
    for i, j in np.argwhere(~both):
        x = (lo1 + int(i), lo2 + int(j))
        violations.append(Violation(
            "bangbang", (x,),
            lhs=float(pol.a_idx[x]), rhs=float(pol.b_idx[x]),
            magnitude=1.0))
    return _asserted("bangbang", violations, evidence)


def check_decoupling(model: TandemModel, solution: Solution,
                     trunc: TruncationSpec) -> CheckEntry:
    """Per-node action depends only on that node's own queue length."""
    _, _, raw = extract_marginals(solution.policy, trunc)
    violations = [
        Violation("decoupling", (d.state_a, d.state_b),
                  lhs=float(d.idx_a), rhs=float(d.idx_b),
                  magnitude=float(abs(d.idx_a - d.idx_b)))
        for d in raw
    ]
    return _asserted("decoupling", violations)


def run_all_checks(model: TandemModel, solution: Solution,
                   trunc: TruncationSpec, mode: str = "default",
                   value_tol: float = VALUE_TOL) -> CheckReport:
    """Run the whole battery and aggregate into one report."""
    entries: list[CheckEntry] = []
    entries.append(check_nondecreasing(model, solution, trunc, value_tol))
    entries.extend(check_swap_dominance(model, solution, trunc, value_tol, mode))
    entries.extend(check_quasiconvexity(model, solution, trunc, value_tol))
    entries.extend(check_policy_monotonicity(model, solution, trunc, mode))
    entries.append(check_node_ordering(model, solution, trunc))
    entries.append(check_uniqueness_conditions(model, solution, trunc))
    entries.append(check_idle_zero(model, solution, trunc))
    entries.append(check_bangbang(model, solution, trunc))
    entries.append(check_decoupling(model, solution, trunc))
    params = {
        "margin": trunc.margin,
        "value_tol": value_tol,
        "tie_tol": solution.options.tie_tol,
        "mode": mode,
    }
    return CheckReport(entries=entries, params=params)
