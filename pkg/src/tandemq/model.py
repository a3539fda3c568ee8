"""Controllable two-node tandem queue model.

Customers arrive at node 1 as a Poisson stream, are served there, move to
node 2, are served again and leave.  A controller assigns a service-resource
amount to each node from a finite grid; the grid point determines the
exponential service rate and the resource-cost rate of that node.  Holding
cost accrues per customer per unit time at each node.

Rates are kept in natural (user) units.  The uniformization constant
``Lambda = lambda + mu1_max + mu2_max`` is computed here and used by the
dynamic-programming and evaluation modules to convert the chain to discrete
time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

State = tuple[int, int]


class ConfigError(ValueError):
    """Base class for model-configuration rejections."""


class MissingKeyError(ConfigError):
    """A required config key is absent."""


class LengthMismatchError(ConfigError):
    """actions / mu / cost arrays of a node differ in length."""


class NonMonotoneGridError(ConfigError):
    """An action grid, mu table or cost table is not increasing as required."""


class NonzeroOriginError(ConfigError):
    """mu(0) or c(0) is not zero, or the grid does not start at 0."""


class UnstableError(ConfigError):
    """Arrival rate is not below the maximal service rate of each node."""


@dataclass(frozen=True)
class NodeSpec:
    """Action grid of one node with its service-rate and cost-rate tables.

    ``actions[k]`` is the resource amount of grid point k, ``mu[k]`` the
    exponential service rate and ``cost[k]`` the resource-cost rate when
    that amount is allocated.  Constructors do not validate; use
    :func:`validate_config` for checked construction.
    """

    actions: np.ndarray
    mu: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        for name in ("actions", "mu", "cost"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_actions(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class ModelConfig:
    """Validated parameter set: arrival rate, holding costs, two node specs."""

    arrival_rate: float
    h1: float
    h2: float
    node1: NodeSpec
    node2: NodeSpec


@dataclass(frozen=True)
class TandemModel:
    """Immutable model with the uniformization constant precomputed.

    Safe for concurrent read access; nothing is mutated after construction.
    """

    config: ModelConfig
    uniformization_rate: float = field(init=False)

    def __post_init__(self):
        cfg = self.config
        lam = cfg.arrival_rate + cfg.node1.mu[-1] + cfg.node2.mu[-1]
        object.__setattr__(self, "uniformization_rate", float(lam))

    # Flattened views used throughout the numeric code.
    @property
    def arrival_rate(self) -> float:
        return self.config.arrival_rate

    @property
    def h1(self) -> float:
        return self.config.h1

    @property
    def h2(self) -> float:
        return self.config.h2

    @property
    def node1(self) -> NodeSpec:
        return self.config.node1

    @property
    def node2(self) -> NodeSpec:
        return self.config.node2


_NODE_KEYS = ("actions", "mu", "cost")


def _validate_node(name: str, raw: Any) -> NodeSpec:
    if not isinstance(raw, dict):
        raise MissingKeyError(f"{name}: expected an object with keys {_NODE_KEYS}")
    for key in _NODE_KEYS:
        if key not in raw:
            raise MissingKeyError(f"{name}.{key} is missing")
    actions = np.asarray(raw["actions"], dtype=float)
    mu = np.asarray(raw["mu"], dtype=float)
    cost = np.asarray(raw["cost"], dtype=float)
    if not (len(actions) == len(mu) == len(cost)):
        raise LengthMismatchError(
            f"{name}: actions/mu/cost lengths differ "
            f"({len(actions)}/{len(mu)}/{len(cost)})"
        )
    if len(actions) < 1:
        raise LengthMismatchError(f"{name}: empty action grid")
    if actions[0] != 0.0:
        raise NonzeroOriginError(f"{name}: actions[0] must be 0, got {actions[0]}")
    if np.any(np.diff(actions) <= 0):
        raise NonMonotoneGridError(f"{name}: actions must be strictly increasing")
    if mu[0] != 0.0:
        raise NonzeroOriginError(f"{name}: mu(0) must be 0, got {mu[0]}")
    if np.any(np.diff(mu) <= 0):
        raise NonMonotoneGridError(f"{name}: mu must be strictly increasing")
    if cost[0] != 0.0:
        raise NonzeroOriginError(f"{name}: cost(0) must be 0, got {cost[0]}")
    if np.any(cost < 0):
        raise NonMonotoneGridError(f"{name}: cost must be nonnegative")
    # cost[1] may equal 0 (free resources); beyond that strictness is required
    # so that "more resources cost more" is well defined.
    if len(cost) > 1 and np.any(np.diff(cost[1:]) <= 0):
        raise NonMonotoneGridError(
            f"{name}: cost must be strictly increasing over positive actions"
        )
    return NodeSpec(actions=actions, mu=mu, cost=cost)


def validate_config(raw: dict) -> ModelConfig:
    """Validate a parsed config document and return a :class:`ModelConfig`.

    Expected keys: ``lambda`` (number), ``h1``, ``h2`` (numbers), ``node1``
    and ``node2`` each an object with equal-length arrays ``actions``,
    ``mu``, ``cost``.  Raises a :class:`ConfigError` subclass on any
    violated invariant.
    """
    if not isinstance(raw, dict):
        raise MissingKeyError("config must be a key-value document")
    for key in ("lambda", "h1", "h2", "node1", "node2"):
        if key not in raw:
            raise MissingKeyError(f"config key '{key}' is missing")
    lam = float(raw["lambda"])
    h1 = float(raw["h1"])
    h2 = float(raw["h2"])
    if lam <= 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    if h1 < 0 or h2 < 0:
        raise ConfigError(f"holding costs must be nonnegative, got {(h1, h2)}")
    node1 = _validate_node("node1", raw["node1"])
    node2 = _validate_node("node2", raw["node2"])
    if lam >= node1.mu[-1]:
        raise UnstableError(
            f"lambda={lam} >= mu1(max)={node1.mu[-1]}: node 1 cannot keep up"
        )
    if lam >= node2.mu[-1]:
        raise UnstableError(
            f"lambda={lam} >= mu2(max)={node2.mu[-1]}: node 2 cannot keep up"
        )
    return ModelConfig(arrival_rate=lam, h1=h1, h2=h2, node1=node1, node2=node2)


def build_model(raw: dict) -> TandemModel:
    """validate_config + TandemModel construction in one step."""
    return TandemModel(config=validate_config(raw))


def transition_rates(
    model: TandemModel, x: State, a_idx: int, b_idx: int
) -> list[tuple[State, float]]:
    """Positive-rate transitions out of ``x`` under grid actions (a_idx, b_idx).

    Untruncated semantics: arrivals always fire; node-1 service fires only
    with a customer present (to ``x - e1 + e2``), node-2 service only with a
    customer present (to ``x - e2``).  Truncation redirection is applied by
    the consumers in dp/evaluation, not here.
    """
    x1, x2 = x
    entries: list[tuple[State, float]] = [((x1 + 1, x2), model.arrival_rate)]
    mu1 = float(model.node1.mu[a_idx])
    if x1 > 0 and mu1 > 0:
        entries.append(((x1 - 1, x2 + 1), mu1))
    mu2 = float(model.node2.mu[b_idx])
    if x2 > 0 and mu2 > 0:
        entries.append(((x1, x2 - 1), mu2))
    return entries


def stage_cost(model: TandemModel, x: State, a_idx: int, b_idx: int) -> float:
    """Cost rate in state ``x``: holding at both nodes plus resource costs."""
    x1, x2 = x
    return (
        model.h1 * x1
        + model.h2 * x2
        + float(model.node1.cost[a_idx])
        + float(model.node2.cost[b_idx])
    )


def stability_margin(model: TandemModel) -> tuple[float, float]:
    """(mu1(max) - lambda, mu2(max) - lambda); positive for a valid model."""
    lam = model.arrival_rate
    return (float(model.node1.mu[-1]) - lam, float(model.node2.mu[-1]) - lam)
