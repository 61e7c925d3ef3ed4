"""Deep Q-learning agents: replay, epsilon-greedy policy, TD loss, and the
causal-effect penalty coupling the minibatch PEACE estimate into training.

Two penalty modes exist.  ``scalar`` adds penalty_weight / (peace + floor)
to the loss value only; gradients stay purely temporal-difference.  The
default ``differentiable`` mode computes the minibatch effect from the
online network's Q(s, a) outputs, so the reciprocal penalty also
backpropagates and rewards parameterizations whose action values separate
within state strata.  With penalty_weight 0 either mode reduces exactly to
the plain TD loss, bitwise.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .nn import GradientSet, NetworkParams, NonFiniteError, OptimizerState
from .peace import (
    CausalEffectEstimate,
    ObservationTriple,
    build_strata,
    estimate_from_strata,
    peace_from_samples,
)
from .rng import Xoshiro256

OUTCOME_RULES = ("td_target", "q_value")
PENALTY_MODES = ("scalar", "differentiable")
AGENT_KINDS = ("dqn", "causal")


@dataclass(slots=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    outcome_y: float | None = None  # filled when the batch outcome rule runs


class ReplayBuffer:
    """Bounded FIFO of transitions; sampling is uniform with replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("ReplayBuffer: capacity must be >= 1")
        self.capacity = capacity
        self._store: list[Transition] = []
        self._next = 0

    def push(self, transition: Transition) -> None:
        if len(self._store) < self.capacity:
            self._store.append(transition)
        else:
            self._store[self._next] = transition
            self._next = (self._next + 1) % self.capacity

    def sample(self, rng: Xoshiro256, batch_size: int) -> list[Transition]:
        if batch_size < 1:
            raise ValueError("ReplayBuffer.sample: batch_size must be >= 1")
        if not self._store:
            raise ValueError("ReplayBuffer.sample: buffer is empty")
        n = len(self._store)
        store = self._store
        return [store[rng.randrange(n)] for _ in range(batch_size)]

    def __len__(self) -> int:
        return len(self._store)


@dataclass(frozen=True)
class BinningRule:
    """Maps continuous state vectors to discrete stratum keys.

    Per-dimension boundaries split each component into len(edges) + 1 bins;
    the key is the mixed-radix index over all dimensions, so every state
    maps to exactly one key.
    """

    boundaries: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        for d, edges in enumerate(self.boundaries):
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError(f"BinningRule: boundaries for dimension {d} not strictly increasing")

    @classmethod
    def sign_bins(cls, n_dims: int) -> "BinningRule":
        """One boundary at zero per dimension (2**n_dims strata)."""
        return cls(((0.0,),) * n_dims)

    def key(self, state) -> int:
        if len(state) != len(self.boundaries):
            raise ValueError(
                f"BinningRule.key: state has {len(state)} dims, rule has {len(self.boundaries)}"
            )
        key = 0
        scale = 1
        for d, edges in enumerate(self.boundaries):
            key += bisect_right(edges, state[d]) * scale
            scale *= len(edges) + 1
        return key

    def keys(self, states: np.ndarray) -> np.ndarray:
        """Vectorized `key` over a (batch, dims) array."""
        states = np.asarray(states, dtype=np.float64)
        if states.ndim != 2 or states.shape[1] != len(self.boundaries):
            raise ValueError(f"BinningRule.keys: expected (batch, {len(self.boundaries)}) array")
        out = np.zeros(len(states), dtype=np.int64)
        scale = 1
        for d, edges in enumerate(self.boundaries):
            out += np.searchsorted(np.asarray(edges), states[:, d], side="right") * scale
            scale *= len(edges) + 1
        return out


DEFAULT_BINNING = BinningRule.sign_bins(4)


@dataclass(frozen=True)
class LossConfig:
    binning: BinningRule = DEFAULT_BINNING
    gamma: float = 0.99
    penalty_weight: float = 1.0
    penalty_floor: float = 1e-6
    penalty_mode: str = "differentiable"
    outcome_rule: str | None = None  # None picks the mode's default

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"LossConfig: gamma {self.gamma} outside [0, 1)")
        if self.penalty_weight < 0.0:
            raise ValueError("LossConfig: penalty_weight must be >= 0")
        if self.penalty_floor <= 0.0:
            raise ValueError("LossConfig: penalty_floor must be > 0")
        if self.penalty_mode not in PENALTY_MODES:
            raise ValueError(f"LossConfig: unknown penalty_mode {self.penalty_mode!r}")
        if self.outcome_rule is not None and self.outcome_rule not in OUTCOME_RULES:
            raise ValueError(f"LossConfig: unknown outcome_rule {self.outcome_rule!r}")
        if self.penalty_mode == "differentiable" and self.outcome_rule == "td_target":
            raise ValueError(
                "LossConfig: the differentiable penalty needs the q_value outcome rule"
            )

    @property
    def resolved_outcome_rule(self) -> str:
        if self.outcome_rule is not None:
            return self.outcome_rule
        return "q_value" if self.penalty_mode == "differentiable" else "td_target"


def select_action(params: NetworkParams, state, epsilon: float, rng: Xoshiro256) -> int:
    """Epsilon-greedy over the action values; ties pick the lower index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"select_action: epsilon {epsilon} outside [0, 1]")
    n_actions = params.layers[-1].w.shape[0]
    if rng.random() < epsilon:
        return rng.randrange(n_actions)
    q, _ = nn.forward(params, state)
    return int(np.argmax(q))


def td_error(
    params: NetworkParams, target_params: NetworkParams, transition: Transition, gamma: float
) -> float:
    """r + gamma * max_a' Q_target(s', a') - Q(s, a); the next-state term is
    dropped on terminal transitions."""
    q, _ = nn.forward(params, transition.state)
    target = transition.reward
    if not transition.done:
        q_next, _ = nn.forward(target_params, transition.next_state)
        target += gamma * float(np.max(q_next))
    return target - float(q[transition.action])


def _batch_arrays(batch):
    n = len(batch)
    states = np.stack([t.state for t in batch]).astype(np.float64, copy=False)
    next_states = np.stack([t.next_state for t in batch]).astype(np.float64, copy=False)
    actions = np.fromiter((t.action for t in batch), dtype=np.int64, count=n)
    rewards = np.fromiter((t.reward for t in batch), dtype=np.float64, count=n)
    not_done = np.fromiter((0.0 if t.done else 1.0 for t in batch), dtype=np.float64, count=n)
    return states, next_states, actions, rewards, not_done


def _td_forward(params, target_params, batch, gamma):
    states, next_states, actions, rewards, not_done = _batch_arrays(batch)
    q_all, trace = nn.forward(params, states)
    q_next, _ = nn.forward(target_params, next_states)
    targets = rewards + gamma * q_next.max(axis=1) * not_done
    rows = np.arange(len(batch))
    q_sa = q_all[rows, actions]
    return states, actions, targets, q_sa, targets - q_sa, q_all, trace, rows


def td_loss(
    params: NetworkParams, target_params: NetworkParams, batch, gamma: float
) -> tuple[float, GradientSet]:
    """Mean squared TD residual over the batch, with its gradients."""
    if not batch:
        raise ValueError("td_loss: empty batch")
    _, actions, _, _, td, q_all, trace, rows = _td_forward(params, target_params, batch, gamma)
    loss = float(np.mean(td * td))
    out_grad = np.zeros_like(q_all)
    out_grad[rows, actions] = (-2.0 / len(batch)) * td
    grads = nn.backward(params, trace, out_grad)
    if not math.isfinite(loss):
        raise NonFiniteError("td_loss: non-finite loss value")
    return loss, grads


def batch_peace(
    batch,
    binning: BinningRule,
    outcome_rule: str,
    params: NetworkParams,
    target_params: NetworkParams,
    gamma: float,
) -> CausalEffectEstimate:
    """Minibatch effect of action on outcome, with strata from binned states.

    Outcome rule ``td_target`` uses r + gamma * max Q_target(s') (terminal
    transitions keep only r); ``q_value`` uses the online network's Q(s, a).
    Fills each transition's outcome_y, then delegates to the stratified
    estimator.
    """
    if not batch:
        raise ValueError("batch_peace: empty batch")
    if outcome_rule not in OUTCOME_RULES:
        raise ValueError(f"batch_peace: unknown outcome rule {outcome_rule!r}")
    states, next_states, actions, rewards, not_done = _batch_arrays(batch)
    if outcome_rule == "td_target":
        q_next, _ = nn.forward(target_params, next_states)
        ys = rewards + gamma * q_next.max(axis=1) * not_done
    else:
        q_all, _ = nn.forward(params, states)
        ys = q_all[np.arange(len(batch)), actions]
    zkeys = binning.keys(states)
    triples = []
    for t, z, y in zip(batch, zkeys, ys):
        t.outcome_y = float(y)
        triples.append(ObservationTriple(x=float(t.action), z=int(z), y=float(y)))
    return peace_from_samples(triples)


def _sign(v: float) -> float:
    if v > 0.0:
        return 1.0
    if v < 0.0:
        return -1.0
    return 0.0  # |.| takes subgradient 0 at 0


def _add_penalty_gradient(out_grad, actions, zkeys, strata, estimate, config) -> None:
    """Accumulate d(penalty)/dQ(s_j, a_j) into the output-gradient matrix.

    penalty = weight / (peace + floor), and each sample j moves its
    (stratum, action) conditional mean by 1 / cell count, so

        d(penalty)/dQ_j = -weight / (peace + floor)^2
                          * stratum_weight * d(stratum effect)/d(mean cell)
                          / cell count.
    """
    coef = -config.penalty_weight / (estimate.peace + config.penalty_floor) ** 2
    cell_count = Counter(zip(zkeys.tolist(), (float(a) for a in actions)))
    cell_coef: dict[tuple[int, float], float] = {}
    total = estimate.n_samples
    for st in strata:
        if len(st.values) < 2:
            continue
        w_z = st.count / total
        m, p, vals = st.cond_mean, st.cond_prob, st.values
        for i, x in enumerate(vals):
            d = 0.0
            if i >= 1:
                d += _sign(m[i] - m[i - 1]) * p[i] * p[i - 1]
            if i + 1 < len(vals):
                d -= _sign(m[i + 1] - m[i]) * p[i + 1] * p[i]
            if d != 0.0:
                cell_coef[(st.stratum, x)] = coef * w_z * d / cell_count[(st.stratum, x)]
    if not cell_coef:
        return
    for j in range(len(actions)):
        c = cell_coef.get((int(zkeys[j]), float(actions[j])))
        if c is not None:
            out_grad[j, actions[j]] += c


def causal_loss(
    params: NetworkParams, target_params: NetworkParams, batch, config: LossConfig
) -> tuple[float, GradientSet, CausalEffectEstimate]:
    """TD loss plus the reciprocal causal-effect penalty.

    The penalty strictly decreases as the minibatch effect grows.  In
    scalar mode it is a constant added after gradient computation; in
    differentiable mode the conditional means are taken over network
    outputs, so the penalty contributes gradients through Q.  With
    penalty_weight 0 the result is exactly the plain TD loss.
    """
    if not batch:
        raise ValueError("causal_loss: empty batch")
    n = len(batch)
    states, actions, targets, q_sa, td, q_all, trace, rows = _td_forward(
        params, target_params, batch, config.gamma
    )
    loss = float(np.mean(td * td))
    out_grad = np.zeros_like(q_all)
    out_grad[rows, actions] = (-2.0 / n) * td

    ys = q_sa if config.resolved_outcome_rule == "q_value" else targets
    zkeys = config.binning.keys(states)
    triples = []
    for t, a, z, y in zip(batch, actions, zkeys, ys):
        t.outcome_y = float(y)
        triples.append(ObservationTriple(x=float(a), z=int(z), y=float(y)))
    strata = build_strata(triples)
    estimate = estimate_from_strata(strata)

    if config.penalty_weight != 0.0:
        loss += config.penalty_weight / (estimate.peace + config.penalty_floor)
        if config.penalty_mode == "differentiable":
            _add_penalty_gradient(out_grad, actions, zkeys, strata, estimate, config)
    grads = nn.backward(params, trace, out_grad)
    if not math.isfinite(loss):
        raise NonFiniteError("causal_loss: non-finite loss value")
    return loss, grads, estimate


@dataclass
class AgentState:
    kind: str  # "dqn" or "causal"
    params: NetworkParams
    target_params: NetworkParams
    opt_state: OptimizerState
    config: LossConfig

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"AgentState: unknown agent kind {self.kind!r}")


@dataclass(frozen=True)
class StepMetrics:
    loss: float
    penalty: float
    peace: float


def train_step(agent: AgentState, batch) -> tuple[AgentState, StepMetrics]:
    """One optimizer step on the agent's loss.

    The baseline agent trains on the plain TD loss; its minibatch effect is
    still estimated for logging so both agents report the same metric.
    """
    cfg = agent.config
    if agent.kind == "causal":
        loss, grads, estimate = causal_loss(agent.params, agent.target_params, batch, cfg)
        penalty = (
            cfg.penalty_weight / (estimate.peace + cfg.penalty_floor)
            if cfg.penalty_weight != 0.0
            else 0.0
        )
    else:
        loss, grads = td_loss(agent.params, agent.target_params, batch, cfg.gamma)
        estimate = batch_peace(
            batch, cfg.binning, cfg.resolved_outcome_rule, agent.params, agent.target_params, cfg.gamma
        )
        penalty = 0.0
    params, opt_state = nn.optimizer_step(agent.params, grads, agent.opt_state)
    return (
        replace(agent, params=params, opt_state=opt_state),
        StepMetrics(loss=loss, penalty=penalty, peace=estimate.peace),
    )


def sync_target(agent: AgentState) -> AgentState:
    """Copy the online parameters into the target network."""
    return replace(agent, target_params=agent.params.copy())
