"""Training, evaluation, and duel protocols, deterministic from one seed.

One run is single-threaded end to end.  Child streams for network init,
exploration, per-episode environment resets, and test rollouts are derived
from the master seed, so the training trajectory does not depend on how
often evaluation runs.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from pathlib import Path

from . import cartpole, config as config_mod, kvformat, nn, scm
from .agent import AgentState, ReplayBuffer, Transition, select_action, sync_target, train_step
from .cartpole import EnvSpec, state_vector
from .config import RunConfig
from .metrics import DuelResult, DuelRow, EpisodeRow, MetricsLog
from .peace import peace_from_samples
from .rng import Xoshiro256, derive_seed


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite signal; message names episode and step."""


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainResult:
    agent: AgentState
    log: MetricsLog
    episodes_to_solve: int | None
    final_epsilon: float
    config: RunConfig


def rolling_mean_met(rewards, threshold: float, window: int) -> bool:
    """Stop rule: mean of the last `window` rewards meets the threshold.

    Requires a full window; shorter histories never fire.
    """
    if len(rewards) < window:
        return False
    return sum(rewards[-window:]) / window >= threshold


def first_stop_episode(rewards, threshold: float, window: int) -> int | None:
    """First 1-based episode at which the stop rule fires over a scripted
    reward sequence, or None if it never does."""
    for ep in range(1, len(rewards) + 1):
        if rolling_mean_met(rewards[:ep], threshold, window):
            return ep
    return None


def run_training(cfg: RunConfig) -> TrainResult:
    """Train one agent; fully deterministic given the config (incl. seed).

    Stops at the first episode whose trailing-window mean training reward
    reaches the threshold, else after max_episodes.
    """
    config_mod.validate_config(cfg)
    env_spec = config_mod.to_env_spec(cfg)
    loss_cfg = config_mod.to_loss_config(cfg)
    params = nn.init_network(config_mod.layer_sizes(cfg), derive_seed(cfg.seed, "net-init"))
    agent = AgentState(
        kind=cfg.agent_kind,
        params=params,
        target_params=params.copy(),
        opt_state=nn.init_optimizer(
            params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon
        ),
        config=loss_cfg,
    )
    buffer = ReplayBuffer(cfg.buffer_capacity)
    rng = Xoshiro256(derive_seed(cfg.seed, "agent"))
    rows: list[EpisodeRow] = []
    rewards: list[float] = []
    last_test = 0.0
    solve = None
    epsilon = cfg.epsilon_start
    for ep in range(1, cfg.max_episodes + 1):
        epsilon = max(cfg.epsilon_end, cfg.epsilon_start * cfg.epsilon_decay ** (ep - 1))
        env_state = cartpole.reset(env_spec, derive_seed(cfg.seed, "episode", ep))
        ep_reward = 0.0
        losses: list[float] = []
        penalties: list[float] = []
        peaces: list[float] = []
        step_idx = 0
        while True:
            vec = state_vector(env_state)
            action = select_action(agent.params, vec, epsilon, rng)
            nxt, reward, done = cartpole.step(env_spec, env_state, action)
            ep_reward += reward
            buffer.push(
                Transition(
                    state=vec, action=action, reward=reward, next_state=state_vector(nxt), done=done
                )
            )
            step_idx += 1
            if len(buffer) >= cfg.batch_size and step_idx % cfg.train_every == 0:
                batch = buffer.sample(rng, cfg.batch_size)
                try:
                    agent, m = train_step(agent, batch)
                except nn.NonFiniteError as exc:
                    raise TrainingDiverged(
                        f"non-finite training signal at episode {ep}, step {step_idx}: {exc}"
                    ) from exc
                losses.append(m.loss)
                penalties.append(m.penalty)
                peaces.append(m.peace)
            env_state = nxt
            if done:
                break
        if ep % cfg.sync_every == 0:
            agent = sync_target(agent)
        if (ep - 1) % cfg.eval_every == 0:
            last_test = greedy_score(
                agent.params, env_spec, cfg.eval_episodes, derive_seed(cfg.seed, "test", ep)
            )
        n_updates = len(losses)
        rows.append(
            EpisodeRow(
                episode=ep,
                train_reward=ep_reward,
                test_reward=last_test,
                mean_peace=math.fsum(peaces) / n_updates if n_updates else 0.0,
                sum_peace=math.fsum(peaces),
                mean_loss=math.fsum(losses) / n_updates if n_updates else 0.0,
                mean_penalty=math.fsum(penalties) / n_updates if n_updates else 0.0,
                epsilon=epsilon,
            )
        )
        rewards.append(ep_reward)
        if rolling_mean_met(rewards, cfg.stop_threshold, cfg.stop_window):
            solve = ep
            break
    return TrainResult(
        agent=agent,
        log=MetricsLog(rows),
        episodes_to_solve=solve,
        final_epsilon=epsilon,
        config=cfg,
    )


def greedy_episode(params: nn.NetworkParams, env_spec: EnvSpec, env_seed: int) -> float:
    """One epsilon=0 rollout; returns the episode's total reward."""
    rng = Xoshiro256(derive_seed(env_seed, "greedy"))
    state = cartpole.reset(env_spec, env_seed)
    total = 0.0
    while True:
        action = select_action(params, state_vector(state), 0.0, rng)
        state, reward, done = cartpole.step(env_spec, state, action)
        total += reward
        if done:
            return total


def greedy_score(params: nn.NetworkParams, env_spec: EnvSpec, episodes: int, seed: int) -> float:
    scores = [greedy_episode(params, env_spec, derive_seed(seed, i)) for i in range(1, episodes + 1)]
    return sum(scores) / len(scores)


# ---------------------------------------------------------------------------
# checkpoints: the flat parameter binary plus a `key = value` sidecar
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: nn.NetworkParams, epsilon: float, episode: int, cfg: RunConfig) -> None:
    nn.save_params(params, path)
    pairs = {"epsilon": kvformat.fmt_float(epsilon), "episode": str(episode)}
    for line in config_mod.dump_config(cfg).splitlines():
        key, value = line.split(" = ", 1)
        pairs[f"config.{key}"] = value
    Path(str(path) + ".meta").write_text(kvformat.format_lines(pairs))


def load_checkpoint(path) -> tuple[nn.NetworkParams, dict[str, str]]:
    try:
        params = nn.load_params(path)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    meta_path = Path(str(path) + ".meta")
    meta: dict[str, str] = {}
    if meta_path.exists():
        try:
            meta = kvformat.parse(meta_path.read_text())
        except (OSError, kvformat.KvError) as exc:
            raise CheckpointError(f"cannot load checkpoint sidecar {meta_path}: {exc}") from exc
    return params, meta


def config_from_meta(meta: dict[str, str]) -> RunConfig:
    pairs = {k[len("config."):]: v for k, v in meta.items() if k.startswith("config.")}
    return config_mod.load_config(overrides=pairs) if pairs else RunConfig()


def env_spec_from_meta(meta: dict[str, str]) -> EnvSpec:
    return config_mod.to_env_spec(config_from_meta(meta))


def evaluate(checkpoint_path, episodes: int, seed: int) -> tuple[float, list[float]]:
    """Greedy evaluation of a stored checkpoint; deterministic given seed."""
    if episodes < 1:
        raise ValueError("evaluate: episodes must be >= 1")
    params, meta = load_checkpoint(checkpoint_path)
    env_spec = env_spec_from_meta(meta)
    scores = [
        greedy_episode(params, env_spec, derive_seed(seed, "eval", i))
        for i in range(1, episodes + 1)
    ]
    return sum(scores) / len(scores), scores


def duel(path_a, path_b, rounds: int, episodes_per_round: int, seed: int) -> DuelResult:
    """Paired-seed head-to-head: both agents replay identical episode seeds.

    Per-round scores are each agent's mean over the round's episodes.  The
    first checkpoint's environment settings host the duel.
    """
    if rounds < 1 or episodes_per_round < 1:
        raise ValueError("duel: rounds and episodes_per_round must be >= 1")
    params_a, meta_a = load_checkpoint(path_a)
    params_b, _ = load_checkpoint(path_b)
    env_spec = env_spec_from_meta(meta_a)
    result_rows = []
    for rnd in range(1, rounds + 1):
        scores_a = []
        scores_b = []
        for ep in range(1, episodes_per_round + 1):
            env_seed = derive_seed(seed, "duel", rnd, ep)
            scores_a.append(greedy_episode(params_a, env_spec, env_seed))
            scores_b.append(greedy_episode(params_b, env_spec, env_seed))
        result_rows.append(
            DuelRow(
                round=rnd,
                score_a=sum(scores_a) / len(scores_a),
                score_b=sum(scores_b) / len(scores_b),
            )
        )
    return DuelResult(rows=result_rows)


# ---------------------------------------------------------------------------
# estimator validation suite (the `peace-test` subcommand)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IdentificationRecord:
    spec_seed: int
    exact: float
    estimated: float
    rel_error: float
    pooled: float  # what a stratification-blind estimator would converge to


def identification_suite(
    seed: int = 0, n_samples: int = 100_000, n_specs: int = 5
) -> list[IdentificationRecord]:
    """Sample seeded synthetic models and compare the stratified estimate
    against the exact tabulated effect."""
    records = []
    for i in range(1, n_specs + 1):
        spec_seed = derive_seed(seed, "scm", i)
        spec = scm.random_spec(spec_seed)
        samples = scm.sample_observational(spec, n_samples, derive_seed(seed, "samples", i))
        estimated = peace_from_samples(samples).peace
        exact = scm.exact_peace(spec)
        records.append(
            IdentificationRecord(
                spec_seed=spec_seed,
                exact=exact,
                estimated=estimated,
                rel_error=abs(estimated - exact) / abs(exact),
                pooled=scm.exact_pooled_effect(spec),
            )
        )
    return records


# ---------------------------------------------------------------------------
# cross-agent comparison table
# ---------------------------------------------------------------------------

def format_comparison(
    baseline_solves: list[int | None],
    causal_solves: list[int | None],
    max_episodes: int,
    duel_mean_dqn: float | None = None,
    duel_mean_causal: float | None = None,
) -> str:
    """Side-by-side summary: median episodes-to-solve per agent plus duel means.

    Unsolved runs are censored at max_episodes for the median.
    """

    def censored(values):
        return [v if v is not None else max_episodes for v in values]

    def solved(values):
        return sum(1 for v in values if v is not None)

    lines = [
        f"{'metric':<28}{'dqn':>12}{'causal':>12}",
        f"{'median_episodes_to_solve':<28}{statistics.median(censored(baseline_solves)):>12g}"
        f"{statistics.median(censored(causal_solves)):>12g}",
        f"{'solved_runs':<28}{f'{solved(baseline_solves)}/{len(baseline_solves)}':>12}"
        f"{f'{solved(causal_solves)}/{len(causal_solves)}':>12}",
    ]
    if duel_mean_dqn is not None and duel_mean_causal is not None:
        lines.append(f"{'duel_mean_score':<28}{duel_mean_dqn:>12.3f}{duel_mean_causal:>12.3f}")
    return "\n".join(lines) + "\n"
