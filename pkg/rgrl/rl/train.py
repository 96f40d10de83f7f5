"""
Off-policy training loop shared by RPO-DDPG, RPO-SAC and the Lagrangian baselines.

Each environment step: sample basic actions, construct and project them,
execute, store the executed transition, then update the critic every step
and the actor (plus the penalty factors) every update_interval steps.
"""
import copy
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
from tqdm import tqdm

from rgrl.action_pipeline import construct, project, project_eval
from rgrl.constraint_core import ConstraintModel, as_inequalities
from rgrl.envs.base import HardConstrainedEnv
from rgrl.errors import NumericalDivergence, NumericalError
from rgrl.harness.metrics import EpisodeTrace, MetricRecord, aggregate, compute_metrics
from rgrl.numkit import RngStream
from rgrl.rl.buffer import Batch, ReplayBuffer, Transition
from rgrl.rl.config import Algorithm, PenaltyMode, TrainConfig
from rgrl.rl.losses import critic_loss, policy_loss, td_target
from rgrl.rl.networks import Critic, DeterministicActor, GaussianActor, as_tensor, soft_update
from rgrl.rl.penalty import PenaltyState, dual_update

logger = logging.getLogger(__name__)

# spawn keys of the per-consumer streams under RngStream(cfg.seed)
RNG_STREAMS = {"env": 0, "act": 1, "buffer": 2}


# ============================================================================
# AGENT
# ============================================================================

@dataclass
class Agent:
    algorithm: Algorithm
    actor: nn.Module
    critics: list[nn.Module]
    critic_targets: list[nn.Module]
    actor_optimizer: torch.optim.Optimizer
    critic_optimizer: torch.optim.Optimizer
    penalty: PenaltyState
    generator: torch.Generator
    # DDPG bootstraps through a target actor, SAC through the online one
    actor_target: Optional[nn.Module] = None
    # numpy streams of the training loop, keyed as in RNG_STREAMS
    rngs: dict[str, RngStream] = field(default_factory=dict)

    @property
    def bootstrap_actor(self) -> nn.Module:
        return self.actor_target if self.actor_target is not None else self.actor


def policy_box(model: ConstraintModel, algorithm: Algorithm) -> tuple[np.ndarray, np.ndarray]:
    """Box of the actions the policy head emits: basic actions for RPO, full actions for baselines."""
    if algorithm.uses_pipeline:
        return model.basic_bounds()
    return model.lower.copy(), model.upper.copy()


def loss_model(model: ConstraintModel, algorithm: Algorithm) -> ConstraintModel:
    """Constraint set seen by the losses; baselines treat each equality as two inequalities."""
    return model if algorithm.uses_pipeline else as_inequalities(model)


def build_agent(state_dim: int, model: ConstraintModel, cfg: TrainConfig, generator: torch.Generator) -> Agent:
    low, high = policy_box(model, cfg.algorithm)
    actor_cls = GaussianActor if cfg.algorithm.is_sac else DeterministicActor
    actor = actor_cls(state_dim, low, high, cfg.hidden, generator)
    n_critics = 2 if cfg.algorithm.is_sac else 1
    critics = [Critic(state_dim, model.n, cfg.hidden, generator) for _ in range(n_critics)]

    n_ineq = loss_model(model, cfg.algorithm).n_ineq
    if cfg.penalty_mode is PenaltyMode.FIXED:
        penalty = PenaltyState.fixed(n_ineq, cfg.fixed_penalty)
    else:
        penalty = PenaltyState.zeros(n_ineq, cfg.penalty_lr)

    return Agent(
        algorithm=cfg.algorithm,
        actor=actor,
        critics=critics,
        critic_targets=[copy.deepcopy(c).requires_grad_(False) for c in critics],
        actor_optimizer=torch.optim.Adam(actor.parameters(), lr=cfg.policy_lr),
        critic_optimizer=torch.optim.Adam([p for c in critics for p in c.parameters()], lr=cfg.value_lr),
        penalty=penalty,
        generator=generator,
        actor_target=None if cfg.algorithm.is_sac else copy.deepcopy(actor).requires_grad_(False),
    )


# ============================================================================
# ACTING
# ============================================================================

def act(actor: nn.Module, obs: np.ndarray, mode: str, rng: Optional[RngStream] = None, exploration_std: float = 0.0) -> tuple[np.ndarray, Optional[float]]:
    """
    Policy output for one observation.

    mode "explore" adds Gaussian noise (DDPG, clipped to the box) or samples the
    squashed Gaussian (SAC); mode "eval" returns the noiseless mean.

    Returns:
        Tuple of (action, SAC log-probability or None)
    """
    if mode not in ("explore", "eval"):
        raise ValueError(f"unknown mode '{mode}'")
    obs_t = as_tensor(obs)[None, :]
    with torch.no_grad():
        if actor.stochastic:
            if mode == "eval":
                action, log_prob = actor(obs_t, deterministic=True)
            else:
                noise = as_tensor(rng.normal(size=(1, actor.action_dim)))
                action, log_prob = actor(obs_t, noise=noise)
            return action[0].numpy().copy(), float(log_prob[0])

        action = actor(obs_t)[0].numpy().copy()
    if mode == "explore" and exploration_std > 0:
        center, half = actor.squash.center.numpy(), actor.squash.half_width.numpy()
        action = np.clip(action + rng.normal(0.0, exploration_std, action.shape), center - half, center + half)
    return action, None


def execute_decision(
    model: ConstraintModel,
    obs: np.ndarray,
    policy_action: np.ndarray,
    cfg: TrainConfig,
    evaluation: bool = False,
    warm_start: Optional[np.ndarray] = None,
    stats: Optional[Counter] = None,
) -> tuple[np.ndarray, int, Optional[np.ndarray]]:
    """
    Turn a policy output into the executed action.

    RPO runs construction and projection, falling back to the constructed action
    if projection fails; baselines execute the policy output directly. A failed
    warm-started construction is retried from the flat start before giving up.

    Returns:
        Tuple of (action, GRG updates used, nonbasic values for the next warm start)
    """
    if not cfg.algorithm.uses_pipeline:
        return policy_action, 0, None
    stats = stats if stats is not None else Counter()
    try:
        a_tilde = construct(model, obs, policy_action, warm_start, cfg.pipeline)
    except NumericalError:
        if warm_start is None:
            raise
        stats["cold_restarts"] += 1
        a_tilde = construct(model, obs, policy_action, None, cfg.pipeline)

    try:
        if evaluation:
            action, trace = project_eval(model, obs, a_tilde, cfg.pipeline)
        else:
            action, trace = project(model, obs, a_tilde, cfg.pipeline)
        updates = trace.updates_used
    except (NumericalError, ValueError) as exc:
        stats["projection_fallbacks"] += 1
        logger.warning("Projection failed, executing the constructed action: %s", exc)
        action, updates = a_tilde, 0
    return action, updates, a_tilde[list(model.partition.nonbasic)]


def rollout_episode(
    env: HardConstrainedEnv,
    model: ConstraintModel,
    actor: nn.Module,
    cfg: TrainConfig,
    seed: int | RngStream,
) -> EpisodeTrace:
    """One evaluation episode with the noiseless policy and the evaluation projection budget."""
    trace = EpisodeTrace()
    start = time.perf_counter()
    state = env.reset(seed)
    warm = None
    while True:
        policy_action, _ = act(actor, state.obs, "eval")
        action, updates, warm = execute_decision(model, state.obs, policy_action, cfg, evaluation=True, warm_start=warm)
        result = env.step(state, action)
        trace.record(result.reward, result.eq_residual, result.ineq_violation, updates)
        if result.done:
            break
        state = result.next_state
    trace.wall_seconds = time.perf_counter() - start
    return trace


def evaluate(
    env: HardConstrainedEnv,
    model: ConstraintModel,
    actor: nn.Module,
    cfg: TrainConfig,
    seeds: Sequence[int],
    epoch: int = 0,
) -> tuple[MetricRecord, list[MetricRecord]]:
    """
    Returns:
        Tuple of (aggregate record, per-episode records)
    """
    records = [
        compute_metrics(rollout_episode(env, model, actor, cfg, seed), episode=k, epoch=epoch)
        for k, seed in enumerate(seeds)
    ]
    return aggregate(records, epoch=epoch), records


# ============================================================================
# UPDATES
# ============================================================================

def _check_finite(name: str, loss: torch.Tensor, snapshot: dict) -> None:
    if not torch.isfinite(loss):
        logger.error("Non-finite %s loss, snapshot: %s", name, snapshot)
        raise NumericalDivergence(f"{name} loss became non-finite ({snapshot})")


def update(
    agent: Agent,
    model: ConstraintModel,
    batch: Batch,
    cfg: TrainConfig,
    actor_step: bool,
    stats: Counter,
    epoch: int = 0,
) -> dict[str, float]:
    """
    One gradient step of the critics and, when actor_step is set, of the actor
    and the penalty factors, followed by soft target updates.

    model is the loss-side constraint set (see loss_model).
    """
    losses: dict[str, float] = {}
    if actor_step:
        result = policy_loss(agent.actor, agent.critics, model, batch.obs, agent.penalty.nu, cfg, agent.generator)
        stats["skipped_samples"] += result.skipped_samples
        _check_finite("policy", result.loss, {"epoch": epoch, "max_nu": float(np.max(agent.penalty.nu, initial=0.0))})
        agent.actor_optimizer.zero_grad()
        result.loss.backward()
        nn.utils.clip_grad_norm_(agent.actor.parameters(), cfg.grad_clip)
        agent.actor_optimizer.step()
        losses["policy"] = float(result.loss.detach())
        if cfg.penalty_mode is PenaltyMode.ADAPTIVE:
            agent.penalty = dual_update(agent.penalty, result.constraint_values)

    target = td_target(agent.critic_targets, agent.bootstrap_actor, model, batch, cfg, agent.generator)
    stats["td_fallbacks"] += target.fallbacks
    stats["td_masked"] += target.masked
    if target.valid.any():
        loss = critic_loss(agent.critics, batch, target)
        _check_finite("critic", loss, {"epoch": epoch, "reward_max": float(np.max(np.abs(batch.reward)))})
        agent.critic_optimizer.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_([p for c in agent.critics for p in c.parameters()], cfg.grad_clip)
        agent.critic_optimizer.step()
        losses["critic"] = float(loss.detach())

    for critic, critic_target in zip(agent.critics, agent.critic_targets):
        soft_update(critic, critic_target, cfg.tau)
    if agent.actor_target is not None:
        soft_update(agent.actor, agent.actor_target, cfg.tau)
    return losses


# ============================================================================
# TRAINING
# ============================================================================

@dataclass
class TrainResult:
    agent: Agent
    log: list[MetricRecord]
    stats: Counter
    # penalty factors after every dual update, starting from the initial ones
    penalty_trace: list[np.ndarray] = field(default_factory=list)
    eval_seeds: list[int] = field(default_factory=list)


def eval_seeds_for(cfg: TrainConfig) -> list[int]:
    """Episode seeds shared by every evaluation round of a run."""
    stream = RngStream(cfg.seed).spawn(4)
    return [int(v) for v in stream.integers(0, 2**31 - 1, cfg.eval_episodes)]


def train(
    env: HardConstrainedEnv,
    cfg: TrainConfig,
    progress: bool = True,
    on_evaluation: Optional[Callable[[MetricRecord], None]] = None,
) -> TrainResult:
    """Train one seed; returns the agent and one aggregate MetricRecord per evaluation round."""
    root = RngStream(cfg.seed)
    env_rng, act_rng, buffer_rng = (root.spawn(RNG_STREAMS[name]) for name in ("env", "act", "buffer"))
    generator = torch.Generator().manual_seed(root.spawn(3).torch_seed())
    eval_seeds = eval_seeds_for(cfg)

    model = env.constraint_model()
    update_model = loss_model(model, cfg.algorithm)
    agent = build_agent(env.state_dim, model, cfg, generator)
    agent.rngs.update(env=env_rng, act=act_rng, buffer=buffer_rng)
    buffer = ReplayBuffer(cfg.buffer_capacity, env.state_dim, model.n, model.n_ineq, buffer_rng)
    stats: Counter = Counter()
    log: list[MetricRecord] = []
    penalty_trace = [agent.penalty.nu.copy()]
    logger.info(
        "Training %s on %s for %d epochs (seed %d, actor update every %d critic updates)",
        cfg.algorithm.value, env.name, cfg.epochs, cfg.seed, cfg.update_interval,
    )

    state = env.reset(env_rng)
    warm = None
    critic_updates = 0
    for epoch in tqdm(range(1, cfg.epochs + 1), desc=f"{env.name}/{cfg.algorithm.value}", disable=not progress):
        policy_action, _ = act(agent.actor, state.obs, "explore", act_rng, cfg.exploration_std)
        try:
            action, _, warm = execute_decision(model, state.obs, policy_action, cfg, False, warm, stats)
        except NumericalError as exc:
            stats["construction_failures"] += 1
            logger.warning("Construction failed at epoch %d, starting a new episode: %s", epoch, exc)
            state, warm = env.reset(env_rng), None
            continue

        result = env.step(state, action)
        buffer.add(Transition(state.obs, action, result.reward, result.next_state.obs, result.ineq_violation, result.done))
        if result.done:
            state, warm = env.reset(env_rng), None
        else:
            state = result.next_state

        if len(buffer) >= max(cfg.warmup_steps, 1):
            critic_updates += 1
            actor_step = critic_updates % cfg.update_interval == 0
            update(agent, update_model, buffer.sample(cfg.batch_size), cfg, actor_step, stats, epoch)
            if actor_step and cfg.penalty_mode is PenaltyMode.ADAPTIVE:
                penalty_trace.append(agent.penalty.nu.copy())

        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            record, _ = evaluate(env, model, agent.actor, cfg, eval_seeds, epoch)
            log.append(record)
            logger.info(
                "epoch %d: reward %.4f, max eq %.2e, max ineq %.2e",
                epoch, record.reward, record.max_inst_eq, record.max_inst_ineq,
            )
            if on_evaluation is not None:
                on_evaluation(record)

    if stats:
        logger.info("Numerical fallbacks: %s", dict(stats))
    return TrainResult(agent, log, stats, penalty_trace, eval_seeds)
