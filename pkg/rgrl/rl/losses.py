"""
Actor and critic objectives.

The actor is trained on construction-stage actions. Gradients reach the basic
actions directly and the nonbasic ones through the implicit Jacobian of the
equality solve: the constructed action is lifted into the autograd graph as
a0 + E (b - stop_grad(b)), where E stacks the identity over the basic rows
and d phi_N / d a^B over the nonbasic rows.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from rgrl.action_pipeline import construct, decide
from rgrl.constraint_core import ConstraintModel, implicit_jacobian
from rgrl.errors import NumericalError
from rgrl.rl.buffer import Batch
from rgrl.rl.config import TrainConfig
from rgrl.rl.networks import DTYPE, as_tensor

logger = logging.getLogger(__name__)


@dataclass
class LiftedActions:
    # (kept, n) actions carrying gradients to the basic outputs
    full: torch.Tensor
    # (kept, n) constructed values, no graph
    constructed: np.ndarray
    kept: list[int]
    skipped: int


@dataclass
class PolicyLoss:
    loss: torch.Tensor
    skipped_samples: int
    # g_j at the constructed actions of the kept samples, (kept, n_ineq)
    constraint_values: np.ndarray


@dataclass
class TdTarget:
    y: torch.Tensor
    valid: np.ndarray
    fallbacks: int
    masked: int


def lift_actions(
    model: ConstraintModel,
    obs: np.ndarray,
    basic: torch.Tensor,
    uses_pipeline: bool = True,
    complete_gradient: bool = True,
) -> LiftedActions:
    """
    Construct full actions for a batch of basic actions and attach their gradient path.

    Samples whose equality solve fails are dropped and counted. With
    complete_gradient=False the nonbasic rows of E are zero and the implicit
    Jacobian is never evaluated.
    """
    if not uses_pipeline:
        return LiftedActions(basic, basic.detach().numpy().copy(), list(range(basic.shape[0])), 0)

    partition = model.partition
    basic_rows, nonbasic_rows = list(partition.basic), list(partition.nonbasic)
    values = basic.detach().numpy()
    constructed, tangents, kept = [], [], []
    for i in range(values.shape[0]):
        try:
            a0 = construct(model, obs[i], values[i])
            E = np.zeros((model.n, model.m))
            E[basic_rows, range(model.m)] = 1.0
            if complete_gradient and model.n_eq:
                E[nonbasic_rows, :] = implicit_jacobian(model, obs[i], a0)
        except NumericalError as exc:
            logger.debug("Skipping batch sample %d: %s", i, exc)
            continue
        constructed.append(a0)
        tangents.append(E)
        kept.append(i)

    skipped = values.shape[0] - len(kept)
    if not kept:
        return LiftedActions(basic[:0].new_zeros((0, model.n)), np.zeros((0, model.n)), [], skipped)
    base = np.stack(constructed)
    delta = basic[kept] - basic[kept].detach()
    full = as_tensor(base) + torch.einsum("bnm,bm->bn", as_tensor(np.stack(tangents)), delta)
    return LiftedActions(full, base, kept, skipped)


def min_q(critics: Sequence[nn.Module], obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
    values = [critic(obs, action) for critic in critics]
    return values[0] if len(values) == 1 else torch.min(torch.stack(values), dim=0).values


def policy_loss(
    actor: nn.Module,
    critics: Sequence[nn.Module],
    model: ConstraintModel,
    obs: np.ndarray,
    nu: np.ndarray,
    cfg: TrainConfig,
    generator: Optional[torch.Generator] = None,
) -> PolicyLoss:
    """
    mean[-Q(s, a~) + sum_j nu_j max{0, g_j(a~; s)} (+ alpha log pi(a^B|s) for SAC)].

    a~ is the construction-stage action. The penalty gradient uses g linearized at
    a~, which is exact for its value and its (sub)gradient.
    """
    obs = np.asarray(obs, dtype=np.float64)
    obs_t = as_tensor(obs)
    if actor.stochastic:
        basic, log_prob = actor(obs_t, generator=generator)
    else:
        basic, log_prob = actor(obs_t), None

    lifted = lift_actions(model, obs, basic, cfg.algorithm.uses_pipeline, cfg.complete_gradient)
    if not lifted.kept:
        logger.warning("Every sample of the policy batch was skipped")
        return PolicyLoss(basic.sum() * 0.0, lifted.skipped, np.zeros((0, model.n_ineq)))

    kept = lifted.kept
    g0 = np.stack([model.ineq(a, obs[i]) for i, a in zip(kept, lifted.constructed)])
    G = np.stack([model.ineq_jac(a, obs[i]) for i, a in zip(kept, lifted.constructed)])
    step = lifted.full - lifted.full.detach()
    g_lin = as_tensor(g0) + torch.einsum("bpn,bn->bp", as_tensor(G), step)
    penalty = (as_tensor(nu) * torch.relu(g_lin)).sum(-1)

    objective = -min_q(critics, obs_t[kept], lifted.full) + penalty
    if log_prob is not None:
        objective = objective + cfg.temperature * log_prob[kept]
    return PolicyLoss(objective.mean(), lifted.skipped, g0)


def _next_action(model: ConstraintModel, s: np.ndarray, a_basic: np.ndarray, cfg: TrainConfig) -> tuple[Optional[np.ndarray], bool]:
    """
    Full training-mode decision at s.

    Returns:
        Tuple of (action or None when even construction fails, whether projection was skipped)
    """
    try:
        action, _ = decide(model, s, a_basic, cfg.pipeline)
        return action, False
    except (NumericalError, ValueError) as exc:
        logger.debug("Projection failed for a TD target, using the constructed action: %s", exc)
    try:
        return construct(model, s, a_basic, cfg=cfg.pipeline), True
    except NumericalError:
        return None, True


def td_target(
    critic_targets: Sequence[nn.Module],
    actor: nn.Module,
    model: ConstraintModel,
    batch: Batch,
    cfg: TrainConfig,
    generator: Optional[torch.Generator] = None,
) -> TdTarget:
    """
    y = r + gamma (1 - done) [min_i Q'_i(s', pi(s')) - alpha log pi(a'^B|s')].

    pi is the deployed policy: construction plus training-mode projection. The
    actor passed in is the target actor for DDPG and the online actor for SAC.
    Samples whose next action cannot even be constructed are masked out.
    """
    size = batch.reward.shape[0]
    next_obs = np.asarray(batch.next_obs, dtype=np.float64)
    next_obs_t = as_tensor(next_obs)
    with torch.no_grad():
        if actor.stochastic:
            basic, log_prob = actor(next_obs_t, generator=generator)
        else:
            basic, log_prob = actor(next_obs_t), torch.zeros(size, dtype=DTYPE)
        basic_np = basic.numpy()

        full = np.zeros((size, model.n))
        valid = np.ones(size, dtype=bool)
        fallbacks = masked = 0
        for i in range(size):
            if batch.done[i]:
                continue
            if not cfg.algorithm.uses_pipeline:
                full[i] = basic_np[i]
                continue
            action, fell_back = _next_action(model, next_obs[i], basic_np[i], cfg)
            fallbacks += int(fell_back)
            if action is None:
                valid[i] = False
                masked += 1
                continue
            full[i] = action
        bootstrap = min_q(critic_targets, next_obs_t, as_tensor(full)) - cfg.temperature * log_prob * float(actor.stochastic)
        not_done = as_tensor(~batch.done & valid)
        y = as_tensor(batch.reward) + cfg.gamma * not_done * bootstrap
    return TdTarget(y=y, valid=valid, fallbacks=fallbacks, masked=masked)


def critic_loss(critics: Sequence[nn.Module], batch: Batch, target: TdTarget) -> torch.Tensor:
    """Sum over critics of the mean squared TD error on the valid samples."""
    obs = as_tensor(batch.obs[target.valid])
    action = as_tensor(batch.action[target.valid])
    y = target.y[torch.as_tensor(target.valid)]
    return sum(torch.mean((critic(obs, action) - y) ** 2) for critic in critics)
