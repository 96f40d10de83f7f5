"""
Policy and value networks: two hidden ReLU layers of 256 units, float64.

Policy outputs are squashed with tanh into the box of the actions they emit.
Box coordinates with zero width (pinned actions) stay at their center and are
left out of the SAC log-probability.
"""
import math
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

DTYPE = torch.float64
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2 = math.log(2.0)


def init_linear(layer: nn.Linear, generator: Optional[torch.Generator]) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases drawn from the given generator."""
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        layer.bias.uniform_(-bound, bound, generator=generator)


def mlp(in_dim: int, out_dim: int, hidden: int = 256, generator: Optional[torch.Generator] = None) -> nn.Sequential:
    layers = [nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, out_dim)]
    net = nn.Sequential(*layers).to(DTYPE)
    for layer in net:
        if isinstance(layer, nn.Linear):
            init_linear(layer, generator)
    return net


def as_tensor(values) -> torch.Tensor:
    return torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)


class BoxSquash(nn.Module):
    """Maps unbounded outputs u to center + half_width * tanh(u)."""

    def __init__(self, low: np.ndarray, high: np.ndarray):
        super().__init__()
        low, high = np.asarray(low, dtype=np.float64), np.asarray(high, dtype=np.float64)
        if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            raise ValueError("policy heads need a finite action box")
        self.register_buffer("center", as_tensor((low + high) / 2.0))
        self.register_buffer("half_width", as_tensor((high - low) / 2.0))

    @property
    def active(self) -> torch.Tensor:
        return self.half_width > 0

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        return self.center + self.half_width * torch.tanh(u)

    def log_abs_det(self, u: torch.Tensor) -> torch.Tensor:
        """log |d squash / d u| per coordinate, using log(1 - tanh^2 u) = 2 (log 2 - u - softplus(-2u))."""
        return torch.log(self.half_width) + 2.0 * (_LOG_2 - u - F.softplus(-2.0 * u))


class DeterministicActor(nn.Module):
    stochastic = False

    def __init__(self, state_dim: int, low: np.ndarray, high: np.ndarray, hidden: int = 256, generator=None):
        super().__init__()
        self.squash = BoxSquash(low, high)
        self.action_dim = len(low)
        self.net = mlp(state_dim, self.action_dim, hidden, generator)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.squash(self.net(obs))


class GaussianActor(nn.Module):
    """Squashed Gaussian policy with state-dependent mean and log-std."""

    stochastic = True

    def __init__(self, state_dim: int, low: np.ndarray, high: np.ndarray, hidden: int = 256, generator=None):
        super().__init__()
        self.squash = BoxSquash(low, high)
        self.action_dim = len(low)
        self.net = mlp(state_dim, 2 * self.action_dim, hidden, generator)

    def distribution(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.net(obs)
        mean, log_std = out[..., : self.action_dim], out[..., self.action_dim :]
        return mean, torch.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)

    def forward(
        self,
        obs: torch.Tensor,
        deterministic: bool = False,
        noise: Optional[torch.Tensor] = None,
        generator: Optional[torch.Generator] = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """
        Reparameterized sample and its log-density.

        Returns:
            Tuple of (action, log_prob) with log_prob summed over the active coordinates
        """
        mean, log_std = self.distribution(obs)
        if deterministic:
            u = mean
        else:
            if noise is None:
                noise = torch.randn(mean.shape, dtype=DTYPE, generator=generator)
            u = mean + torch.exp(log_std) * noise
        gaussian = -0.5 * ((u - mean) / torch.exp(log_std)) ** 2 - log_std - 0.5 * math.log(2.0 * math.pi)
        per_coordinate = gaussian - self.squash.log_abs_det(u)
        log_prob = torch.where(self.squash.active, per_coordinate, torch.zeros_like(per_coordinate)).sum(-1)
        return self.squash(u), log_prob


class Critic(nn.Module):
    """Q(s, a) on full actions."""

    def __init__(self, state_dim: int, action_dim: int, hidden: int = 256, generator=None):
        super().__init__()
        self.net = mlp(state_dim + action_dim, 1, hidden, generator)

    def forward(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([obs, action], dim=-1)).squeeze(-1)


def soft_update(net: nn.Module, target: nn.Module, tau: float) -> None:
    """target <- tau * net + (1 - tau) * target."""
    with torch.no_grad():
        for target_param, param in zip(target.parameters(), net.parameters()):
            target_param.mul_(1.0 - tau).add_(param, alpha=tau)
