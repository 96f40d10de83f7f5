"""Save and restore trained agents."""
import logging
from pathlib import Path
from typing import Any, Optional

import torch

from rgrl.constraint_core import ConstraintModel
from rgrl.errors import CheckpointError
from rgrl.numkit import RngStream
from rgrl.rl.config import TrainConfig
from rgrl.rl.penalty import PenaltyState
from rgrl.rl.train import RNG_STREAMS, Agent, build_agent

logger = logging.getLogger(__name__)

FORMAT_VERSION = 2


def save_checkpoint(path: str | Path, agent: Agent, cfg: TrainConfig, benchmark: str, epoch: int) -> Path:
    """Write networks, penalty factors, the torch and numpy RNG states and the config to one file."""
    path = Path(path)
    payload: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "benchmark": benchmark,
        "epoch": int(epoch),
        "config": cfg.model_dump(mode="json"),
        "config_hash": cfg.config_hash(),
        "actor": agent.actor.state_dict(),
        "actor_target": None if agent.actor_target is None else agent.actor_target.state_dict(),
        "critics": [c.state_dict() for c in agent.critics],
        "critic_targets": [c.state_dict() for c in agent.critic_targets],
        "actor_optimizer": agent.actor_optimizer.state_dict(),
        "critic_optimizer": agent.critic_optimizer.state_dict(),
        "penalty_nu": torch.as_tensor(agent.penalty.nu),
        "penalty_lr": torch.as_tensor(agent.penalty.lr),
        "generator_state": agent.generator.get_state(),
        "rng_states": {name: stream.state_json() for name, stream in agent.rngs.items()},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    logger.debug("Saved checkpoint to %s", path)
    return path


def load_checkpoint(path: str | Path, benchmark: Optional[str] = None) -> dict[str, Any]:
    """
    Read and validate a checkpoint file.

    Raises CheckpointError for a missing or unreadable file, an unknown format
    version, a config that no longer matches its stored hash, or a benchmark
    other than the expected one.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        version = payload.get("format_version") if isinstance(payload, dict) else None
        raise CheckpointError(f"{path}: unsupported checkpoint format {version!r}, expected {FORMAT_VERSION}")
    try:
        cfg = TrainConfig.model_validate(payload["config"])
    except Exception as exc:
        raise CheckpointError(f"{path}: stored config is invalid: {exc}") from exc
    if cfg.config_hash() != payload.get("config_hash"):
        raise CheckpointError(f"{path}: config hash mismatch")
    if benchmark is not None and payload.get("benchmark") != benchmark:
        raise CheckpointError(f"{path}: checkpoint is for '{payload.get('benchmark')}', not '{benchmark}'")
    payload["config"] = cfg
    return payload


def restore_agent(payload: dict[str, Any], state_dim: int, model: ConstraintModel) -> Agent:
    """Rebuild the agent a checkpoint was saved from."""
    cfg: TrainConfig = payload["config"]
    generator = torch.Generator()
    agent = build_agent(state_dim, model, cfg, generator)
    try:
        agent.actor.load_state_dict(payload["actor"])
        if agent.actor_target is not None:
            agent.actor_target.load_state_dict(payload["actor_target"])
        for critic, state in zip(agent.critics, payload["critics"], strict=True):
            critic.load_state_dict(state)
        for critic, state in zip(agent.critic_targets, payload["critic_targets"], strict=True):
            critic.load_state_dict(state)
        agent.actor_optimizer.load_state_dict(payload["actor_optimizer"])
        agent.critic_optimizer.load_state_dict(payload["critic_optimizer"])
        generator.set_state(payload["generator_state"])
        for name, text in payload["rng_states"].items():
            stream = RngStream(cfg.seed).spawn(RNG_STREAMS[name])
            stream.load_state_json(text)
            agent.rngs[name] = stream
    except (RuntimeError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint does not fit the {cfg.algorithm.value} agent: {exc}") from exc
    agent.penalty = PenaltyState(nu=payload["penalty_nu"].numpy().copy(), lr=payload["penalty_lr"].numpy().copy())
    return agent
