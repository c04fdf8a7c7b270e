"""Reasoning-enhanced GUI agent training at desk scale: grammar, rewards, GRPO, SFT, metrics."""

__version__ = "0.1.0"
