"""Cart-pole balancing environment: explicit Euler on the classic dynamics.

Constants follow the standard classic-control parameterization: gravity
9.8, cart mass 1.0, pole mass 0.1, pole half-length 0.5, force 10.0,
timestep 0.02, failure beyond 2.4 m or 12 degrees, 500-step cap.  Reward
is 1.0 for every step taken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Xoshiro256

ACTIONS = (0, 1)  # 0 pushes left, 1 pushes right


@dataclass(frozen=True)
class EnvSpec:
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_mag: float = 10.0
    tau: float = 0.02
    max_steps: int = 500
    position_limit: float = 2.4
    angle_limit: float = math.radians(12.0)


@dataclass(frozen=True)
class EnvState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    steps: int = 0


def is_terminal(spec: EnvSpec, state: EnvState) -> bool:
    return (
        abs(state.x) > spec.position_limit
        or abs(state.theta) > spec.angle_limit
        or state.steps >= spec.max_steps
    )


def initial_state(spec: EnvSpec, rng: Xoshiro256) -> EnvState:
    """All four components uniform in [-0.05, 0.05]."""
    return EnvState(
        x=rng.uniform(-0.05, 0.05),
        x_dot=rng.uniform(-0.05, 0.05),
        theta=rng.uniform(-0.05, 0.05),
        theta_dot=rng.uniform(-0.05, 0.05),
        steps=0,
    )


def reset(spec: EnvSpec, seed: int) -> EnvState:
    return initial_state(spec, Xoshiro256(seed))


def step(spec: EnvSpec, state: EnvState, action: int) -> tuple[EnvState, float, bool]:
    """Advance one tick under force +-force_mag.

    Accelerations are computed from the current state; positions update
    with the old velocities before the velocities themselves (the classic
    explicit-Euler ordering).
    """
    if action not in ACTIONS:
        raise ValueError(f"step: invalid action {action!r}")
    if is_terminal(spec, state):
        raise ValueError("step: episode already terminal")
    force = spec.force_mag if action == 1 else -spec.force_mag
    cos_t = math.cos(state.theta)
    sin_t = math.sin(state.theta)
    total_mass = spec.cart_mass + spec.pole_mass
    pole_ml = spec.pole_mass * spec.pole_half_length
    temp = (force + pole_ml * state.theta_dot**2 * sin_t) / total_mass
    theta_acc = (spec.gravity * sin_t - cos_t * temp) / (
        spec.pole_half_length * (4.0 / 3.0 - spec.pole_mass * cos_t**2 / total_mass)
    )
    x_acc = temp - pole_ml * theta_acc * cos_t / total_mass
    tau = spec.tau
    nxt = EnvState(
        x=state.x + tau * state.x_dot,
        x_dot=state.x_dot + tau * x_acc,
        theta=state.theta + tau * state.theta_dot,
        theta_dot=state.theta_dot + tau * theta_acc,
        steps=state.steps + 1,
    )
    return nxt, 1.0, is_terminal(spec, nxt)


def state_vector(state: EnvState) -> np.ndarray:
    return np.array([state.x, state.x_dot, state.theta, state.theta_dot])
