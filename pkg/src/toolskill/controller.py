"""Scripted primitive-motion controller and trajectory collection.

The controller moves the end-effector sideways at a constant rate and picks
the vertical rate from three mutually exclusive branches, tested in order:
lift when the tangential force says the tip hit a wall, descend when out of
contact, otherwise track the target normal force with a proportional
admittance term. The same controller doubles as the demonstration oracle:
a demonstration is simply the controller run with the task's target force
(and, for tool-variant tasks, the variant tool).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import envsim, sensing
from .data import Dataset, Trajectory, spec_to_json
from .envsim import Action, ContactWrench, EnvironmentSpec, ToolSpec
from .errors import DomainError, NumericalError

TRAJECTORY_DURATION = 10.0  # s -> 200 frames at 20 Hz


@dataclass(frozen=True)
class PrimitiveParams:
    v_ref: float = 0.3  # cm/s, constant lateral velocity
    v_up: float = 0.5  # cm/s, lift rate on wall contact
    v_down: float = -0.5  # cm/s, descent rate when out of contact
    f_threshold: float = 0.5  # N, tangential force marking a wall hit
    f_target: float = 0.3  # N, normal force to track in contact
    k_adm: float = 0.1  # cm/(N*s), admittance gain

    def __post_init__(self):
        if not (self.v_ref > 0 and self.v_up > 0 and self.v_down < 0):
            raise DomainError("require v_ref > 0, v_up > 0, v_down < 0")
        if not (self.f_threshold > 0 and self.f_target > 0 and self.k_adm > 0):
            raise DomainError("require positive f_threshold, f_target, k_adm")


def primitive_action(f_x: float, f_z: float, p: PrimitiveParams) -> Action:
    """One control decision from the latest transmitted forces.

    Branches, in order: wall test first, then contact test. The simulated
    wrench keeps f_z >= 0, so the out-of-contact branch fires at f_z = 0.
    The admittance branch commands descent when the normal force is below
    target: with the surface under the tool and z pointing up, a positive
    force error must push the tip toward the surface or the contact loop
    diverges.
    """
    if not (math.isfinite(f_x) and math.isfinite(f_z)):
        raise NumericalError("non-finite force fed to controller")
    if f_x > p.f_threshold:
        u_z = p.v_up
    elif f_z <= 0.0:
        u_z = p.v_down
    else:
        u_z = p.k_adm * (f_z - p.f_target)
    return Action(u_x=p.v_ref, u_z=u_z)


def run_controller_trajectory(
    env: EnvironmentSpec,
    tool: ToolSpec,
    params: PrimitiveParams,
    seed: int,
    duration: float = TRAJECTORY_DURATION,
    grip_force: float = sensing.DEFAULT_GRIP_FORCE,
    tactile_sigma: float = sensing.DEFAULT_TACTILE_SIGMA,
    prox_sigma: float = sensing.DEFAULT_PROX_SIGMA,
    extra_meta: dict | None = None,
) -> Trajectory:
    """Close the loop between the world and the primitive controller."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    world_seed = int(rng.integers(2**31))
    state = envsim.reset_world(env, tool, world_seed)
    wrench = ContactWrench(0.0, 0.0)
    n = int(round(duration / envsim.DT))

    t = np.empty(n)
    ee = np.empty((n, 2))
    tac_raw = np.empty((n, 2 * 4 * 4 * 3))
    tac_feat = np.empty((n, sensing.TACTILE_FEATURES))
    prox = np.empty((n, sensing.PROX_RAYS))
    act = np.empty((n, 2))
    wr = np.empty((n, 2))

    for i in range(n):
        tac = sensing.simulate_tactile(state, wrench, tool, grip_force, rng, tactile_sigma)
        feat = sensing.preprocess_tactile(tac)
        pr = sensing.simulate_proximity(state, env, rng, prox_sigma)
        a = primitive_action(wrench.f_x, wrench.f_z, params)
        t[i] = state.t
        ee[i] = (state.ee_x, state.ee_z)
        tac_raw[i] = tac.ravel()
        tac_feat[i] = feat
        prox[i] = pr
        act[i] = (a.u_x, a.u_z)
        wr[i] = (wrench.f_x, wrench.f_z)
        state, wrench = envsim.step_world(state, env, tool, a)
        if not (math.isfinite(wrench.f_x) and math.isfinite(wrench.f_z)):
            raise NumericalError(f"simulation diverged at frame {i}", frame=i)

    meta = {
        "env": spec_to_json(env),
        "tool": spec_to_json(tool),
        "controller": dataclasses.asdict(params),
        "seed": seed,
        "grip_force": grip_force,
        "tactile_sigma": tactile_sigma,
        "prox_sigma": prox_sigma,
    }
    if extra_meta:
        meta.update(extra_meta)
    return Trajectory(t, ee, tac_raw, tac_feat, prox, act, wr, meta=meta)


def collect_primitive_dataset(
    tool: ToolSpec,
    seed: int,
    n_inclined: int = 11,
    n_step: int = 10,
    params: PrimitiveParams = PrimitiveParams(),
    inclination_range: tuple = (-0.3, 0.3),
    step_height_range: tuple = (0.5, 5.0),
    **collect_kwargs,
) -> Dataset:
    """Pre-training corpus: inclined surfaces with sampled slope plus single
    steps with sampled height, all driven by the default primitive motions."""
    if n_inclined < 1 or n_step < 1:
        raise DomainError("trajectory counts must be >= 1")
    sampler = np.random.default_rng(np.random.SeedSequence([seed, 0xE74]))
    trajs = []
    for i in range(n_inclined):
        psi = float(sampler.uniform(*inclination_range))
        env = EnvironmentSpec(kind="inclined", inclination=psi)
        trajs.append(
            run_controller_trajectory(
                env, tool, params, seed=seed * 1000 + i, extra_meta={"role": "primitive"},
                **collect_kwargs,
            )
        )
    for j in range(n_step):
        h = float(sampler.uniform(*step_height_range))
        env = EnvironmentSpec(kind="step", step_height=h)
        trajs.append(
            run_controller_trajectory(
                env, tool, params, seed=seed * 1000 + n_inclined + j,
                extra_meta={"role": "primitive"}, **collect_kwargs,
            )
        )
    provenance = {
        "kind": "primitive",
        "seed": seed,
        "n_inclined": n_inclined,
        "n_step": n_step,
        "tool": spec_to_json(tool),
        "controller": dataclasses.asdict(params),
    }
    return Dataset(trajectories=trajs, provenance=provenance)


def demo_oracle(
    env: EnvironmentSpec,
    tool: ToolSpec,
    target_force: float,
    seed: int,
    params: PrimitiveParams = PrimitiveParams(),
    **collect_kwargs,
) -> Trajectory:
    """A scripted demonstration: the primitive controller with the task's
    target force standing in for the human demonstrator."""
    if target_force <= 0:
        raise DomainError("target_force must be positive")
    task_params = dataclasses.replace(params, f_target=target_force)
    return run_controller_trajectory(
        env, tool, task_params, seed=seed,
        extra_meta={"role": "demo", "target_force": target_force},
        **collect_kwargs,
    )


def collect_demo_dataset(
    env: EnvironmentSpec,
    tool: ToolSpec,
    target_force: float,
    seed: int,
    count: int = 3,
    envs: list | None = None,
    **kwargs,
) -> Dataset:
    """A handful of demonstration trajectories for one downstream task.

    `envs` may supply one EnvironmentSpec per demonstration (e.g. a spread
    of inclinations); otherwise all demos share `env`.
    """
    env_list = envs if envs is not None else [env] * count
    if len(env_list) != count:
        raise DomainError("envs must match count")
    trajs = [
        demo_oracle(e, tool, target_force, seed=seed * 100 + i, **kwargs)
        for i, e in enumerate(env_list)
    ]
    provenance = {
        "kind": "demo",
        "seed": seed,
        "count": count,
        "target_force": target_force,
        "tool": spec_to_json(tool),
        "envs": [spec_to_json(e) for e in env_list],
    }
    return Dataset(trajectories=trajs, provenance=provenance)
