"""Closed-loop receding-horizon execution of a trained policy.

Each step normalizes the last T_p observations, predicts a T_n-step action
horizon, and executes only the first action (clamped to the velocity rail).
The first T_p frames, before a full window exists, are driven by a warm-up
policy: by default the primitive controller, since zero-padded windows are
outside the encoder's training distribution. The encoder's final cell and
hidden state are recorded every learned step for the latent-space analyses.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import controller, envsim, sensing, seq2seq
from .data import Trajectory, spec_to_json
from .envsim import Action, ContactWrench, EnvironmentSpec, ToolSpec
from .errors import InputError, NumericalError

VELOCITY_CLAMP = 2.0  # cm/s safety rail on predicted actions


@dataclass
class RolloutRecord:
    """A rollout trajectory plus the policy's per-step predictions."""

    trajectory: Trajectory
    horizons: np.ndarray  # (n_learned, T_n, 2) predicted action horizons, cm/s
    latents_c: np.ndarray  # (n_learned, hidden)
    latents_h: np.ndarray  # (n_learned, hidden)
    warmup: int  # frames driven by the warm-up policy
    meta: dict = field(default_factory=dict)

    def save(self, path, latents_path=None):
        """JSON-Lines record; sidecar CSV with one latent row per frame."""
        traj = self.trajectory
        with open(path, "w") as fh:
            header = {"schema": 1, "warmup": self.warmup, **self.meta, **traj.meta}
            fh.write(json.dumps({"header": header}) + "\n")
            for i in range(len(traj)):
                row = {
                    "t": float(traj.t[i]),
                    "ee_x": float(traj.ee[i, 0]),
                    "ee_z": float(traj.ee[i, 1]),
                    "tac_feat": traj.tactile_feat[i].tolist(),
                    "prox": traj.prox[i].tolist(),
                    "u_x": float(traj.act[i, 0]),
                    "u_z": float(traj.act[i, 1]),
                    "f_x": float(traj.wrench[i, 0]),
                    "f_z": float(traj.wrench[i, 1]),
                }
                j = i - self.warmup
                if j >= 0:
                    row["horizon"] = self.horizons[j].tolist()
                fh.write(json.dumps(row) + "\n")
        if latents_path is not None:
            with open(latents_path, "w", newline="") as fh:
                w = csv.writer(fh)
                hidden = self.latents_c.shape[1]
                w.writerow(
                    ["frame"]
                    + [f"c{j}" for j in range(hidden)]
                    + [f"h{j}" for j in range(hidden)]
                )
                for j in range(len(self.latents_c)):
                    w.writerow(
                        [self.warmup + j]
                        + [repr(float(v)) for v in self.latents_c[j]]
                        + [repr(float(v)) for v in self.latents_h[j]]
                    )


def rollout(
    params: seq2seq.Seq2SeqParams,
    stats: sensing.NormalizationStats,
    env: EnvironmentSpec,
    tool: ToolSpec,
    duration: float,
    seed: int,
    warmup_policy=None,
    channel_mask: str = "full",
    clamp: float = VELOCITY_CLAMP,
    grip_force: float = sensing.DEFAULT_GRIP_FORCE,
    tactile_sigma: float = sensing.DEFAULT_TACTILE_SIGMA,
    prox_sigma: float = sensing.DEFAULT_PROX_SIGMA,
) -> RolloutRecord:
    """Run the policy for `duration` seconds (must be a multiple of dt)."""
    n_steps = duration / envsim.DT
    if abs(n_steps - round(n_steps)) > 1e-9:
        raise InputError(f"duration {duration} is not a multiple of dt={envsim.DT}")
    n = int(round(n_steps))
    dims = params.dims
    t_past = dims.t_past
    if n <= t_past:
        raise InputError(f"duration gives {n} frames; need more than t_past={t_past}")
    if warmup_policy is None:
        prim = controller.PrimitiveParams()
        warmup_policy = lambda fx, fz: controller.primitive_action(fx, fz, prim)
    mask = sensing.channel_mask(channel_mask)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5011]))
    world_seed = int(rng.integers(2**31))
    state = envsim.reset_world(env, tool, world_seed)
    wrench = ContactWrench(0.0, 0.0)

    t = np.empty(n)
    ee = np.empty((n, 2))
    tac_raw = np.empty((n, 2 * 4 * 4 * 3))
    tac_feat = np.empty((n, sensing.TACTILE_FEATURES))
    prox = np.empty((n, sensing.PROX_RAYS))
    act = np.empty((n, 2))
    wr = np.empty((n, 2))
    obs_hist = np.empty((n, sensing.OBS_CHANNELS))
    n_learned = n - t_past
    horizons = np.empty((n_learned, dims.t_next, dims.act))
    latents_c = np.empty((n_learned, dims.hidden))
    latents_h = np.empty((n_learned, dims.hidden))

    for i in range(n):
        tac = sensing.simulate_tactile(state, wrench, tool, grip_force, rng, tactile_sigma)
        feat = sensing.preprocess_tactile(tac)
        pr = sensing.simulate_proximity(state, env, rng, prox_sigma)
        obs_hist[i] = np.concatenate([feat, pr])
        if i < t_past:
            a = warmup_policy(wrench.f_x, wrench.f_z)
        else:
            window = stats.normalize("obs", obs_hist[i - t_past : i])
            window = np.where(mask, window, 0.0)
            res = seq2seq.forward(params, window[None], mode="eval")
            horizon = stats.denormalize("act", res.action_preds[0])
            if not np.all(np.isfinite(horizon)):
                raise NumericalError(f"non-finite action prediction at frame {i}", frame=i)
            horizon = np.clip(horizon, -clamp, clamp)
            j = i - t_past
            horizons[j] = horizon
            latents_c[j] = res.cell_trace[-1, 0]
            latents_h[j] = res.hidden_trace[-1, 0]
            a = Action(u_x=float(horizon[0, 0]), u_z=float(horizon[0, 1]))
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
        "seed": seed,
        "channel_mask": channel_mask,
        "role": "rollout",
    }
    traj = Trajectory(t, ee, tac_raw, tac_feat, prox, act, wr, meta=dict(meta))
    return RolloutRecord(
        trajectory=traj,
        horizons=horizons,
        latents_c=latents_c,
        latents_h=latents_h,
        warmup=t_past,
        meta={"channel_mask": channel_mask, "seed": seed},
    )
