"""Fingertip tactile arrays, downward proximity rays, and feature reduction.

Observation layout (fixed contract, 16 channels per frame):

    0..4   left fingertip:  shear_x, shear_y, slip_x, slip_y, slip_rot
    5..9   right fingertip: shear_x, shear_y, slip_x, slip_y, slip_rot
    10..15 proximity rays at x-offsets {0..5} cm ahead of the right fingertip

Each fingertip is a 4x4 grid of 3-axis force taxels. Taxel axes are
(tangential-x, tangential-y, normal) in the pad frame: tangential-x is the
task-frame x axis, tangential-y the task-frame z (vertical), and normal the
grip axis. Shear is the vector sum of tangential forces; the slip channels
are force-ratio proxies (shear/normal and tangential moment/normal).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import envsim
from .envsim import EnvironmentSpec, ToolSpec, WorldState, ContactWrench
from .errors import InputError

GRID = 4
TAXEL_PITCH = 0.5  # cm between taxel centres
N_FINGERTIPS = 2
TACTILE_SHAPE = (N_FINGERTIPS, GRID, GRID, 3)

PROX_RAYS = 6
PROX_OFFSETS = np.arange(PROX_RAYS, dtype=float)  # cm ahead of the fingertip
PROX_MAX_RANGE = 20.0  # cm

TACTILE_FEATURES = 10
OBS_CHANNELS = TACTILE_FEATURES + PROX_RAYS  # 16, fixed across the codebase

DEFAULT_GRIP_FORCE = 5.0  # N
DEFAULT_TACTILE_SIGMA = 0.01  # N
DEFAULT_PROX_SIGMA = 0.0  # cm; "real-like" ablation mode uses 0.05

NORMAL_EPS = 1e-6  # N, guard for slip ratios at zero grip

# taxel centre offsets within the pad plane (x = columns, y = rows)
_GRID_OFFSETS = (np.arange(GRID) - (GRID - 1) / 2.0) * TAXEL_PITCH

# named observation-channel masks for the sensor-ablation experiments
CHANNEL_MASKS = {
    "full": np.ones(OBS_CHANNELS, dtype=bool),
    "tactile_only": np.arange(OBS_CHANNELS) < TACTILE_FEATURES,
    "proximity_only": np.arange(OBS_CHANNELS) >= TACTILE_FEATURES,
    "single_ray": np.arange(OBS_CHANNELS) == TACTILE_FEATURES,
    # the vertical-shear channels are the only ones carrying the transmitted
    # normal contact force, so they stand in for a normal-force-only sensor
    "normal_force_only": np.isin(np.arange(OBS_CHANNELS), (1, 6)),
}


def channel_mask(name: str) -> np.ndarray:
    try:
        return CHANNEL_MASKS[name].copy()
    except KeyError:
        raise InputError(
            f"unknown channel mask {name!r}; choose from {sorted(CHANNEL_MASKS)}"
        ) from None


def simulate_tactile(
    world: WorldState,
    wrench: ContactWrench,
    tool: ToolSpec,
    grip_force: float = DEFAULT_GRIP_FORCE,
    rng: np.random.Generator | None = None,
    sigma: float = DEFAULT_TACTILE_SIGMA,
) -> np.ndarray:
    """Distribute grip plus the transmitted tool wrench over the taxels.

    Each fingertip's normal channel carries grip_force/16 per taxel plus a
    row-linear share of the tool moment about the grasp (the two fingertips
    see opposite signs of the couple). Tangential channels split the
    transmitted f_x and f_z evenly over all 32 taxels.
    """
    if grip_force < 0:
        raise InputError("grip_force must be >= 0")
    arr = np.zeros(TACTILE_SHAPE)
    arr[:, :, :, 0] = wrench.f_x / (2 * GRID * GRID)
    arr[:, :, :, 1] = wrench.f_z / (2 * GRID * GRID)
    arr[:, :, :, 2] = grip_force / (GRID * GRID)

    lever = envsim.tip_drop(tool, world.grasp_shift)  # cm, grasp point to tip
    moment = wrench.f_x * lever  # N*cm about the grasp, reacted by the grip
    row_w = _GRID_OFFSETS / (GRID * np.sum(_GRID_OFFSETS**2))
    per_row = (moment / 2.0) * row_w  # N per taxel, linear in row offset
    arr[0, :, :, 2] += per_row[:, None]
    arr[1, :, :, 2] -= per_row[:, None]

    if rng is not None and sigma > 0:
        arr += rng.normal(0.0, sigma, size=TACTILE_SHAPE)
    np.clip(arr[:, :, :, 2], 0.0, None, out=arr[:, :, :, 2])
    return arr


def preprocess_tactile(arr: np.ndarray) -> np.ndarray:
    """Reduce a raw taxel array to the 10-dim shear + slip feature."""
    arr = np.asarray(arr, dtype=float)
    if arr.shape != TACTILE_SHAPE:
        raise InputError(f"tactile array shape {arr.shape} != {TACTILE_SHAPE}")
    feat = np.empty(TACTILE_FEATURES)
    px = _GRID_OFFSETS[None, :]  # column offsets, cm
    py = _GRID_OFFSETS[:, None]  # row offsets, cm
    for f in range(N_FINGERTIPS):
        tx = arr[f, :, :, 0]
        ty = arr[f, :, :, 1]
        shear = np.array([tx.sum(), ty.sum()])
        normal_total = arr[f, :, :, 2].sum()
        if normal_total < NORMAL_EPS:
            slip_t = np.zeros(2)
            slip_r = 0.0
        else:
            slip_t = shear / normal_total
            slip_r = float((px * ty - py * tx).sum() / normal_total)
        feat[5 * f : 5 * f + 2] = shear
        feat[5 * f + 2 : 5 * f + 4] = slip_t
        feat[5 * f + 4] = slip_r
    return feat


def simulate_proximity(
    world: WorldState,
    env: EnvironmentSpec,
    rng: np.random.Generator | None = None,
    sigma: float = DEFAULT_PROX_SIGMA,
) -> np.ndarray:
    """Six downward distance readings from the right fingertip.

    Ray i originates at the fingertip (taken to sit at the grasp point)
    shifted i cm along +x. Readings saturate at PROX_MAX_RANGE; rays whose
    origin leaves the surface extent see no surface and saturate too.
    """
    out = np.empty(PROX_RAYS)
    for i, off in enumerate(PROX_OFFSETS):
        x = world.ee_x + off
        if 0.0 <= x <= env.extent_x:
            d = world.ee_z - envsim.surface_height(env, x, world)
        else:
            d = PROX_MAX_RANGE
        out[i] = min(max(d, 0.0), PROX_MAX_RANGE)
    if rng is not None and sigma > 0:
        out = np.clip(out + rng.normal(0.0, sigma, size=PROX_RAYS), 0.0, PROX_MAX_RANGE)
    return out


NORM_LO, NORM_HI = -0.9, 0.9


@dataclass
class NormalizationStats:
    """Per-channel min/max of the pre-training corpus, per signal block.

    Blocks: "ee" (2 channels), "obs" (16), "act" (2). The affine map sends
    [min, max] onto [-0.9, 0.9]; degenerate channels (max == min) map to 0.
    """

    blocks: dict  # name -> (min array, max array)

    def _get(self, name: str, width: int | None = None):
        if name not in self.blocks:
            raise InputError(f"unknown normalization block {name!r}")
        lo, hi = self.blocks[name]
        if width is not None and lo.shape[-1] != width:
            raise InputError(
                f"block {name!r} has {lo.shape[-1]} channels, data has {width}"
            )
        return lo, hi

    def normalize(self, name: str, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self._get(name, x.shape[-1])
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        y = NORM_LO + (x - lo) * (NORM_HI - NORM_LO) / safe
        return np.where(span > 0, y, 0.0)

    def denormalize(self, name: str, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        lo, hi = self._get(name, y.shape[-1])
        span = hi - lo
        x = lo + (y - NORM_LO) * span / (NORM_HI - NORM_LO)
        return np.where(span > 0, x, lo)

    def to_json(self) -> dict:
        return {
            name: {"min": lo.tolist(), "max": hi.tolist()}
            for name, (lo, hi) in self.blocks.items()
        }

    @classmethod
    def from_json(cls, d: dict) -> "NormalizationStats":
        blocks = {
            name: (np.asarray(v["min"], dtype=float), np.asarray(v["max"], dtype=float))
            for name, v in d.items()
        }
        return cls(blocks=blocks)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "NormalizationStats":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def fit_normalization(dataset) -> NormalizationStats:
    """Per-channel min/max over every frame of a dataset (see data.Dataset)."""
    if not dataset.trajectories:
        raise InputError("cannot fit normalization on an empty dataset")
    ee = np.concatenate([t.ee_positions() for t in dataset.trajectories])
    obs = np.concatenate([t.observations() for t in dataset.trajectories])
    act = np.concatenate([t.actions() for t in dataset.trajectories])
    return NormalizationStats(
        blocks={
            "ee": (ee.min(axis=0), ee.max(axis=0)),
            "obs": (obs.min(axis=0), obs.max(axis=0)),
            "act": (act.min(axis=0), act.max(axis=0)),
        }
    )
