"""Deterministic 2D quasi-static contact simulation.

An end-effector grasps a compliant tool above a 1D heightfield surface.
Everything lives in the x-z task frame: x runs along the surface extent,
z points up. Units are cm, N, rad, s throughout. The tool tip is a linear
spring; the normal contact force is a pure function of penetration, so the
world is energy-free and bit-for-bit repeatable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, InputError

DT = 0.05  # s, 20 Hz control rate; fixed everywhere
DEFAULT_FMAX = 5.0  # N, normal-force saturation
DEFORM_CELL = 0.5  # cm, surface-memory cell size for deforming surfaces


@dataclass(frozen=True)
class EnvironmentSpec:
    """Parametric description of the heightfield world."""

    kind: str  # "inclined" | "step" | "stairs" | "deforming"
    inclination: float = 0.0  # rad, inclined only
    step_height: float = 2.0  # cm, step only
    step_x: float = 2.0  # cm, x-location of the step face
    stair_count: int = 4
    stair_rise: float = 0.4  # cm
    stair_run: float = 0.7  # cm
    deform_drop: float = 0.05  # cm removed per contact pass over a cell
    extent_x: float = 12.0  # cm

    KINDS = ("inclined", "step", "stairs", "deforming")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DomainError(f"unknown environment kind {self.kind!r}")
        if not -0.3 <= self.inclination <= 0.3:
            raise DomainError(f"inclination {self.inclination} outside [-0.3, 0.3] rad")
        if self.kind == "step" and not 0.5 <= self.step_height <= 5.0:
            raise DomainError(f"step height {self.step_height} outside [0.5, 5.0] cm")
        if self.stair_rise <= 0 or self.stair_run <= 0:
            raise DomainError("stair rise/run must be positive")
        if self.extent_x <= 0:
            raise DomainError("extent_x must be positive")


@dataclass(frozen=True)
class ToolSpec:
    """Grasped-tool geometry and compliance."""

    name: str = "brush"
    handle_length: float = 3.0  # cm
    tip_stiffness: float = 30.0  # N/cm
    tip_rest_length: float = 1.5  # cm
    tip_width: float = 0.8  # cm
    friction_mu: float = 0.3

    def __post_init__(self):
        if min(self.handle_length, self.tip_rest_length, self.tip_width) <= 0:
            raise DomainError("tool lengths must be positive")
        if self.tip_stiffness <= 0:
            raise DomainError("tip stiffness must be positive")
        if not 0.0 <= self.friction_mu <= 2.0:
            raise DomainError(f"friction_mu {self.friction_mu} outside [0, 2]")


# the softer long-handled variant used for cross-tool transfer experiments
VARIANT_TOOL = ToolSpec(name="long_soft_brush", handle_length=5.0, tip_stiffness=10.0)


@dataclass
class WorldState:
    """Mutable simulation state. One instance per rollout; never shared."""

    ee_x: float
    ee_z: float
    grasp_shift: float  # cm along the handle; positive = grasped nearer the tip
    tip_compression: float = 0.0
    t: float = 0.0
    # per-cell contact bookkeeping for deforming surfaces:
    # pass counts keyed by cell index, plus the contact set of the last step
    surface_passes: dict = field(default_factory=dict)
    _last_contact_cells: frozenset = frozenset()


@dataclass(frozen=True)
class ContactWrench:
    """Wrench transmitted from the environment through the tool, task frame."""

    f_x: float  # N, tangential resistance (friction + wall collision)
    f_z: float  # N, normal reaction; >= 0 in contact, exactly 0 otherwise


@dataclass(frozen=True)
class Action:
    """Commanded end-effector velocities."""

    u_x: float  # cm/s
    u_z: float  # cm/s, positive = up


def tip_drop(tool: ToolSpec, grasp_shift: float) -> float:
    """Distance from the grasp point down to the undeformed tip bottom."""
    return tool.handle_length - grasp_shift + tool.tip_rest_length


def surface_height(env: EnvironmentSpec, x: float, state: WorldState | None = None) -> float:
    """Heightfield z(x). Deforming surfaces need the state's contact memory."""
    if not 0.0 <= x <= env.extent_x:
        raise DomainError(f"x={x} outside surface extent [0, {env.extent_x}]")
    if env.kind == "inclined":
        return x * math.tan(env.inclination)
    if env.kind == "step":
        return env.step_height if x >= env.step_x else 0.0
    if env.kind == "stairs":
        return env.stair_rise * min(int(math.floor(x / env.stair_run)), env.stair_count)
    # deforming: flat base dropped by deform_drop per recorded contact pass
    passes = 0
    if state is not None:
        passes = state.surface_passes.get(int(x / DEFORM_CELL), 0)
    return -env.deform_drop * passes


def _rising_faces(env: EnvironmentSpec):
    """(x, top_height) of each rising discontinuity of the heightfield."""
    if env.kind == "step":
        return [(env.step_x, env.step_height)]
    if env.kind == "stairs":
        return [(k * env.stair_run, k * env.stair_rise) for k in range(1, env.stair_count + 1)]
    return []


def step_world(
    state: WorldState,
    env: EnvironmentSpec,
    tool: ToolSpec,
    action: Action,
    dt: float = DT,
    f_max: float = DEFAULT_FMAX,
) -> tuple[WorldState, ContactWrench]:
    """Advance one control period by explicit Euler and return the new wrench."""
    if not (math.isfinite(action.u_x) and math.isfinite(action.u_z)):
        raise InputError("action velocities must be finite")
    ee_x = state.ee_x + dt * action.u_x
    ee_z = state.ee_z + dt * action.u_z
    tip_x = ee_x
    tip_z = ee_z - tip_drop(tool, state.grasp_shift)
    x_probe = min(max(tip_x, 0.0), env.extent_x)
    h = surface_height(env, x_probe, state)
    p = max(0.0, h - tip_z)
    f_z = min(tool.tip_stiffness * p, f_max)
    f_x = tool.friction_mu * f_z
    # wall term: the tip's leading edge overlapping a rising face adds a
    # horizontal spring force with the same stiffness as normal contact
    lead = tip_x + tool.tip_width / 2.0
    for face_x, face_top in _rising_faces(env):
        if lead > face_x and tip_x - tool.tip_width / 2.0 < face_x and tip_z < face_top:
            f_x += tool.tip_stiffness * (lead - face_x)
    f_x = min(f_x, f_max)

    passes = state.surface_passes
    last_cells = state._last_contact_cells
    if env.kind == "deforming":
        if p > 0.0:
            lo = int(max(tip_x - tool.tip_width / 2.0, 0.0) / DEFORM_CELL)
            hi = int(min(tip_x + tool.tip_width / 2.0, env.extent_x) / DEFORM_CELL)
            cells = frozenset(range(lo, hi + 1))
            new_cells = cells - last_cells
            if new_cells:
                passes = dict(passes)
                for cell in new_cells:
                    passes[cell] = passes.get(cell, 0) + 1
            last_cells = cells
        else:
            last_cells = frozenset()

    new_state = WorldState(
        ee_x=ee_x,
        ee_z=ee_z,
        grasp_shift=state.grasp_shift,
        tip_compression=p,
        t=state.t + dt,
        surface_passes=passes,
        _last_contact_cells=last_cells,
    )
    return new_state, ContactWrench(f_x=f_x, f_z=f_z)


def reset_world(
    env: EnvironmentSpec,
    tool: ToolSpec,
    seed: int,
    start_x: float = 0.5,
    start_clearance: float = 0.5,
) -> WorldState:
    """Place the grasped tool above the surface with a randomized grasp point.

    The grasp location shifts along the handle by a N(0, 1) cm draw, clamped
    so the grasp stays on the handle. The tip starts `start_clearance` above
    the surface so contact occurs within the first two seconds of descent.
    """
    rng = np.random.default_rng(seed)
    shift = float(rng.normal(0.0, 1.0))
    half = tool.handle_length / 2.0
    shift = min(max(shift, -half), half)
    blank = WorldState(ee_x=0.0, ee_z=0.0, grasp_shift=shift)
    tip_z = surface_height(env, start_x, blank) + start_clearance
    return replace(blank, ee_x=start_x, ee_z=tip_z + tip_drop(tool, shift))
