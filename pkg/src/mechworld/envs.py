"""Deterministic simulators for two domains: 2-D particles and a 1-D lane world.

Each environment is an ordered rule list mapping per-object conditions to
interaction modes. The simulators emit per-object ground-truth
(mode, context) labels alongside every transition; the labels are only for
evaluation, never for training the models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ConfigError, GenerationError, SimulationError

PARTICLES = "particles"
LANE = "lane"

PARTICLE_STATE_DIM = 7  # x, y, vx, vy, one-hot colour (red, green, blue)
LANE_STATE_DIM = 6  # x, v, one-hot type (car_orange, car_blue, light), red flag


class InteractionMode(IntEnum):
    STRAIGHT_LINE = 0
    REPULSION = 1
    ATTRACTION = 2
    SPRING = 3
    SPIRAL_CENTRE = 4
    CRUISE_NORMAL = 5
    CRUISE_SLOW = 6
    BRAKE_FOR_LIGHT = 7
    FOLLOW_LEAD = 8
    STATIC_LIGHT = 9


PARTICLE_MODES = (
    InteractionMode.STRAIGHT_LINE,
    InteractionMode.REPULSION,
    InteractionMode.ATTRACTION,
    InteractionMode.SPRING,
    InteractionMode.SPIRAL_CENTRE,
)

LANE_MODES = (
    InteractionMode.CRUISE_NORMAL,
    InteractionMode.CRUISE_SLOW,
    InteractionMode.BRAKE_FOR_LIGHT,
    InteractionMode.FOLLOW_LEAD,
    InteractionMode.STATIC_LIGHT,
)

# Modes whose dynamics involve no second object; they always carry
# self-context in the emitted labels.
UNARY_MODES = frozenset(
    {
        InteractionMode.STRAIGHT_LINE,
        InteractionMode.SPIRAL_CENTRE,
        InteractionMode.CRUISE_NORMAL,
        InteractionMode.CRUISE_SLOW,
        InteractionMode.STATIC_LIGHT,
    }
)


class Condition(IntEnum):
    SAME_COLOUR = 0
    OPPOSITE_COLOUR = 1
    CLOSE_TOGETHER = 2
    IS_BLUE = 3
    IS_RED = 4
    ALWAYS = 5
    OTHERWISE = 6
    RED_LIGHT_AHEAD = 7
    CAR_AHEAD = 8


# Unary conditions bind the object to itself; binary conditions pick the
# nearest other object satisfying the predicate.
UNARY_CONDITIONS = frozenset(
    {Condition.IS_BLUE, Condition.IS_RED, Condition.ALWAYS, Condition.OTHERWISE}
)


@dataclass(frozen=True)
class Rule:
    condition: Condition
    interaction: InteractionMode


@dataclass(frozen=True)
class Physics:
    """Integrator and force-law constants shared by both domains."""

    dt: float = 0.1
    close_dist: float = 0.5
    pull_accel: float = 0.05  # attraction / repulsion magnitude
    spring_stiffness: float = 0.2
    spring_rest: float = 0.5
    spiral_pull: float = 0.1
    spiral_swirl: float = 0.05
    max_speed: float = 1.0
    arena: float = 1.0
    lane_v_normal: float = 0.05
    lane_v_slow: float = 0.02
    lane_relax: float = 0.5
    light_period: int = 30
    light_ahead_dist: float = 0.3
    car_ahead_dist: float = 0.2


DEFAULT_PHYSICS = Physics()


@dataclass(frozen=True)
class EnvSpec:
    """One environment: object roster, ordered rules, physics constants."""

    env_id: str
    domain: str
    k: int
    rules: tuple
    # Fixed particle colours (indices into red/green/blue); None means the
    # colours are sampled uniformly per episode.
    colours: tuple | None = None
    physics: Physics = DEFAULT_PHYSICS

    def __post_init__(self):
        if self.domain not in (PARTICLES, LANE):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.k < 1:
            raise ConfigError(f"need at least one object, got k={self.k}")
        if not self.rules or self.rules[-1].condition != Condition.OTHERWISE:
            raise ConfigError(f"rule list of {self.env_id!r} must end with an OTHERWISE rule")
        if self.colours is not None and len(self.colours) != self.k:
            raise ConfigError("colour roster length must equal k")

    @property
    def d(self):
        return PARTICLE_STATE_DIM if self.domain == PARTICLES else LANE_STATE_DIM

    @property
    def mode_set(self):
        return PARTICLE_MODES if self.domain == PARTICLES else LANE_MODES


@dataclass
class WorldState:
    """Per-object state rows plus the step counter driving the light cycle."""

    z: np.ndarray  # (k, d)
    t: int = 0


@dataclass
class StepLabels:
    mode: np.ndarray  # (k,) int
    ctx: np.ndarray  # (k,) int


def _colour_index(z_row):
    return int(np.argmax(z_row[4:7]))


def _is_light(z_row):
    return z_row[4] == 1.0


def _is_car(z_row):
    return z_row[2] == 1.0 or z_row[3] == 1.0


def _unary_predicate(cond, i, state, domain):
    if cond in (Condition.ALWAYS, Condition.OTHERWISE):
        return True
    row = state.z[i]
    if domain == PARTICLES:
        if cond == Condition.IS_RED:
            return row[4] == 1.0
        return row[6] == 1.0  # IS_BLUE
    # Lane world: the "red" car is the orange one (type slot 0), the blue
    # car is type slot 1.
    if cond == Condition.IS_RED:
        return row[2] == 1.0
    return row[3] == 1.0


def _binary_candidates(cond, i, state, spec):
    z = state.z
    phys = spec.physics
    out = []
    if spec.domain == PARTICLES:
        pos_i = z[i, 0:2]
        for j in range(spec.k):
            if j == i:
                continue
            dist = float(np.linalg.norm(z[j, 0:2] - pos_i))
            if cond == Condition.SAME_COLOUR:
                ok = _colour_index(z[j]) == _colour_index(z[i])
            elif cond == Condition.OPPOSITE_COLOUR:
                ok = _colour_index(z[j]) != _colour_index(z[i])
            elif cond == Condition.CLOSE_TOGETHER:
                ok = dist < phys.close_dist
            else:
                raise ConfigError(f"condition {cond.name} not valid for particles")
            if ok:
                out.append((dist, j))
        return out
    x_i = z[i, 0]
    for j in range(spec.k):
        if j == i:
            continue
        gap = float(z[j, 0] - x_i)
        if cond == Condition.RED_LIGHT_AHEAD:
            ok = _is_light(z[j]) and z[j, 5] == 1.0 and 0.0 < gap < phys.light_ahead_dist
        elif cond == Condition.CAR_AHEAD:
            ok = _is_car(z[j]) and 0.0 < gap < phys.car_ahead_dist
        else:
            raise ConfigError(f"condition {cond.name} not valid for the lane world")
        if ok:
            out.append((abs(gap), j))
    return out


def _nearest_other(i, state, spec):
    z = state.z
    best = None
    for j in range(spec.k):
        if j == i:
            continue
        if spec.domain == PARTICLES:
            dist = float(np.linalg.norm(z[j, 0:2] - z[i, 0:2]))
        else:
            dist = abs(float(z[j, 0] - z[i, 0]))
        if best is None or dist < best[0]:
            best = (dist, j)
    return i if best is None else best[1]


def resolve_rule(i, state, spec):
    """First matching rule for object i: (InteractionMode, context index).

    Rules are scanned in listed order. Binary conditions fire when at least
    one other object satisfies them, binding the nearest such object
    (ties: lowest index). Unary conditions fire by the object's own
    predicate; their context is the object itself for unary interactions
    (drift, cruise, spiral) and the nearest other object for pair
    interactions, so a rule like "otherwise: spring" couples the object to
    its closest neighbour.
    """
    if spec.domain == LANE and _is_light(state.z[i]):
        return InteractionMode.STATIC_LIGHT, i
    for rule in spec.rules:
        if rule.condition in UNARY_CONDITIONS:
            if _unary_predicate(rule.condition, i, state, spec.domain):
                if rule.interaction in UNARY_MODES:
                    return rule.interaction, i
                return rule.interaction, _nearest_other(i, state, spec)
            continue
        candidates = _binary_candidates(rule.condition, i, state, spec)
        if candidates:
            best = min(candidates, key=lambda pair: (pair[0], pair[1]))
            return rule.interaction, best[1]
    raise SimulationError(f"no rule fired for object {i} in {spec.env_id!r}")


def _resolve_all(state, spec):
    modes = np.empty(spec.k, dtype=np.int32)
    ctxs = np.empty(spec.k, dtype=np.int32)
    for i in range(spec.k):
        mode, ctx = resolve_rule(i, state, spec)
        modes[i] = int(mode)
        ctxs[i] = ctx
    return StepLabels(modes, ctxs)


def _unit_towards(z, i, j):
    diff = z[j, 0:2] - z[i, 0:2]
    r = float(np.linalg.norm(diff))
    if r == 0.0:
        return np.zeros(2), 0.0
    return diff / r, r


def step_particles(state, spec):
    """One semi-implicit Euler step with elastic wall reflection."""
    if spec.domain != PARTICLES:
        raise ConfigError("step_particles needs a particle-domain spec")
    z = state.z
    if not np.isfinite(z).all():
        raise SimulationError("non-finite particle state")
    phys = spec.physics
    labels = _resolve_all(state, spec)
    new_z = z.copy()
    for i in range(spec.k):
        mode = InteractionMode(int(labels.mode[i]))
        j = int(labels.ctx[i])
        if mode == InteractionMode.STRAIGHT_LINE:
            acc = np.zeros(2)
        elif mode == InteractionMode.ATTRACTION:
            u, _ = _unit_towards(z, i, j)
            acc = phys.pull_accel * u
        elif mode == InteractionMode.REPULSION:
            u, _ = _unit_towards(z, i, j)
            acc = -phys.pull_accel * u
        elif mode == InteractionMode.SPRING:
            u, r = _unit_towards(z, i, j)
            acc = phys.spring_stiffness * (r - phys.spring_rest) * u
        elif mode == InteractionMode.SPIRAL_CENTRE:
            vel = z[i, 2:4]
            acc = -phys.spiral_pull * z[i, 0:2] + phys.spiral_swirl * np.array(
                [-vel[1], vel[0]]
            )
        else:
            raise SimulationError(f"mode {mode.name} is not a particle mode")
        vel = z[i, 2:4] + acc * phys.dt
        speed = float(np.linalg.norm(vel))
        if speed > phys.max_speed:
            vel = vel * (phys.max_speed / speed)
        pos = z[i, 0:2] + vel * phys.dt
        for c in range(2):
            if pos[c] > phys.arena:
                pos[c] = 2.0 * phys.arena - pos[c]
                vel[c] = -vel[c]
            elif pos[c] < -phys.arena:
                pos[c] = -2.0 * phys.arena - pos[c]
                vel[c] = -vel[c]
        new_z[i, 0:2] = pos
        new_z[i, 2:4] = vel
    return WorldState(new_z, state.t + 1), labels


def step_lane(state, spec):
    """One lane-world step: velocity relaxation laws plus the light cycle."""
    if spec.domain != LANE:
        raise ConfigError("step_lane needs a lane-domain spec")
    z = state.z
    if not np.isfinite(z).all():
        raise SimulationError("non-finite lane state")
    phys = spec.physics
    labels = _resolve_all(state, spec)
    new_z = z.copy()
    toggle = (state.t + 1) % phys.light_period == 0
    for i in range(spec.k):
        mode = InteractionMode(int(labels.mode[i]))
        if mode == InteractionMode.STATIC_LIGHT:
            if toggle:
                new_z[i, 5] = 1.0 - z[i, 5]
            continue
        if mode == InteractionMode.CRUISE_NORMAL:
            target = phys.lane_v_normal
        elif mode == InteractionMode.CRUISE_SLOW:
            target = phys.lane_v_slow
        elif mode == InteractionMode.BRAKE_FOR_LIGHT:
            target = 0.0
        elif mode == InteractionMode.FOLLOW_LEAD:
            target = float(z[int(labels.ctx[i]), 1])
        else:
            raise SimulationError(f"mode {mode.name} is not a lane mode")
        vel = z[i, 1] + phys.lane_relax * (target - z[i, 1]) * phys.dt
        new_z[i, 1] = vel
        new_z[i, 0] = z[i, 0] + vel * phys.dt
    return WorldState(new_z, state.t + 1), labels


def step(state, spec):
    if spec.domain == PARTICLES:
        return step_particles(state, spec)
    return step_lane(state, spec)


def _cruise_target(spec, car_slot):
    """Initial cruise speed a car would settle to on an empty road."""
    phys = spec.physics
    for rule in spec.rules:
        if rule.condition not in UNARY_CONDITIONS:
            continue
        if rule.condition == Condition.IS_RED and car_slot != 2:
            continue
        if rule.condition == Condition.IS_BLUE and car_slot != 3:
            continue
        if rule.interaction == InteractionMode.CRUISE_SLOW:
            return phys.lane_v_slow
        if rule.interaction == InteractionMode.CRUISE_NORMAL:
            return phys.lane_v_normal
    return phys.lane_v_normal


MAX_INIT_ATTEMPTS = 10_000
_LANE_MIN_GAP = 0.1


def init_world(spec, seed):
    """Random initial WorldState, deterministic per seed."""
    rng = np.random.default_rng(seed)
    phys = spec.physics
    if spec.domain == PARTICLES:
        for _ in range(MAX_INIT_ATTEMPTS):
            pos = rng.uniform(-0.8, 0.8, size=(spec.k, 2))
            if spec.k == 1:
                break
            dists = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
            np.fill_diagonal(dists, np.inf)
            if dists.min() >= 0.2:
                break
        else:
            raise GenerationError(
                f"could not place {spec.k} particles after {MAX_INIT_ATTEMPTS} attempts"
            )
        vel = rng.uniform(-0.05, 0.05, size=(spec.k, 2))
        if spec.colours is not None:
            colours = np.asarray(spec.colours, dtype=np.int64)
        else:
            colours = rng.integers(0, 3, size=spec.k)
        z = np.zeros((spec.k, PARTICLE_STATE_DIM))
        z[:, 0:2] = pos
        z[:, 2:4] = vel
        z[np.arange(spec.k), 4 + colours] = 1.0
        return WorldState(z, 0)

    n_cars = spec.k - 1
    for _ in range(MAX_INIT_ATTEMPTS):
        xs = rng.uniform(-0.9, 0.0, size=n_cars)
        if n_cars <= 1 or np.min(np.diff(np.sort(xs))) >= _LANE_MIN_GAP:
            break
    else:
        raise GenerationError(f"could not place {n_cars} cars after {MAX_INIT_ATTEMPTS} attempts")
    light_x = rng.uniform(0.3, 0.7)
    red = float(rng.integers(0, 2))
    z = np.zeros((spec.k, LANE_STATE_DIM))
    for idx in range(n_cars):
        slot = 2 + idx  # car_orange then car_blue
        z[idx, 0] = xs[idx]
        z[idx, slot] = 1.0
        z[idx, 1] = _cruise_target(spec, slot)
    z[n_cars, 0] = light_x
    z[n_cars, 4] = 1.0
    z[n_cars, 5] = red
    return WorldState(z, 0)


def _p(cond, mode):
    return Rule(Condition[cond], InteractionMode[mode])


BUILTIN_ENVS = {
    "particles_1": EnvSpec(
        "particles_1",
        PARTICLES,
        3,
        (_p("CLOSE_TOGETHER", "REPULSION"), _p("OTHERWISE", "STRAIGHT_LINE")),
    ),
    "particles_2": EnvSpec(
        "particles_2",
        PARTICLES,
        3,
        (
            _p("SAME_COLOUR", "SPRING"),
            _p("CLOSE_TOGETHER", "ATTRACTION"),
            _p("OTHERWISE", "STRAIGHT_LINE"),
        ),
    ),
    "particles_3": EnvSpec(
        "particles_3",
        PARTICLES,
        3,
        (
            _p("SAME_COLOUR", "REPULSION"),
            _p("OPPOSITE_COLOUR", "SPRING"),
            _p("OTHERWISE", "STRAIGHT_LINE"),
        ),
    ),
    "particles_4": EnvSpec(
        "particles_4",
        PARTICLES,
        3,
        (
            _p("SAME_COLOUR", "ATTRACTION"),
            _p("IS_BLUE", "SPIRAL_CENTRE"),
            _p("IS_RED", "SPIRAL_CENTRE"),
            _p("OTHERWISE", "STRAIGHT_LINE"),
        ),
    ),
    "particles_5": EnvSpec(
        "particles_5",
        PARTICLES,
        3,
        (_p("SAME_COLOUR", "REPULSION"), _p("OTHERWISE", "SPRING")),
    ),
    "particles_6": EnvSpec(
        "particles_6",
        PARTICLES,
        3,
        (_p("ALWAYS", "SPIRAL_CENTRE"), _p("OTHERWISE", "STRAIGHT_LINE")),
    ),
    "particles_adapt": EnvSpec(
        "particles_adapt",
        PARTICLES,
        4,
        (_p("SAME_COLOUR", "SPRING"), _p("OTHERWISE", "REPULSION")),
    ),
    "lane_1": EnvSpec(
        "lane_1",
        LANE,
        3,
        (
            _p("CAR_AHEAD", "FOLLOW_LEAD"),
            _p("RED_LIGHT_AHEAD", "BRAKE_FOR_LIGHT"),
            _p("OTHERWISE", "CRUISE_NORMAL"),
        ),
    ),
    "lane_2": EnvSpec(
        "lane_2",
        LANE,
        3,
        (
            _p("CAR_AHEAD", "FOLLOW_LEAD"),
            _p("RED_LIGHT_AHEAD", "BRAKE_FOR_LIGHT"),
            _p("OTHERWISE", "CRUISE_SLOW"),
        ),
    ),
    "lane_3": EnvSpec(
        "lane_3",
        LANE,
        3,
        (_p("CAR_AHEAD", "FOLLOW_LEAD"), _p("OTHERWISE", "CRUISE_NORMAL")),
    ),
    "lane_adapt": EnvSpec(
        "lane_adapt",
        LANE,
        3,
        (
            _p("CAR_AHEAD", "FOLLOW_LEAD"),
            _p("RED_LIGHT_AHEAD", "BRAKE_FOR_LIGHT"),
            _p("IS_RED", "CRUISE_SLOW"),
            _p("OTHERWISE", "CRUISE_NORMAL"),
        ),
    ),
}


def get_env(env_id):
    try:
        return BUILTIN_ENVS[env_id]
    except KeyError:
        raise ConfigError(f"unknown environment {env_id!r}") from None
