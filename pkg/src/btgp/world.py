"""Fast state-machine world model for the mobile pick-and-place task.

The simulator tracks robot pose (true and estimated), localization, arm and
head configuration, and the cube, and executes behaviors with probabilistic
outcomes drawn from a scenario profile. It deliberately models no kinematics
or sensing: one behavior execution is one atomic transition plus time and
risk bookkeeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

from .bt import ACTION, CONDITION, FAILURE, SUCCESS, Node, compile_tree, tree_node_count

ROOT_SUCCESS = "root_success"
FAILURE_BUDGET = "failure_budget"
TICK_BUDGET = "tick_budget"

# Estimated-pose offsets along +x: fresh localization vs lost/unlocalized.
LOC_ERROR_LOCALIZED = 0.05
LOC_ERROR_LOST = 1.0

# Failure-probability columns; det is the all-zero baseline.
PROBABILITY_COLUMNS: dict[str, dict[str, float]] = {
    "det": {
        "loc_failure": 0.0,
        "pick_failure": 0.0,
        "place_failure": 0.0,
        "losing_cube": 0.0,
        "losing_localization": 0.0,
    },
    "stoch1": {
        "loc_failure": 0.0,
        "pick_failure": 0.0,
        "place_failure": 0.0,
        "losing_cube": 0.0,
        "losing_localization": 0.1,
    },
    "stoch2": {
        "loc_failure": 0.0,
        "pick_failure": 0.0,
        "place_failure": 0.0,
        "losing_cube": 0.05,
        "losing_localization": 0.1,
    },
    "stoch3": {
        "loc_failure": 0.2,
        "pick_failure": 0.2,
        "place_failure": 0.1,
        "losing_cube": 0.05,
        "losing_localization": 0.1,
    },
    "stoch4": {
        "loc_failure": 0.3,
        "pick_failure": 0.4,
        "place_failure": 0.2,
        "losing_cube": 0.1,
        "losing_localization": 0.2,
    },
}

FIXED_TIME_COSTS = {
    "localise": 5.0,
    "head_up": 1.0,
    "head_down": 1.0,
    "tuck": 2.0,
    "pick": 5.0,
    "place": 5.0,
    "have_block": 0.0,
}

CORE9 = (
    "localise",
    "head_up",
    "head_down",
    "tuck",
    "pick",
    "place",
    "move_to_pick",
    "move_to_goal",
    "have_block",
)

SCENARIOS = ("core9", "low_noise", "high_noise", "safe_paths")


class UnknownBehavior(KeyError):
    pass


class UnknownScenario(ValueError):
    pass


@dataclass(frozen=True)
class Profile:
    """Immutable scenario bundle: probabilities, behavior pool, geometry.

    ``risky_losing_cube`` / ``risky_losing_localization`` override the column
    values on the non-safe move behaviors (risk-averse path experiment);
    safe move variants always carry zero path risk and a travel time scaled
    by ``safe_time_multiplier``.
    """

    name: str
    loc_failure: float
    pick_failure: float
    place_failure: float
    losing_cube: float
    losing_localization: float
    pool: tuple[str, ...]
    start: tuple[float, float] = (0.0, 0.0)
    pick_pose: tuple[float, float] = (2.0, 0.0)
    goal_pose: tuple[float, float] = (-2.0, 0.0)
    reach_radius: float = 0.6
    speed: float = 0.5
    safe_time_multiplier: float = 2.0
    risky_losing_cube: float | None = None
    risky_losing_localization: float | None = None

    def move_risks(self, safe: bool) -> tuple[float, float]:
        """(losing_cube, losing_localization) for a move behavior."""
        if safe:
            return (0.0, 0.0)
        cube = self.losing_cube if self.risky_losing_cube is None else self.risky_losing_cube
        loc = (
            self.losing_localization
            if self.risky_losing_localization is None
            else self.risky_losing_localization
        )
        return (cube, loc)


def _aux_poses() -> list[tuple[float, float]]:
    # 6x6 grid, poses within reach of either table removed, ordered by
    # distance to the nearest table so the first few are the most tempting.
    xs = [-3.0, -1.8, -0.6, 0.6, 1.8, 3.0]
    ys = [-2.5, -1.5, -0.5, 0.5, 1.5, 2.5]
    pick, goal, reach = (2.0, 0.0), (-2.0, 0.0), 0.6
    poses = []
    for x in xs:
        for y in ys:
            d = min(math.dist((x, y), pick), math.dist((x, y), goal))
            if d > reach:
                poses.append((d, x, y))
    poses.sort()
    return [(x, y) for _, x, y in poses[:30]]


AUX_POSES = _aux_poses()
AUX_IDS = tuple(f"move_to_aux_{i:02d}" for i in range(len(AUX_POSES)))


def scenario_pool_ids(scenario: str) -> tuple[str, ...]:
    if scenario == "core9":
        return CORE9
    if scenario == "low_noise":
        return CORE9 + AUX_IDS[:3]
    if scenario == "high_noise":
        return CORE9 + AUX_IDS
    if scenario == "safe_paths":
        return CORE9 + ("move_to_pick_safe", "move_to_goal_safe")
    raise UnknownScenario(f"unknown scenario {scenario!r}")


def move_target(behavior_id: str, profile: Profile) -> tuple[float, float] | None:
    """Target pose for move-type behaviors, None for everything else."""
    if behavior_id in ("move_to_pick", "move_to_pick_safe"):
        return profile.pick_pose
    if behavior_id in ("move_to_goal", "move_to_goal_safe"):
        return profile.goal_pose
    if behavior_id.startswith("move_to_aux_"):
        return AUX_POSES[int(behavior_id.rsplit("_", 1)[1])]
    return None


def is_move(behavior_id: str) -> bool:
    return behavior_id.startswith("move_to_")


def is_safe_move(behavior_id: str) -> bool:
    return behavior_id.endswith("_safe")


@dataclass(frozen=True)
class BehaviorSpec:
    id: str
    kind: str  # ACTION or CONDITION
    time_cost: float  # nominal seconds; moves charge by actual distance
    fail_prob: float  # nominal probability of returning Failure
    target: tuple[float, float] | None = None


def behavior_spec(behavior_id: str, profile: Profile) -> BehaviorSpec:
    if behavior_id == "have_block":
        return BehaviorSpec(behavior_id, CONDITION, 0.0, 0.0)
    if is_move(behavior_id):
        target = move_target(behavior_id, profile)
        if target is None:
            raise UnknownBehavior(behavior_id)
        safe = is_safe_move(behavior_id)
        mult = profile.safe_time_multiplier if safe else 1.0
        nominal = math.dist(profile.start, target) / profile.speed * mult
        _, losing_loc = profile.move_risks(safe)
        return BehaviorSpec(behavior_id, ACTION, nominal, losing_loc, target)
    if behavior_id not in FIXED_TIME_COSTS:
        raise UnknownBehavior(behavior_id)
    fail = {
        "localise": profile.loc_failure,
        "pick": profile.pick_failure,
        "place": profile.place_failure,
    }.get(behavior_id, 0.0)
    return BehaviorSpec(behavior_id, ACTION, FIXED_TIME_COSTS[behavior_id], fail)


def behavior_pool(scenario: str, profile: Profile | None = None) -> list[BehaviorSpec]:
    """Behavior specs for a named scenario pool."""
    ids = scenario_pool_ids(scenario)
    if profile is None:
        profile = make_profile("det", scenario)
    return [behavior_spec(bid, profile) for bid in ids]


def make_profile(
    column: str,
    pool: str | Iterable[str] = "core9",
    *,
    name: str | None = None,
    risky_losing_cube: float | None = None,
    risky_losing_localization: float | None = None,
    safe_time_multiplier: float = 2.0,
) -> Profile:
    """Assemble a profile from a probability column and a behavior pool."""
    if column not in PROBABILITY_COLUMNS:
        raise UnknownScenario(f"unknown probability column {column!r}")
    probs = PROBABILITY_COLUMNS[column]
    if isinstance(pool, str):
        pool_ids = scenario_pool_ids(pool)
        pool_label = pool
    else:
        pool_ids = tuple(pool)
        pool_label = "custom"
    return Profile(
        name=name or (column if pool_label == "core9" else f"{column}_{pool_label}"),
        loc_failure=probs["loc_failure"],
        pick_failure=probs["pick_failure"],
        place_failure=probs["place_failure"],
        losing_cube=probs["losing_cube"],
        losing_localization=probs["losing_localization"],
        pool=pool_ids,
        risky_losing_cube=risky_losing_cube,
        risky_losing_localization=risky_losing_localization,
        safe_time_multiplier=safe_time_multiplier,
    )


def builtin_profile(name: str) -> Profile:
    return make_profile(name, "core9")


def leaf_kinds(profile: Profile) -> dict[str, str]:
    """Leaf-kind map for the genotype layer."""
    return {bid: (CONDITION if bid == "have_block" else ACTION) for bid in profile.pool}


class WorldState:
    """Mutable episode state; one instance per episode."""

    __slots__ = (
        "true_x",
        "true_y",
        "est_x",
        "est_y",
        "localized",
        "arm_tucked",
        "head_up",
        "holding",
        "cube_x",
        "cube_y",
        "elapsed_time",
        "risk_sum",
        "picked_once",
        "placed",
        "root_failures",
    )

    def __init__(self):
        self.true_x = 0.0
        self.true_y = 0.0
        self.est_x = 0.0
        self.est_y = 0.0
        self.localized = False
        self.arm_tucked = False
        self.head_up = True
        self.holding = False
        self.cube_x = 0.0
        self.cube_y = 0.0
        self.elapsed_time = 0.0
        self.risk_sum = 0.0
        self.picked_once = False
        self.placed = False
        self.root_failures = 0

    @property
    def robot_pose_true(self) -> tuple[float, float]:
        return (self.true_x, self.true_y)

    @property
    def robot_pose_est(self) -> tuple[float, float]:
        return (self.est_x, self.est_y)

    @property
    def cube_pose(self) -> tuple[float, float]:
        return (self.cube_x, self.cube_y)

    @property
    def loc_error(self) -> float:
        return math.hypot(self.true_x - self.est_x, self.true_y - self.est_y)

    @property
    def head(self) -> str:
        return "up" if self.head_up else "down"

    def copy(self) -> "WorldState":
        other = WorldState.__new__(WorldState)
        for field in WorldState.__slots__:
            setattr(other, field, getattr(self, field))
        return other


def reset(profile: Profile) -> WorldState:
    """Initial episode state: unlocalized at start, cube on the pick table."""
    st = WorldState()
    st.true_x, st.true_y = profile.start
    st.est_x, st.est_y = st.true_x + LOC_ERROR_LOST, st.true_y
    st.cube_x, st.cube_y = profile.pick_pose
    return st


@dataclass
class EpisodeResult:
    final_state: WorldState
    picked: bool
    placed: bool
    node_count: int
    ticks_used: int
    terminated_by: str
    goal_pose: tuple[float, float] = (-2.0, 0.0)


TransitionFn = Callable[[WorldState, object], int]


def _make_fixed(behavior_id: str, time_cost: float, fail_prob: float) -> TransitionFn:
    if behavior_id == "localise":
        def localise(st, rng):
            st.elapsed_time += time_cost
            st.risk_sum += fail_prob
            if fail_prob > 0.0 and rng.random() < fail_prob:
                return FAILURE
            st.localized = True
            st.est_x = st.true_x + LOC_ERROR_LOCALIZED
            st.est_y = st.true_y
            return SUCCESS
        return localise
    if behavior_id == "head_up":
        def head_up(st, rng):
            st.elapsed_time += time_cost
            st.head_up = True
            return SUCCESS
        return head_up
    if behavior_id == "head_down":
        def head_down(st, rng):
            st.elapsed_time += time_cost
            st.head_up = False
            return SUCCESS
        return head_down
    if behavior_id == "tuck":
        def tuck(st, rng):
            st.elapsed_time += time_cost
            st.arm_tucked = True
            return SUCCESS
        return tuck
    raise UnknownBehavior(behavior_id)


def _make_move(
    target: tuple[float, float],
    losing_cube: float,
    losing_localization: float,
    respawn: tuple[float, float],
    inv_speed_scaled: float,
) -> TransitionFn:
    tx, ty = target
    rx, ry = respawn

    def move(st, rng):
        st.risk_sum += losing_localization
        dx = tx - st.true_x
        dy = ty - st.true_y
        planned = math.hypot(dx, dy) * inv_speed_scaled
        if not (st.localized and st.arm_tucked and st.head_up):
            st.elapsed_time += planned
            return FAILURE
        if losing_localization > 0.0 and rng.random() < losing_localization:
            # Stranded mid-path: half the travel time, localization lost.
            st.elapsed_time += planned * 0.5
            st.true_x += dx * 0.5
            st.true_y += dy * 0.5
            st.localized = False
            st.est_x = st.true_x + LOC_ERROR_LOST
            st.est_y = st.true_y
            if st.holding:
                st.cube_x, st.cube_y = st.true_x, st.true_y
            return FAILURE
        off_x = st.est_x - st.true_x
        off_y = st.est_y - st.true_y
        st.elapsed_time += planned
        st.true_x, st.true_y = tx, ty
        st.est_x, st.est_y = tx + off_x, ty + off_y
        if st.holding:
            if losing_cube > 0.0 and rng.random() < losing_cube:
                st.holding = False
                st.cube_x, st.cube_y = rx, ry
            else:
                st.cube_x, st.cube_y = tx, ty
        return SUCCESS

    return move


def _make_pick(fail_prob: float, time_cost: float, reach: float) -> TransitionFn:
    def pick(st, rng):
        st.elapsed_time += time_cost
        st.risk_sum += fail_prob
        if (
            st.holding
            or not st.localized
            or st.head_up
            or math.hypot(st.true_x - st.cube_x, st.true_y - st.cube_y) > reach
        ):
            return FAILURE
        if fail_prob > 0.0 and rng.random() < fail_prob:
            return FAILURE
        st.holding = True
        st.picked_once = True
        st.cube_x, st.cube_y = st.true_x, st.true_y
        return SUCCESS
    return pick


def _make_place(
    fail_prob: float, time_cost: float, goal: tuple[float, float], reach: float
) -> TransitionFn:
    gx, gy = goal

    def place(st, rng):
        st.elapsed_time += time_cost
        st.risk_sum += fail_prob
        if (
            not st.holding
            or not st.localized
            or st.head_up
            or math.hypot(st.true_x - gx, st.true_y - gy) > reach
        ):
            return FAILURE
        if fail_prob > 0.0 and rng.random() < fail_prob:
            return FAILURE
        st.holding = False
        st.cube_x, st.cube_y = gx, gy
        st.placed = True
        return SUCCESS
    return place


def _have_block(st, rng) -> int:
    return SUCCESS if st.holding else FAILURE


def build_transition_table(profile: Profile) -> dict[str, TransitionFn]:
    table: dict[str, TransitionFn] = {}
    for bid in profile.pool:
        if bid == "have_block":
            table[bid] = _have_block
        elif bid == "pick":
            table[bid] = _make_pick(
                profile.pick_failure, FIXED_TIME_COSTS["pick"], profile.reach_radius
            )
        elif bid == "place":
            table[bid] = _make_place(
                profile.place_failure,
                FIXED_TIME_COSTS["place"],
                profile.goal_pose,
                profile.reach_radius,
            )
        elif is_move(bid):
            target = move_target(bid, profile)
            if target is None:
                raise UnknownBehavior(bid)
            safe = is_safe_move(bid)
            losing_cube, losing_loc = profile.move_risks(safe)
            mult = profile.safe_time_multiplier if safe else 1.0
            table[bid] = _make_move(
                target,
                losing_cube,
                losing_loc,
                profile.pick_pose,
                mult / profile.speed,
            )
        else:
            table[bid] = _make_fixed(bid, FIXED_TIME_COSTS[bid], behavior_spec(bid, profile).fail_prob)
    return table


class World:
    """Binds one episode's state, transition table and rng for the tick engine."""

    __slots__ = ("state", "table", "rng", "trace")

    def __init__(self, state: WorldState, table: dict[str, TransitionFn], rng, trace=None):
        self.state = state
        self.table = table
        self.rng = rng
        self.trace = trace

    def execute(self, behavior_id: str) -> int:
        fn = self.table.get(behavior_id)
        if fn is None:
            raise UnknownBehavior(behavior_id)
        if self.trace is not None:
            self.trace.append(behavior_id)
        return fn(self.state, self.rng)


_TABLE_CACHE: dict[Profile, dict[str, TransitionFn]] = {}


def transition_table(profile: Profile) -> dict[str, TransitionFn]:
    table = _TABLE_CACHE.get(profile)
    if table is None:
        table = build_transition_table(profile)
        _TABLE_CACHE[profile] = table
    return table


def execute(behavior_id: str, state: WorldState, profile: Profile, rng) -> int:
    """Execute one behavior against the state (mutating it)."""
    fn = transition_table(profile).get(behavior_id)
    if fn is None:
        raise UnknownBehavior(behavior_id)
    return fn(state, rng)


def run_compiled(
    compiled,
    n_nodes: int,
    profile: Profile,
    rng,
    *,
    max_root_failures: int = 5,
    max_ticks: int = 100,
    trace=None,
) -> EpisodeResult:
    """Episode loop over a compiled tree; the hot path for evaluation."""
    state = reset(profile)
    w = World(state, transition_table(profile), rng, trace)
    ticks = 0
    while True:
        status = compiled(w)
        ticks += 1
        if status == SUCCESS:
            terminated = ROOT_SUCCESS
            break
        if status == FAILURE:
            state.root_failures += 1
            if state.root_failures > max_root_failures:
                terminated = FAILURE_BUDGET
                break
        if ticks >= max_ticks:
            terminated = TICK_BUDGET
            break
    return EpisodeResult(
        final_state=state,
        picked=state.picked_once,
        placed=state.placed,
        node_count=n_nodes,
        ticks_used=ticks,
        terminated_by=terminated,
        goal_pose=profile.goal_pose,
    )


def run_episode(
    tree: Node,
    profile: Profile,
    rng,
    *,
    max_root_failures: int = 5,
    max_ticks: int = 100,
    trace=None,
) -> EpisodeResult:
    """Tick the tree from the root until success or a budget runs out."""
    return run_compiled(
        compile_tree(tree),
        tree_node_count(tree),
        profile,
        rng,
        max_root_failures=max_root_failures,
        max_ticks=max_ticks,
        trace=trace,
    )
