"""Cost and fitness functions for episode outcomes."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .bt import Node, compile_tree, tree_node_count
from .world import EpisodeResult, Profile, run_compiled


@dataclass(frozen=True)
class FitnessWeights:
    """Weight set for the episode cost function.

    Costs: squared distances (cube-goal, robot-cube, localization error),
    tree length, execution time, accumulated risk; picking and placing are
    rewarded (negative cost).
    """

    alpha1: float = 10.0  # cube-goal distance
    alpha2: float = 2.0  # robot-cube distance
    alpha3: float = 1.0  # localization error
    beta: float = 0.5  # tree length
    gamma: float = 0.1  # execution time
    delta: float = 0.0  # accumulated failure probability
    pick_reward: float = 50.0
    place_reward: float = 100.0

    def with_delta(self, delta: float) -> "FitnessWeights":
        return FitnessWeights(
            self.alpha1,
            self.alpha2,
            self.alpha3,
            self.beta,
            self.gamma,
            delta,
            self.pick_reward,
            self.place_reward,
        )


TABLE2 = FitnessWeights()

WEIGHT_SETS = {"table2": TABLE2}


@dataclass(frozen=True)
class FitnessValue:
    """Fitness J = -cost, with the cost broken down by term.

    The breakdown sums to the cost exactly: cost is computed as
    distance_term + length_term + time_term + risk_term - rewards in that
    fixed order, and j is its negation.
    """

    j: float
    distance_term: float
    length_term: float
    time_term: float
    risk_term: float
    rewards: float

    @property
    def cost(self) -> float:
        return -self.j


def _from_terms(distance, length, time, risk, rewards) -> FitnessValue:
    total = distance + length + time + risk - rewards
    return FitnessValue(-total, distance, length, time, risk, rewards)


def cost(result: EpisodeResult, weights: FitnessWeights) -> FitnessValue:
    """Score one episode result; robot-cube distance counts as 0 while holding."""
    st = result.final_state
    gx, gy = result.goal_pose
    d_cube_goal = math.hypot(st.cube_x - gx, st.cube_y - gy)
    d_robot_cube = (
        0.0 if st.holding else math.hypot(st.true_x - st.cube_x, st.true_y - st.cube_y)
    )
    err = st.loc_error
    distance_term = (
        weights.alpha1 * d_cube_goal * d_cube_goal
        + weights.alpha2 * d_robot_cube * d_robot_cube
        + weights.alpha3 * err * err
    )
    length_term = weights.beta * result.node_count
    time_term = weights.gamma * st.elapsed_time
    risk_term = weights.delta * st.risk_sum
    rewards = 0.0
    if result.picked:
        rewards += weights.pick_reward
    if result.placed:
        rewards += weights.place_reward
    return _from_terms(distance_term, length_term, time_term, risk_term, rewards)


def evaluate_compiled(
    compiled,
    n_nodes: int,
    profile: Profile,
    weights: FitnessWeights,
    episodes: int,
    rng,
    *,
    max_root_failures: int = 5,
    max_ticks: int = 100,
) -> FitnessValue:
    """Mean fitness over independent episodes of an already-compiled tree.

    The returned value carries the per-term means, with j re-derived from
    them so the breakdown-sums-to-cost property holds exactly.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    sums = [0.0, 0.0, 0.0, 0.0, 0.0]
    for _ in range(episodes):
        result = run_compiled(
            compiled,
            n_nodes,
            profile,
            rng,
            max_root_failures=max_root_failures,
            max_ticks=max_ticks,
        )
        fv = cost(result, weights)
        sums[0] += fv.distance_term
        sums[1] += fv.length_term
        sums[2] += fv.time_term
        sums[3] += fv.risk_term
        sums[4] += fv.rewards
    inv = 1.0 / episodes
    return _from_terms(*(s * inv for s in sums))


def evaluate(
    tree: Node,
    profile: Profile,
    weights: FitnessWeights,
    episodes: int,
    rng,
    *,
    max_root_failures: int = 5,
    max_ticks: int = 100,
) -> FitnessValue:
    """Mean fitness of a tree over ``episodes`` independent episodes."""
    return evaluate_compiled(
        compile_tree(tree),
        tree_node_count(tree),
        profile,
        weights,
        episodes,
        rng,
        max_root_failures=max_root_failures,
        max_ticks=max_ticks,
    )
