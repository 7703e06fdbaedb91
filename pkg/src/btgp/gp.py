"""Evolution loop: subtree crossover, three-way mutation, tournament selection."""

from __future__ import annotations

import json
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import bt
from .bt import Genotype
from .fitness import FitnessValue, FitnessWeights, TABLE2, evaluate_compiled
from .world import Profile, leaf_kinds

CHECKPOINT_FORMAT = "btgp-checkpoint-v1"


class SlotsExceedCandidates(ValueError):
    pass


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class GpParams:
    """Evolution parameters; defaults follow the standard run configuration."""

    population: int = 30
    start_length: int = 4
    generations: int = 8000
    crossover_fraction: float = 0.40
    mutation_fraction: float = 0.60
    elitism_fraction: float = 0.10
    p_node_mutation: float = 0.30
    p_node_addition: float = 0.40
    p_node_deletion: float = 0.30
    p_control_node: float = 0.50
    episodes_per_eval: int = 1
    seed: int = 0
    node_cap: int = 64
    # With stochastic profiles a cached lucky score can pin a fragile tree at
    # the top forever; re-evaluating elites each generation washes that out.
    reevaluate_elites: bool = False
    early_stop_window: int = 0  # 0 disables
    workers: int = 1
    max_root_failures: int = 5
    max_ticks: int = 100

    def __post_init__(self):
        s = self.p_node_mutation + self.p_node_addition + self.p_node_deletion
        if abs(s - 1.0) > 1e-9:
            raise ValueError("mutation operator probabilities must sum to 1")
        for name in ("crossover_fraction", "mutation_fraction", "elitism_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.start_length < 1 or self.start_length > self.node_cap:
            raise ValueError("start_length must be in [1, node_cap]")


class Individual:
    __slots__ = ("genotype", "fitness", "birth_generation", "_compiled")

    def __init__(self, genotype: Genotype, birth_generation: int = 0, fitness=None):
        self.genotype = tuple(genotype)
        self.birth_generation = birth_generation
        self.fitness: FitnessValue | None = fitness
        self._compiled = None

    def compiled(self, kinds):
        """(tick closure, node count), parsed and compiled once."""
        if self._compiled is None:
            tree = bt.parse(self.genotype, kinds)
            self._compiled = (bt.compile_tree(tree), bt.tree_node_count(tree))
        return self._compiled

    def clone(self) -> "Individual":
        other = Individual(self.genotype, self.birth_generation, self.fitness)
        other._compiled = self._compiled
        return other

    # Compiled closures don't pickle; rebuild lazily on the other side.
    def __getstate__(self):
        return (self.genotype, self.birth_generation, self.fitness)

    def __setstate__(self, state):
        self.genotype, self.birth_generation, self.fitness = state
        self._compiled = None

    def __repr__(self):
        j = None if self.fitness is None else round(self.fitness.j, 3)
        return f"Individual({bt.to_text(self.genotype)!r}, j={j})"


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_j: float
    mean_j: float
    best_genotype: Genotype
    episodes: int


def tournament(candidates, slots: int, rng) -> list:
    """Survivor selection by repeated pairwise duels.

    Shuffles, duels consecutive pairs (ties resolved uniformly) and repeats
    until ``slots`` remain. Whenever fitness values are not all equal, the
    top-scoring candidate is guaranteed to survive and the bottom-scoring
    one to be eliminated.
    """
    cands = list(candidates)
    if slots > len(cands):
        raise SlotsExceedCandidates(f"{slots} slots for {len(cands)} candidates")
    if slots <= 0:
        return []
    if slots == len(cands):
        return cands
    for c in cands:
        if c.fitness is None:
            raise ValueError("tournament requires evaluated candidates")
    js = [c.fitness.j for c in cands]
    first = js[0]
    if all(j == first for j in js):
        winners: list = []
        pool = cands
        need = slots
    else:
        best_i = max(range(len(cands)), key=lambda i: js[i])
        worst_i = min(range(len(cands)), key=lambda i: js[i])
        winners = [cands[best_i]]
        pool = [c for i, c in enumerate(cands) if i != best_i and i != worst_i]
        need = slots - 1
    # One duel per round: each round shuffles, duels the leading pair and
    # gives everyone else a bye. Minimal pressure per round keeps genetic
    # content from weak individuals around, which the search relies on.
    while len(pool) > need:
        i = rng.randrange(len(pool))
        j = rng.randrange(len(pool) - 1)
        if j >= i:
            j += 1
        a, b = pool[i], pool[j]
        if a.fitness.j > b.fitness.j:
            loser = j
        elif b.fitness.j > a.fitness.j:
            loser = i
        else:
            loser = i if rng.random() < 0.5 else j
        pool[loser] = pool[-1]
        pool.pop()
    return winners + pool


def crossover(
    p1: Individual,
    p2: Individual,
    kinds,
    rng,
    *,
    node_cap: int = 64,
    max_attempts: int = 100,
    birth_generation: int = 0,
    exclude: frozenset | set = frozenset(),
) -> tuple[Individual, Individual]:
    """Swap one uniformly chosen subtree span between the parents.

    Invalid or over-cap offspring, offspring equal to each other, or
    offspring listed in ``exclude`` (duplicate rejection across repeated
    applications) trigger a re-draw of the crossover points; after
    ``max_attempts`` the parents are returned unchanged.
    """
    g1, g2 = p1.genotype, p2.genotype
    if g1 == g2 and len(g1) == 1:
        # identical single-leaf parents can never yield distinct offspring
        return (Individual(g1, birth_generation), Individual(g2, birth_generation))
    nodes1 = bt.node_indices(g1)
    nodes2 = bt.node_indices(g2)
    for _ in range(max_attempts):
        i1 = nodes1[rng.randrange(len(nodes1))]
        i2 = nodes2[rng.randrange(len(nodes2))]
        s1, e1 = bt.subtree_span(g1, i1)
        s2, e2 = bt.subtree_span(g2, i2)
        c1 = g1[:s1] + g2[s2:e2] + g1[e1:]
        c2 = g2[:s2] + g1[s1:e1] + g2[e2:]
        if c1 == c2 or bt.canonical(c1) in exclude or bt.canonical(c2) in exclude:
            continue
        if bt.node_count(c1) > node_cap or bt.node_count(c2) > node_cap:
            continue
        if bt.validate(c1, kinds) or bt.validate(c2, kinds):
            continue
        return (Individual(c1, birth_generation), Individual(c2, birth_generation))
    return (Individual(g1, birth_generation), Individual(g2, birth_generation))


def _insertion_slots(tokens: Genotype) -> list[int]:
    # Every inter-token position nested inside at least one control node is a
    # legal child slot of its innermost enclosing control.
    slots = []
    depth = 0
    for j, tok in enumerate(tokens):
        if depth >= 1:
            slots.append(j)
        if bt.is_control_open(tok):
            depth += 1
        elif tok == bt.CLOSE:
            depth -= 1
    return slots


def _random_control(rng) -> str:
    return bt.SEQUENCE_OPEN if rng.random() < 0.5 else bt.FALLBACK_OPEN


def _op_node_mutation(g: Genotype, ids, rng, p_control: float) -> Genotype:
    nodes = bt.node_indices(g)
    i = nodes[rng.randrange(len(nodes))]
    if rng.random() < p_control:
        tok = _random_control(rng)
        if bt.is_control_open(g[i]):
            return g[:i] + (tok,) + g[i + 1 :]
        # leaf -> control: the leaf becomes the new control's only child
        return g[:i] + (tok, g[i], bt.CLOSE) + g[i + 1 :]
    leaf = ids[rng.randrange(len(ids))]
    if bt.is_control_open(g[i]):
        s, e = bt.subtree_span(g, i)
        return g[:s] + (leaf,) + g[e:]
    return g[:i] + (leaf,) + g[i + 1 :]


def _child_boundaries(tokens: Genotype) -> list[list[int]]:
    """Per control node, the token positions of its child boundaries.

    Each list holds the start position of every direct child plus the
    position of the node's close token, so a (i, j) pair of entries brackets
    a contiguous sibling run.
    """
    bounds: dict[int, list[int]] = {}
    stack: list[int] = []
    for j, tok in enumerate(tokens):
        if stack:
            bounds[stack[-1]].append(j)
        if bt.is_control_open(tok):
            bounds[j] = []
            stack.append(j)
        elif tok == bt.CLOSE:
            stack.pop()
    return list(bounds.values())


def _op_node_addition(g: Genotype, ids, rng, p_control: float) -> Genotype | None:
    if rng.random() < p_control:
        # New control node over a contiguous run of siblings.
        runs = [
            (slots[x], slots[y])
            for slots in _child_boundaries(g)
            for x in range(len(slots) - 1)
            for y in range(x + 1, len(slots))
        ]
        tok = _random_control(rng)
        if not runs:
            return (tok,) + g + (bt.CLOSE,)  # bare leaf: wrap the root
        lo, hi = runs[rng.randrange(len(runs))]
        return g[:lo] + (tok,) + g[lo:hi] + (bt.CLOSE,) + g[hi:]
    # New leaf, either as a sibling in an existing child list or at a new
    # level (bundled with an existing node under a fresh control).
    leaf = ids[rng.randrange(len(ids))]
    slots = _insertion_slots(g)
    nodes = bt.node_indices(g)
    if slots and rng.random() < 0.5:
        j = slots[rng.randrange(len(slots))]
        return g[:j] + (leaf,) + g[j:]
    r = rng.randrange(2 * len(nodes))
    s, e = bt.subtree_span(g, nodes[r // 2])
    tok = _random_control(rng)
    if r % 2 == 0:
        return g[:s] + (tok, leaf) + g[s:e] + (bt.CLOSE,) + g[e:]
    return g[:s] + (tok,) + g[s:e] + (leaf, bt.CLOSE) + g[e:]


def _op_node_deletion(g: Genotype, rng) -> Genotype | None:
    nodes = bt.node_indices(g)
    if len(nodes) <= 1:
        return None  # deleting the only node would empty the tree
    i = nodes[rng.randrange(len(nodes) - 1) + 1]  # never the root
    s, e = bt.subtree_span(g, i)
    return g[:s] + g[e:]


def mutate(
    parent: Individual,
    kinds,
    params: GpParams,
    rng,
    *,
    birth_generation: int = 0,
    max_attempts: int = 100,
    exclude: frozenset | set = frozenset(),
) -> Individual:
    """Apply one of node mutation / addition / deletion (drawn per params).

    Inapplicable or invalid outcomes (and genotypes in ``exclude``) re-draw
    the operator; after ``max_attempts`` the best candidate so far is kept
    (repaired by node deletion if invalid), and as a final fallback the
    parent is copied unchanged.
    """
    ids = sorted(kinds)
    g = parent.genotype
    last = None
    valid_dup = None
    for _ in range(max_attempts):
        r = rng.random()
        if r < params.p_node_mutation:
            cand = _op_node_mutation(g, ids, rng, params.p_control_node)
        elif r < params.p_node_mutation + params.p_node_addition:
            cand = _op_node_addition(g, ids, rng, params.p_control_node)
        else:
            cand = _op_node_deletion(g, rng)
        if cand is None:
            continue
        last = cand
        if bt.node_count(cand) > params.node_cap:
            continue
        if bt.validate(cand, kinds):
            continue
        if bt.canonical(cand) in exclude:
            valid_dup = cand  # acceptable if nothing novel shows up
            continue
        return Individual(cand, birth_generation)
    if valid_dup is not None:
        return Individual(valid_dup, birth_generation)
    if last is not None:
        repaired = bt.repair(last, kinds, rng)
        if bt.node_count(repaired) <= params.node_cap and not bt.validate(repaired, kinds):
            return Individual(repaired, birth_generation)
    return Individual(g, birth_generation)


# --- evaluation, serial or via a process pool -------------------------------

_WORKER_CTX: dict = {}


def _worker_init(profile, weights, episodes, max_root_failures, max_ticks):
    _WORKER_CTX["args"] = (profile, weights, episodes, max_root_failures, max_ticks)
    _WORKER_CTX["kinds"] = leaf_kinds(profile)


def _eval_genotype(genotype, seed_str, kinds, profile, weights, episodes, mrf, mticks):
    rng = random.Random(seed_str)
    tree = bt.parse(genotype, kinds)
    return evaluate_compiled(
        bt.compile_tree(tree),
        bt.tree_node_count(tree),
        profile,
        weights,
        episodes,
        rng,
        max_root_failures=mrf,
        max_ticks=mticks,
    )


def _worker_eval(payload):
    genotype, seed_str = payload
    profile, weights, episodes, mrf, mticks = _WORKER_CTX["args"]
    return _eval_genotype(
        genotype, seed_str, _WORKER_CTX["kinds"], profile, weights, episodes, mrf, mticks
    )


class Evaluator:
    """Assigns fitness to individuals; owns the optional worker pool.

    Every evaluation seeds its own rng stream from (master seed, tag, slot),
    so parallel and serial schedules produce identical fitness values.
    """

    def __init__(self, profile: Profile, weights: FitnessWeights, params: GpParams):
        self.profile = profile
        self.weights = weights
        self.params = params
        self.kinds = leaf_kinds(profile)
        self._pool = None
        if params.workers > 1:
            self._pool = ProcessPoolExecutor(
                max_workers=params.workers,
                initializer=_worker_init,
                initargs=(
                    profile,
                    weights,
                    params.episodes_per_eval,
                    params.max_root_failures,
                    params.max_ticks,
                ),
            )

    def seed_string(self, tag: str, slot: int) -> str:
        return f"{self.params.seed}:{tag}:{slot}"

    def eval_batch(self, individuals, tag: str) -> int:
        """Evaluate in order; returns episodes consumed."""
        p = self.params
        payloads = [
            (ind.genotype, self.seed_string(tag, i)) for i, ind in enumerate(individuals)
        ]
        if self._pool is None:
            values = []
            for ind, (_, seed_str) in zip(individuals, payloads):
                rng = random.Random(seed_str)
                fn, n_nodes = ind.compiled(self.kinds)
                values.append(
                    evaluate_compiled(
                        fn,
                        n_nodes,
                        self.profile,
                        self.weights,
                        p.episodes_per_eval,
                        rng,
                        max_root_failures=p.max_root_failures,
                        max_ticks=p.max_ticks,
                    )
                )
        else:
            chunk = max(1, -(-len(payloads) // (p.workers * 2)))
            values = list(self._pool.map(_worker_eval, payloads, chunksize=chunk))
        for ind, fv in zip(individuals, values):
            ind.fitness = fv
        return len(individuals) * p.episodes_per_eval

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def evolve_generation(
    population: list, evaluator: Evaluator, params: GpParams, rng, generation: int = 0
) -> tuple[list, GenerationStats]:
    """One generation: breed 2N offspring, evaluate, select survivors.

    Crossover parents come from one tournament (paired after a shuffle, two
    crossover applications per pair), mutation parents from another (two
    offspring each). The next population is the elite fraction plus a
    tournament over parents and offspring combined.
    """
    n = params.population
    if len(population) != n:
        raise ValueError(f"population size {len(population)} != {n}")
    kinds = evaluator.kinds
    n_cx = round_half_up(n * params.crossover_fraction)
    n_mut = round_half_up(n * params.mutation_fraction)
    n_elite = round_half_up(n * params.elitism_fraction)

    # Offspring are kept novel against the current population and against
    # each other (bounded retries), where "duplicate" means same canonical
    # form: duplicates would be discarded by survivor selection anyway,
    # wasting the generation's search budget.
    taken: set[Genotype] = {bt.canonical(ind.genotype) for ind in population}
    offspring: list[Individual] = []
    cx_parents = tournament(population, n_cx, rng)
    rng.shuffle(cx_parents)
    for k in range(len(cx_parents) // 2):
        a, b = cx_parents[2 * k], cx_parents[2 * k + 1]
        for _ in range(2):
            c1, c2 = crossover(
                a,
                b,
                kinds,
                rng,
                node_cap=params.node_cap,
                birth_generation=generation,
                exclude=taken,
            )
            taken.add(bt.canonical(c1.genotype))
            taken.add(bt.canonical(c2.genotype))
            offspring.append(c1)
            offspring.append(c2)

    mut_parents = tournament(population, n_mut, rng)
    for parent in mut_parents:
        for _ in range(2):
            child = mutate(
                parent,
                kinds,
                params,
                rng,
                birth_generation=generation,
                exclude=taken,
            )
            taken.add(bt.canonical(child.genotype))
            offspring.append(child)

    episodes = evaluator.eval_batch(offspring, f"g{generation}:off")

    # Survivor selection runs on behaviorally distinct genotypes (fittest
    # instance of each canonical form). Without this the population
    # collapses into copies of one policy within ~50 generations and,
    # because below-median individuals then never win parent duels, the
    # search stalls permanently.
    combined = population + offspring
    order = sorted(range(len(combined)), key=lambda i: -combined[i].fitness.j)
    elites: list[Individual] = []
    seen: set[Genotype] = set()
    distinct_rest: list[Individual] = []
    for i in order:
        ind = combined[i]
        key = bt.canonical(ind.genotype)
        if key in seen:
            continue
        seen.add(key)
        if len(elites) < n_elite:
            elites.append(ind)
        else:
            distinct_rest.append(ind)
    if params.reevaluate_elites:
        elites = [e.clone() for e in elites]
        episodes += evaluator.eval_batch(elites, f"g{generation}:elite")
    n_rest = n - len(elites)
    if len(distinct_rest) >= n_rest:
        survivors = tournament(distinct_rest, n_rest, rng)
    else:
        # not enough distinct genotypes; pad with the fittest duplicates
        survivors = distinct_rest
        leftover = [combined[i] for i in order if combined[i] not in survivors]
        survivors = survivors + leftover[: n_rest - len(survivors)]
    new_population = elites + survivors

    best = max(new_population, key=lambda ind: ind.fitness.j)
    mean_j = sum(ind.fitness.j for ind in new_population) / len(new_population)
    stats = GenerationStats(generation, best.fitness.j, mean_j, best.genotype, episodes)
    return new_population, stats


def save_checkpoint(path, params: GpParams, generation: int, population, history, rng) -> None:
    """Resumable snapshot: population with fitness cache, rng cursor, history."""
    state = rng.getstate()
    data = {
        "format": CHECKPOINT_FORMAT,
        "seed": params.seed,
        "generation": generation,
        "rng_state": [state[0], list(state[1]), state[2]],
        "population": [
            {
                "genotype": bt.to_text(ind.genotype),
                "birth_generation": ind.birth_generation,
                "fitness": [
                    ind.fitness.j,
                    ind.fitness.distance_term,
                    ind.fitness.length_term,
                    ind.fitness.time_term,
                    ind.fitness.risk_term,
                    ind.fitness.rewards,
                ],
            }
            for ind in population
        ],
        "history": [
            [h.generation, h.best_j, h.mean_j, bt.to_text(h.best_genotype), h.episodes]
            for h in history
        ],
    }
    Path(path).write_text(json.dumps(data, indent=1))


def load_checkpoint(path) -> dict:
    data = json.loads(Path(path).read_text())
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")
    return data


def run(
    params: GpParams,
    profile: Profile,
    weights: FitnessWeights = TABLE2,
    *,
    on_generation=None,
    stop_fn=None,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    resume_from=None,
) -> tuple[list[GenerationStats], Individual]:
    """Full GP run; returns (history, best individual of the final population).

    ``stop_fn(stats, best)`` may end the run early; ``early_stop_window`` > 0
    stops after that many generations without best-fitness change. History
    row 0 describes the initial random population.
    """
    evaluator = Evaluator(profile, weights, params)
    try:
        rng = random.Random(params.seed)
        kinds = evaluator.kinds
        history: list[GenerationStats]
        if resume_from is not None:
            data = load_checkpoint(resume_from)
            if data["seed"] != params.seed:
                raise ValueError("checkpoint seed does not match params.seed")
            rs = data["rng_state"]
            rng.setstate((rs[0], tuple(rs[1]), rs[2]))
            population = []
            for entry in data["population"]:
                ind = Individual(
                    bt.from_text(entry["genotype"]),
                    entry["birth_generation"],
                    FitnessValue(*entry["fitness"]),
                )
                population.append(ind)
            history = [
                GenerationStats(g, bj, mj, bt.from_text(gt), ep)
                for g, bj, mj, gt, ep in data["history"]
            ]
            start_generation = data["generation"] + 1
        else:
            population = [
                Individual(
                    bt.random_genotype(
                        kinds, params.start_length, rng, node_cap=params.node_cap
                    ),
                    0,
                )
                for _ in range(params.population)
            ]
            episodes = evaluator.eval_batch(population, "init")
            best0 = max(population, key=lambda ind: ind.fitness.j)
            mean0 = sum(ind.fitness.j for ind in population) / len(population)
            history = [GenerationStats(0, best0.fitness.j, mean0, best0.genotype, episodes)]
            start_generation = 1

        for g in range(start_generation, params.generations + 1):
            population, stats = evolve_generation(population, evaluator, params, rng, g)
            history.append(stats)
            if on_generation is not None:
                on_generation(stats, population)
            if checkpoint_path is not None and checkpoint_every > 0 and g % checkpoint_every == 0:
                save_checkpoint(checkpoint_path, params, g, population, history, rng)
            if stop_fn is not None:
                best = max(population, key=lambda ind: ind.fitness.j)
                if stop_fn(stats, best):
                    break
            w = params.early_stop_window
            if w > 0 and len(history) > w:
                recent = [h.best_j for h in history[-(w + 1) :]]
                if all(v == recent[0] for v in recent):
                    break

        best = max(population, key=lambda ind: ind.fitness.j)
        return history, best
    finally:
        evaluator.close()
