"""Behavior trees as token-string genotypes: parsing, validity, tick engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

SUCCESS = 1
FAILURE = 0
RUNNING = 2

SEQUENCE_OPEN = "s("
FALLBACK_OPEN = "f("
CLOSE = ")"

ACTION = "action"
CONDITION = "condition"

Genotype = tuple[str, ...]
# Maps behavior id -> ACTION | CONDITION for every leaf usable in a genotype.
LeafKinds = Mapping[str, str]


class MalformedGenotype(ValueError):
    """Token sequence is not a single balanced tree over known leaves."""


class PoolEmpty(ValueError):
    pass


def is_control_open(token: str) -> bool:
    return token == SEQUENCE_OPEN or token == FALLBACK_OPEN


class Leaf:
    __slots__ = ("behavior_id", "is_condition")

    def __init__(self, behavior_id: str, is_condition: bool):
        self.behavior_id = behavior_id
        self.is_condition = is_condition

    def __eq__(self, other):
        return (
            isinstance(other, Leaf)
            and other.behavior_id == self.behavior_id
            and other.is_condition == self.is_condition
        )

    def __repr__(self):
        return f"Leaf({self.behavior_id!r})"


class Control:
    __slots__ = ("kind", "children")

    def __init__(self, kind: str, children: list):
        self.kind = kind  # "s" or "f"
        self.children = children

    def __eq__(self, other):
        return (
            isinstance(other, Control)
            and other.kind == self.kind
            and other.children == self.children
        )

    def __repr__(self):
        inner = " ".join(repr(c) for c in self.children)
        return f"{self.kind}({inner})"


Node = Leaf | Control


def sequence(*children: Node) -> Control:
    return Control("s", list(children))


def fallback(*children: Node) -> Control:
    return Control("f", list(children))


def parse(tokens: Iterable[str], kinds: LeafKinds) -> Node:
    """Parse a genotype into a tree; raises MalformedGenotype.

    Accepts childless controls so that validity checking (V3) can report
    them; `validate` is the place where they are rejected.
    """
    toks = tuple(tokens)
    if not toks:
        raise MalformedGenotype("empty genotype")
    pos = 0

    def parse_node() -> Node:
        nonlocal pos
        tok = toks[pos]
        if tok == CLOSE:
            raise MalformedGenotype(f"unmatched close at token {pos}")
        if is_control_open(tok):
            kind = "s" if tok == SEQUENCE_OPEN else "f"
            pos += 1
            children: list[Node] = []
            while True:
                if pos >= len(toks):
                    raise MalformedGenotype("unclosed control node")
                if toks[pos] == CLOSE:
                    pos += 1
                    return Control(kind, children)
                children.append(parse_node())
        leaf_kind = kinds.get(tok)
        if leaf_kind is None:
            raise MalformedGenotype(f"unknown leaf id {tok!r}")
        pos += 1
        return Leaf(tok, leaf_kind == CONDITION)

    root = parse_node()
    if pos != len(toks):
        raise MalformedGenotype(f"trailing tokens after position {pos}")
    return root


def serialize(node: Node) -> Genotype:
    """Inverse of parse: depth-first token sequence."""
    out: list[str] = []

    def walk(n: Node) -> None:
        if isinstance(n, Leaf):
            out.append(n.behavior_id)
            return
        out.append(SEQUENCE_OPEN if n.kind == "s" else FALLBACK_OPEN)
        for c in n.children:
            walk(c)
        out.append(CLOSE)

    walk(node)
    return tuple(out)


def node_count(tokens: Iterable[str]) -> int:
    """Number of tree nodes: every token except the closing parentheses."""
    return sum(1 for t in tokens if t != CLOSE)


def tree_node_count(node: Node) -> int:
    if isinstance(node, Leaf):
        return 1
    return 1 + sum(tree_node_count(c) for c in node.children)


@dataclass(frozen=True)
class Violation:
    code: str  # V1..V4
    token_index: int
    message: str


def validate(tokens: Iterable[str], kinds: LeafKinds) -> list[Violation]:
    """Check the four structural constraints on a parseable genotype.

    V1 same control kind on consecutive levels, V2 condition as last child,
    V3 childless control, V4 identical adjacent condition siblings.
    Raises MalformedGenotype for sequences that do not parse at all.
    """
    toks = tuple(tokens)
    if not toks:
        raise MalformedGenotype("empty genotype")
    violations: list[Violation] = []
    # stack entries: [kind, open_index, n_children, last_condition_id, last_child_cond_index]
    stack: list[list] = []
    roots = 0
    for i, tok in enumerate(toks):
        if tok == CLOSE:
            if not stack:
                raise MalformedGenotype(f"unmatched close at token {i}")
            kind, open_index, n_children, _, last_cond = stack.pop()
            if n_children == 0:
                violations.append(Violation("V3", open_index, "control node without children"))
            if last_cond is not None:
                violations.append(
                    Violation("V2", last_cond, "condition in the rightmost position")
                )
            continue
        parent = stack[-1] if stack else None
        if parent is None:
            roots += 1
            if roots > 1:
                raise MalformedGenotype(f"trailing tokens after position {i}")
        if is_control_open(tok):
            kind = "s" if tok == SEQUENCE_OPEN else "f"
            if parent is not None:
                if parent[0] == kind:
                    violations.append(
                        Violation("V1", i, "same control kind on consecutive levels")
                    )
                parent[2] += 1
                parent[3] = None
                parent[4] = None
            stack.append([kind, i, 0, None, None])
            continue
        leaf_kind = kinds.get(tok)
        if leaf_kind is None:
            raise MalformedGenotype(f"unknown leaf id {tok!r}")
        is_cond = leaf_kind == CONDITION
        if parent is not None:
            if is_cond and parent[3] == tok:
                violations.append(
                    Violation("V4", i, "identical condition nodes next to each other")
                )
            parent[2] += 1
            parent[3] = tok if is_cond else None
            parent[4] = i if is_cond else None
    if stack:
        raise MalformedGenotype("unclosed control node")
    return violations


def is_valid(tokens: Iterable[str], kinds: LeafKinds) -> bool:
    return not validate(tokens, kinds)


def tick(node: Node, world) -> int:
    """Reactive tick: memoryless left-to-right evaluation.

    Sequence returns the first non-Success child status, Success if all
    succeed; Fallback returns the first non-Failure child status, Failure
    if all fail. Leaves delegate to ``world.execute(behavior_id)`` exactly
    once per visit.
    """
    if isinstance(node, Leaf):
        return world.execute(node.behavior_id)
    if node.kind == "s":
        for child in node.children:
            status = tick(child, world)
            if status != SUCCESS:
                return status
        return SUCCESS
    for child in node.children:
        status = tick(child, world)
        if status != FAILURE:
            return status
    return FAILURE


def compile_tree(node: Node) -> Callable[[object], int]:
    """Build a closure evaluating tick(node, world); faster for hot loops."""
    if isinstance(node, Leaf):
        bid = node.behavior_id
        return lambda world: world.execute(bid)
    fns = tuple(compile_tree(c) for c in node.children)
    if node.kind == "s":
        def run_sequence(world, _fns=fns):
            for f in _fns:
                status = f(world)
                if status != SUCCESS:
                    return status
            return SUCCESS
        return run_sequence

    def run_fallback(world, _fns=fns):
        for f in _fns:
            status = f(world)
            if status != FAILURE:
                return status
        return FAILURE
    return run_fallback


def subtree_span(tokens: Genotype, index: int) -> tuple[int, int]:
    """Token range [start, stop) of the subtree rooted at a non-close token."""
    if index < 0 or index >= len(tokens):
        raise IndexError(f"token index {index} out of range")
    tok = tokens[index]
    if tok == CLOSE:
        raise IndexError(f"token {index} is a close token, not a node")
    if not is_control_open(tok):
        return (index, index + 1)
    depth = 0
    for j in range(index, len(tokens)):
        if is_control_open(tokens[j]):
            depth += 1
        elif tokens[j] == CLOSE:
            depth -= 1
            if depth == 0:
                return (index, j + 1)
    raise MalformedGenotype("unclosed control node")


def node_indices(tokens: Genotype) -> list[int]:
    """Indices of all node tokens (everything except closes)."""
    return [i for i, t in enumerate(tokens) if t != CLOSE]


def random_genotype(
    kinds: LeafKinds,
    length: int,
    rng,
    *,
    node_cap: int = 64,
    p_control: float = 0.5,
    max_attempts: int = 100,
) -> Genotype:
    """Random valid genotype with exactly ``length`` nodes.

    Control nodes are drawn with probability ``p_control`` per slot where a
    subtree of two or more nodes still fits. Invalid draws are resampled up
    to ``max_attempts`` times, after which the last draw is repaired by
    deleting violating nodes.
    """
    if not kinds:
        raise PoolEmpty("behavior pool is empty")
    if length < 1:
        raise ValueError("length must be >= 1")
    if length > node_cap:
        raise ValueError(f"length {length} exceeds node cap {node_cap}")
    leaves = sorted(kinds)

    def grow(n: int, parent_kind: str | None) -> list[str]:
        if n == 1:
            return [leaves[rng.randrange(len(leaves))]]
        # Same-kind nesting (V1) is avoided by construction.
        if parent_kind is None:
            kind = "s" if rng.random() < 0.5 else "f"
        else:
            kind = "f" if parent_kind == "s" else "s"
        out = [SEQUENCE_OPEN if kind == "s" else FALLBACK_OPEN]
        remaining = n - 1
        sizes: list[int] = []
        while remaining > 0:
            if remaining >= 2 and rng.random() < p_control:
                size = rng.randint(2, remaining)
            else:
                size = 1
            sizes.append(size)
            remaining -= size
        for size in sizes:
            out.extend(grow(size, kind))
        out.append(CLOSE)
        return out

    last: Genotype = ()
    for _ in range(max_attempts):
        candidate = tuple(grow(length, None))
        if not validate(candidate, kinds):
            return candidate
        last = candidate
    return repair(last, kinds, rng)


def repair(tokens: Genotype, kinds: LeafKinds, rng) -> Genotype:
    """Delete violating nodes until the genotype passes validation.

    Same-kind nesting is fixed by splicing the inner control's children into
    its parent (removing only the violating node); the other violations drop
    the offending node or subtree. Falls back to a single random leaf if the
    tree empties out.
    """
    toks = list(tokens)
    for _ in range(len(tokens) * 2 + 8):
        if not toks:
            break
        violations = validate(tuple(toks), kinds)
        if not violations:
            return tuple(toks)
        v = violations[0]
        if v.code == "V1":
            start, stop = subtree_span(tuple(toks), v.token_index)
            toks = toks[:start] + toks[start + 1 : stop - 1] + toks[stop:]
        elif v.code == "V3":
            start, stop = subtree_span(tuple(toks), v.token_index)
            toks = toks[:start] + toks[stop:]
        else:  # V2 / V4 point at a condition leaf
            toks = toks[: v.token_index] + toks[v.token_index + 1 :]
    if toks and not validate(tuple(toks), kinds):
        return tuple(toks)
    leaves = sorted(kinds)
    return (leaves[rng.randrange(len(leaves))],)


def canonical(tokens: Genotype) -> Genotype:
    """Behavioral signature: the genotype with single-child controls spliced.

    A control node with exactly one child returns its child's status
    unchanged, so such wrappers don't affect execution. Two genotypes with
    the same canonical form encode the same policy; duplicate detection in
    the evolution layer keys on this.
    """
    toks = tokens
    changed = True
    while changed:
        changed = False
        stack: list[list[int]] = []  # [open_index, child_count]
        for i, tok in enumerate(toks):
            if is_control_open(tok):
                if stack:
                    stack[-1][1] += 1
                stack.append([i, 0])
            elif tok == CLOSE:
                open_index, children = stack.pop()
                if children == 1:
                    toks = toks[:open_index] + toks[open_index + 1 : i] + toks[i + 1 :]
                    changed = True
                    break
            elif stack:
                stack[-1][1] += 1
    return toks


def to_text(tokens: Genotype) -> str:
    """On-disk genotype format: whitespace-separated tokens."""
    return " ".join(tokens)


def from_text(text: str) -> Genotype:
    tokens = tuple(text.split())
    if not tokens:
        raise MalformedGenotype("empty genotype text")
    return tokens
