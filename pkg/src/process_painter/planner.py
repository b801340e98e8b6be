# process_painter/planner.py

from dataclasses import dataclass, field

import numpy as np

from .edit_ops import (
    AddObject,
    AddRelation,
    EditProgram,
    ModifyAttribute,
    MoveObject,
    RemoveObject,
    Step,
    SwapPositions,
    apply_op,
    apply_script,
    rekey_ops,
)
from .errors import (
    ChainInfeasibleError,
    LayoutInfeasibleError,
    PreconditionError,
    SceneValidationError,
    TargetInfeasibleError,
)
from .logger import log
from .microworld import Canvas, layout
from .scene_graph import (
    COLORS,
    MAX_INDEX,
    MAX_OBJECTS,
    RELATIONS,
    SHAPES,
    ObjectNode,
    RelationEdge,
    SceneGraph,
    validate,
)

__all__ = [
    "AUGMENT_KINDS",
    "SubgraphChain",
    "apply_op",
    "augment_program",
    "sample_scene",
    "subsample_chain",
    "synthesize_program",
]

MIN_STEPS = 2
MAX_STEPS = 5
MAX_RETRIES = 32
AUGMENT_KINDS = ("decoy-color", "decoy-object", "swap")

# Seed stream ids keep the planner's draws independent of every other consumer of the run seed.
CHAIN_STREAM = 11
AUGMENT_STREAM = 12


@dataclass(frozen=True)
class SubgraphChain:
    """G_1 ⊂ G_2 ⊂ ... ⊂ G_k == full, each grown from `base` (empty unless editing an image)."""

    graphs: tuple
    base: SceneGraph = field(default_factory=SceneGraph)

    @property
    def k(self):
        return len(self.graphs)

    @property
    def full(self):
        return self.graphs[-1]

    def problems(self):
        """Invariant violations, empty when the chain is sound."""
        found = []
        prev = self.base
        for i, g in enumerate(self.graphs, start=1):
            found += [f"G_{i}: {v}" for v in validate(g, complete=False)]
            if not (prev.is_subgraph_of(g) and prev != g):
                found.append(f"G_{i} does not strictly grow G_{i - 1}")
            prev = g
        elements = self.full.element_count() - self.base.element_count()
        if not (MIN_STEPS <= self.k <= MAX_STEPS or (self.k == 1 and elements == 1)):
            found.append(f"k={self.k} outside {MIN_STEPS}..{MAX_STEPS}")
        return found


# --- Chain sampling ---
def _sample_order(rng, objects, relations, present):
    """Random element order in which every relation comes after both endpoints."""
    order = [objects[i] for i in rng.permutation(len(objects))]
    for i in rng.permutation(len(relations)):
        rel = relations[i]
        earliest = 0
        for endpoint in (rel.subject, rel.object):
            if endpoint not in present:
                earliest = max(earliest, order.index(endpoint) + 1)
        order.insert(int(rng.integers(earliest, len(order) + 1)), rel)
    return order


def _depth_order(full, objects, relations, present):
    """Deterministic fallback order: objects nothing has to sit above or left of come first."""
    depth = dict.fromkeys(full.objects, 0)
    for _ in range(len(full.objects)):
        for edge in full.relations:
            _, first, second = edge.normalized()
            depth[second] = max(depth[second], depth[first] + 1)
    order = sorted(objects, key=lambda o: (depth[o], o.sort_key()))
    for rel in relations:
        earliest = 0
        for endpoint in (rel.subject, rel.object):
            if endpoint not in present:
                earliest = max(earliest, order.index(endpoint) + 1)
        order.insert(earliest, rel)
    return order


def _grow(base, groups):
    graphs = []
    objects, relations = set(base.objects), set(base.relations)
    for group in groups:
        for element in group:
            (relations if isinstance(element, RelationEdge) else objects).add(element)
        graphs.append(SceneGraph.build(objects, relations))
    return graphs


def _placeable(graphs, start):
    canvas = start
    for g in graphs:
        try:
            canvas = Canvas(g, layout(g, fixed=canvas.placement))
        except LayoutInfeasibleError:
            return False
        if canvas.violated_edges():
            return False
    return True


def subsample_chain(full, seed, k_hint=None, start=None, max_retries=MAX_RETRIES):
    """
    Samples a closed, strictly growing chain of subgraphs ending in `full`.

    k is drawn uniformly from 2..5 (clipped by the number of elements) unless `k_hint` is given.
    Every increment is checked against the layout engine with earlier placements pinned;
    unplaceable chains are resampled.

    Args:
        full (SceneGraph): Target scene.
        seed (int): Chain seed; equal inputs give equal chains.
        k_hint (int): Optional fixed step count.
        start (Canvas): Initial visual state when editing an existing image.

    Raises:
        ChainInfeasibleError: No placeable chain was found within the retry limit.
    """
    start = start or Canvas()
    base = start.graph
    objects = sorted(full.objects - base.objects)
    relations = sorted(full.relations - base.relations)
    count = len(objects) + len(relations)
    if count == 0:
        raise ChainInfeasibleError("the starting scene already equals the target")
    if k_hint is not None and not MIN_STEPS <= k_hint <= min(MAX_STEPS, count):
        raise PreconditionError(f"k_hint={k_hint} needs 2 <= k <= min(5, {count})")
    if count == 1:
        chain = SubgraphChain((full,), base)
        if not _placeable(chain.graphs, start):
            raise ChainInfeasibleError("single-element scene cannot be placed")
        return chain

    present = set(base.objects)
    for attempt in range(max_retries):
        rng = np.random.default_rng([seed, CHAIN_STREAM, attempt])
        k = k_hint or min(int(rng.integers(MIN_STEPS, MAX_STEPS + 1)), count)
        order = _sample_order(rng, objects, relations, present)
        cuts = sorted(int(c) for c in rng.choice(np.arange(1, count), size=k - 1, replace=False))
        groups = [order[a:b] for a, b in zip([0, *cuts], [*cuts, count], strict=True)]
        graphs = _grow(base, groups)
        if _placeable(graphs, start):
            return SubgraphChain(tuple(graphs), base)
        log.debug(f"PLANNER: Chain attempt {attempt} for seed {seed} was not placeable; resampling.")

    k = k_hint or MIN_STEPS
    order = _depth_order(full, objects, relations, present)
    # Cut only in front of objects so each relation shares a step with its later endpoint.
    starts = [i for i in range(1, count) if not isinstance(order[i], RelationEdge)]
    if len(starts) >= k - 1:
        cuts = [starts[round(j * (len(starts) - 1) / max(k - 2, 1))] for j in range(k - 1)]
    else:
        cuts = [round(i * count / k) for i in range(1, k)]
    graphs = _grow(base, [order[a:b] for a, b in zip([0, *cuts], [*cuts, count], strict=True)])
    if _placeable(graphs, start):
        return SubgraphChain(tuple(graphs), base)
    raise ChainInfeasibleError(f"no placeable {k}-step chain after {max_retries} retries")


# --- Lowering ---
def synthesize_program(chain):
    """
    Lowers a chain into an edit program, one step per increment.

    Each new object is added in canonical order, immediately followed by the new relations it is
    the subject of (when the other endpoint is already there); remaining relations come last.
    """
    prev = chain.base
    steps = []
    for g in chain.graphs:
        present = set(prev.objects)
        remaining = sorted(g.relations - prev.relations)
        ops = []
        for obj in sorted(g.objects - prev.objects):
            ops.append(AddObject(obj))
            present.add(obj)
            for rel in list(remaining):
                if rel.subject == obj and rel.object in present:
                    ops.append(AddRelation(rel))
                    remaining.remove(rel)
        ops += [AddRelation(rel) for rel in remaining]
        steps.append(Step.from_ops(ops, g))
        prev = g
    return EditProgram(tuple(steps), chain.base)


# --- Augmentation ---
# Rewrites work on the per-step op tuples; Step texts are rebuilt once the program settles.
def _all_keys(op_lists, base):
    keys = set(base.objects)
    g = base
    for ops in op_lists:
        g = apply_script(g, ops)
        keys |= g.objects
    return keys


def _rewrite_decoy_color(op_lists, pos, base, rng):
    ops = op_lists[pos]
    added = sorted(op.obj for op in ops if isinstance(op, AddObject))
    if not added:
        return None
    target = added[int(rng.integers(len(added)))]
    taken = _all_keys(op_lists, base)
    decoys = [
        ObjectNode(target.shape, c, target.index)
        for c in COLORS
        if c != target.color and ObjectNode(target.shape, c, target.index) not in taken
    ]
    if not decoys:
        return None
    decoy = decoys[int(rng.integers(len(decoys)))]
    first = rekey_ops(ops, target, decoy)
    return [*op_lists[:pos], first, (ModifyAttribute(decoy, target.color),), *op_lists[pos + 1 :]]


def _rewrite_decoy_object(op_lists, pos, base, rng):
    taken = _all_keys(op_lists, base)
    after = apply_script(base, [op for ops in op_lists[: pos + 1] for op in ops])
    if len(after.objects) >= MAX_OBJECTS:
        return None
    shape = SHAPES[int(rng.integers(len(SHAPES)))]
    color = COLORS[int(rng.integers(len(COLORS)))]
    index = next((i for i in range(1, MAX_INDEX + 1) if ObjectNode(shape, color, i) not in taken), None)
    if index is None:
        return None
    decoy = ObjectNode(shape, color, index)
    return [*op_lists[:pos], (*op_lists[pos], AddObject(decoy)), (RemoveObject(decoy),), *op_lists[pos + 1 :]]


def _rewrite_swap(op_lists, pos, base, rng):
    relations = sorted(op.edge for op in op_lists[pos] if isinstance(op, AddRelation))
    if not relations:
        return None
    edge = relations[int(rng.integers(len(relations)))]
    swap = (SwapPositions(edge.subject, edge.object),)
    move = (MoveObject(edge.subject, edge.relation, edge.object),)
    return [*op_lists[: pos + 1], swap, move, *op_lists[pos + 1 :]]


_REWRITES = {
    "decoy-color": _rewrite_decoy_color,
    "decoy-object": _rewrite_decoy_object,
    "swap": _rewrite_swap,
}


def _simulates(op_lists, start, target):
    canvas = start
    try:
        for ops in op_lists:
            canvas = canvas.execute(ops)
    except (LayoutInfeasibleError, SceneValidationError, PreconditionError) as e:
        log.debug(f"PLANNER: Rejected augmentation: {e}")
        return False
    return canvas.graph == target and not canvas.violated_edges()


def augment_program(p, seed, ratio, kinds=AUGMENT_KINDS, max_steps=MAX_STEPS, start=None):
    """
    Rewrites roughly `ratio` of the steps into richer multi-step variants with the same final graph.

    Steps are considered in index order; each selected step tries the rewrite kinds in a seeded
    order and keeps the first one whose program still places cleanly and still ends at the
    original scene. The step count never exceeds `max_steps`.

    Rewrite kinds:
        decoy-color: add with a decoy color, then change it to the true color.
        decoy-object: add an extra object alongside the step, then remove it.
        swap: swap two related objects, then move the subject back into relation.
    """
    if ratio <= 0:
        return p
    start = start or Canvas(p.base, layout(p.base))
    rng = np.random.default_rng([seed, AUGMENT_STREAM])
    target = p.final_graph()
    op_lists = [step.ops for step in p.steps]
    pos = 0
    for _ in p.steps:
        if rng.random() < ratio and len(op_lists) < max_steps:
            for j in rng.permutation(len(kinds)):
                candidate = _REWRITES[kinds[int(j)]](op_lists, pos, p.base, rng)
                if candidate is None or len(candidate) > max_steps:
                    continue
                if _simulates(candidate, start, target):
                    pos += len(candidate) - len(op_lists)
                    op_lists = candidate
                    break
        pos += 1

    steps = []
    g = p.base
    for ops in op_lists:
        g = apply_script(g, ops)
        steps.append(Step.from_ops(ops, g))
    return EditProgram(tuple(steps), p.base)


# --- Prompt sampling ---
def sample_scene(rng, min_objects=2, max_objects=5, max_relations=3, attempts=64):
    """
    Draws a random, placeable scene: objects with colors, indexed 1..n per (shape, color), and up
    to `max_relations` relations that stay acyclic per axis.

    Raises:
        TargetInfeasibleError: No placeable scene within `attempts` draws.
    """
    for _ in range(attempts):
        count = int(rng.integers(min_objects, max_objects + 1))
        objects = []
        for _ in range(count):
            shape = SHAPES[int(rng.integers(len(SHAPES)))]
            color = COLORS[int(rng.integers(len(COLORS)))]
            index = 1 + sum(1 for o in objects if (o.shape, o.color) == (shape, color))
            objects.append(ObjectNode(shape, color, index))
        relations = []
        used = set()
        for _ in range(int(rng.integers(0, max_relations + 1)) if count > 1 else 0):
            a, b = (int(i) for i in rng.choice(count, size=2, replace=False))
            edge = RelationEdge(objects[a], RELATIONS[int(rng.integers(len(RELATIONS)))], objects[b])
            if edge.pair_axis() in used:
                continue
            candidate = SceneGraph.build(objects, [*relations, edge])
            if validate(candidate):
                continue
            relations.append(edge)
            used.add(edge.pair_axis())
        g = SceneGraph.build(objects, relations)
        try:
            layout(g)
        except LayoutInfeasibleError:
            continue
        return g
    raise TargetInfeasibleError(f"no placeable scene in {attempts} draws")
