# process_painter/microworld.py

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .edit_ops import (
    AddObject,
    AddRelation,
    ModifyAttribute,
    MoveObject,
    RemoveObject,
    Step,
    SwapPositions,
    apply_op,
    apply_script,
    describe_op,
    op_keys,
    rekey_ops,
)
from .errors import (
    LayoutInfeasibleError,
    MalformedImageError,
    PreconditionError,
    SceneValidationError,
    UnresolvedKeyError,
)
from .logger import log
from .scene_graph import (
    COLORS,
    INVERSE_RELATION,
    MAX_INDEX,
    MAX_OBJECTS,
    SHAPES,
    ObjectNode,
    RelationEdge,
    SceneGraph,
    print_scene,
    validate,
)
from .settings import FAULT_KINDS, uniform_fault_model

# --- Grid geometry ---
ROWS = 6
COLS = 6
CELLS = [(row, col) for row in range(ROWS) for col in range(COLS)]

SHAPE_CODES = {shape: code for code, shape in enumerate(SHAPES, start=1)}
COLOR_CODES = {color: code for code, color in enumerate(COLORS, start=1)}


def relation_holds(relation, a, b):
    """Strict single-axis predicate between two cells; co-row 'above' is false."""
    if relation == "above":
        return a[0] < b[0]
    if relation == "below":
        return a[0] > b[0]
    if relation == "left-of":
        return a[1] < b[1]
    return a[1] > b[1]


def edge_holds(edge, placement):
    return relation_holds(edge.relation, placement[edge.subject], placement[edge.object])


# --- Layout ---
def layout(g, fixed=None, violate=None, ignore_relations=False):
    """
    Places every object of `g` on the grid.

    Objects in `fixed` keep their cells. The rest are assigned in canonical order by depth-first
    search over cells in row-major order, and the first complete consistent assignment wins.
    Relations between two fixed objects are not re-checked.

    Args:
        g (SceneGraph): Scene to place.
        fixed (dict): Pinned placements, key -> (row, col).
        violate (RelationEdge): An edge of `g` that must NOT hold (used by fault injection).
        ignore_relations (bool): Place new objects on free cells only.

    Raises:
        LayoutInfeasibleError: No consistent assignment exists.
    """
    fixed = frozenset((key, cell) for key, cell in (fixed or {}).items() if key in g.objects)
    return dict(_layout(g, fixed, violate, ignore_relations))


# Pure in its arguments, so memoized.
@lru_cache(maxsize=16384)
def _layout(g, fixed, violate, ignore_relations):
    fixed = dict(fixed)
    if len(set(fixed.values())) != len(fixed):
        raise LayoutInfeasibleError("fixed placements share a cell")
    if any(v.kind == "axis-cycle" for v in validate(g, complete=False)):
        raise LayoutInfeasibleError(f"axis cycle in {print_scene(g)!r}")
    pending = [obj for obj in g.sorted_objects() if obj not in fixed]
    if len(pending) > len(CELLS) - len(fixed):
        raise LayoutInfeasibleError("not enough free cells")

    constraints = {obj: [] for obj in g.objects}
    if not ignore_relations:
        for edge in g.sorted_relations():
            wanted = edge != violate
            constraints[edge.subject].append((edge, wanted))
            constraints[edge.object].append((edge, wanted))

    assignment = dict(fixed)
    used = set(fixed.values())

    def consistent(obj, cell):
        for edge, wanted in constraints[obj]:
            other = edge.object if edge.subject == obj else edge.subject
            if other not in assignment:
                continue
            a, b = (cell, assignment[other]) if edge.subject == obj else (assignment[other], cell)
            if relation_holds(edge.relation, a, b) != wanted:
                return False
        return True

    def domain(obj):
        return (cell for cell in CELLS if cell not in used and consistent(obj, cell))

    def search(i):
        if i == len(pending):
            return True
        obj = pending[i]
        for cell in domain(obj):
            assignment[obj] = cell
            used.add(cell)
            # Forward check: every later object still needs somewhere to go.
            if all(any(True for _ in domain(rest)) for rest in pending[i + 1 :]) and search(i + 1):
                return True
            del assignment[obj]
            used.discard(cell)
        return False

    if not search(0):
        raise LayoutInfeasibleError(f"no consistent placement for {print_scene(g)!r}")
    return tuple((obj, assignment[obj]) for obj in g.sorted_objects())


# --- Raster ---
class RasterImage:
    """A ROWS x COLS grid of (shape code, color code) cells; (0, 0) is an empty cell."""

    __slots__ = ("cells",)

    def __init__(self, cells):
        arr = np.array(cells, dtype=np.int64)
        if arr.shape != (ROWS, COLS, 2):
            raise MalformedImageError(-1, -1, f"expected a {ROWS}x{COLS}x2 grid, got shape {arr.shape}")
        arr.setflags(write=False)
        self.cells = arr

    @classmethod
    def blank(cls):
        return cls(np.zeros((ROWS, COLS, 2), dtype=np.int64))

    def __eq__(self, other):
        return isinstance(other, RasterImage) and np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash(self.cells.tobytes())

    def __repr__(self):
        return f"RasterImage(occupied={self.occupied()})"

    def occupied(self):
        return int(np.count_nonzero(self.cells[:, :, 0]))

    def to_list(self):
        return self.cells.tolist()

    @classmethod
    def from_list(cls, data):
        return cls(data)

    def ascii(self):
        """Two-letter cell codes for pretty printing ('..' for empty)."""
        lines = []
        for row in range(ROWS):
            cells = []
            for col in range(COLS):
                shape, color = (int(v) for v in self.cells[row, col])
                cells.append(".." if shape == 0 else f"{COLORS[color - 1][0]}{SHAPES[shape - 1][0]}")
            lines.append(" ".join(cells))
        return "\n".join(lines)


def render(placement, g):
    """Writes each placed object's codes into its cell; every other cell stays empty."""
    if set(placement) != set(g.objects):
        raise PreconditionError("placement must cover exactly the graph's objects")
    cells = np.zeros((ROWS, COLS, 2), dtype=np.int64)
    for obj, (row, col) in placement.items():
        if obj.color is None:
            raise PreconditionError(f"cannot render {obj.ref(indexed=True)} without a color")
        cells[row, col] = (SHAPE_CODES[obj.shape], COLOR_CODES[obj.color])
    return RasterImage(cells)


@dataclass(frozen=True)
class ObservedObject:
    shape: str
    color: str
    cell: tuple


def derender(img):
    """
    Reads the objects back off a raster, in row-major order.

    Raises:
        MalformedImageError: A cell has a shape without a color (or the reverse) or an unknown code.
    """
    found = []
    for row, col in CELLS:
        shape, color = (int(v) for v in img.cells[row, col])
        if shape == 0 and color == 0:
            continue
        if shape == 0 or color == 0 or not 0 < shape <= len(SHAPES) or not 0 < color <= len(COLORS):
            raise MalformedImageError(row, col)
        found.append(ObservedObject(SHAPES[shape - 1], COLORS[color - 1], (row, col)))
    return found


def matches_scene(img, g):
    """
    True when the raster depicts `g`: the same (shape, color) multiset, and some way of keying the
    drawn objects that satisfies every relation.
    """
    seen = derender(img)
    wanted = sorted((o.shape, o.color) for o in g.objects)
    if sorted((s.shape, s.color) for s in seen) != wanted:
        return False
    keys = g.sorted_objects()
    assignment = {}
    used = set()

    def search(i):
        if i == len(keys):
            return True
        key = keys[i]
        for j, candidate in enumerate(seen):
            if j in used or (candidate.shape, candidate.color) != (key.shape, key.color):
                continue
            assignment[key] = candidate.cell
            if all(
                edge_holds(edge, assignment)
                for edge in g.incident(key)
                if edge.subject in assignment and edge.object in assignment
            ):
                used.add(j)
                if search(i + 1):
                    return True
                used.discard(j)
            del assignment[key]
        return False

    return search(0)


# --- Canvas: graph + placement, the working visual state ---
@dataclass(frozen=True)
class Canvas:
    graph: SceneGraph = field(default_factory=SceneGraph)
    placement: dict = field(default_factory=dict)

    def render(self):
        return render(self.placement, self.graph)

    def violated_edges(self):
        return [
            edge
            for edge in self.graph.sorted_relations()
            if edge.subject in self.placement and edge.object in self.placement and not edge_holds(edge, self.placement)
        ]

    def execute(self, ops, lenient=False, release=False):
        """
        Runs edit ops against the canvas and returns the new canvas.

        New objects are placed by `layout` with everything already on the grid pinned.
        MoveObject relocates its target only when one of the target's relations is violated.
        With lenient=True, ops that cannot resolve are skipped and an unplaceable scene falls
        back to relation-free placement, which is how faulty states are carried forward.
        With release=True, objects the ops name may leave their cells when nothing else fits.
        """
        graph, placement = self.graph, dict(self.placement)
        for op in ops:
            try:
                new_graph = apply_op(graph, op)
            except (UnresolvedKeyError, SceneValidationError) as e:
                if not lenient:
                    raise
                log.debug(f"MICROWORLD: Skipping {describe_op(op)}: {e}")
                continue
            if isinstance(op, ModifyAttribute):
                if op.target in placement:
                    placement[op.new_key] = placement.pop(op.target)
            elif isinstance(op, RemoveObject):
                placement.pop(op.target, None)
            elif isinstance(op, SwapPositions):
                placement = _settle(new_graph, placement, lenient)
                placement[op.first], placement[op.second] = placement[op.second], placement[op.first]
            elif isinstance(op, MoveObject):
                placement = _settle(new_graph, placement, lenient)
                target_edges = new_graph.incident(op.target)
                if not all(edge_holds(edge, placement) for edge in target_edges):
                    del placement[op.target]
                    placement = _settle(new_graph, placement, lenient)
            graph = new_graph
        movable = {key for op in ops for key in op_keys(op)} if release else set()
        return Canvas(graph, _settle(graph, placement, lenient, movable))

    def moved(self, delta):
        """Canvas with some objects relocated (a placement delta)."""
        placement = dict(self.placement)
        placement.update(delta)
        if len(set(placement.values())) != len(placement):
            raise LayoutInfeasibleError("placement delta puts two objects in one cell")
        return Canvas(self.graph, placement)

    def sketch(self, outcome, lenient=True):
        return self.execute(outcome.step.ops, lenient=lenient).moved(outcome.placement_delta)


def _settle(graph, placement, lenient, movable=frozenset()):
    try:
        return layout(graph, fixed=placement)
    except LayoutInfeasibleError:
        if movable:
            kept = {key: cell for key, cell in placement.items() if key not in movable}
            try:
                placed = layout(graph, fixed=kept)
            except LayoutInfeasibleError:
                pass
            else:
                log.debug(f"MICROWORLD: Released {len(placement) - len(kept)} pinned objects to fit the edit.")
                return placed
        if not lenient:
            raise
        log.debug("MICROWORLD: Falling back to relation-free placement.")
        return layout(graph, fixed=placement, ignore_relations=True)


def canvas_from_image(img, prompt):
    """
    Keys the objects of an initial image against the prompt graph (editing mode).

    Raises:
        PreconditionError: An object in the image has no counterpart in the prompt.
    """
    placement = {}
    for seen in derender(img):
        candidates = [
            o for o in prompt.sorted_objects() if (o.shape, o.color) == (seen.shape, seen.color) and o not in placement
        ]
        if not candidates:
            raise PreconditionError(f"initial image has {seen.color} {seen.shape} not in the prompt")
        placement[candidates[0]] = seen.cell
    graph = prompt.restrict(placement)
    canvas = Canvas(graph, {key: placement[key] for key in graph.sorted_objects()})
    if canvas.violated_edges():
        raise PreconditionError("initial image violates a prompt relation between its objects")
    return canvas


# --- Fault model ---
@dataclass(frozen=True)
class FaultModel:
    """Per-kind corruption probabilities; 'none' plus the five fault kinds sum to 1."""

    weights: tuple

    @classmethod
    def from_mapping(cls, mapping):
        return cls(tuple((kind, float(mapping.get(kind, 0.0))) for kind in ("none", *FAULT_KINDS)))

    @classmethod
    def uniform(cls, rate):
        return cls.from_mapping(uniform_fault_model(rate))

    @classmethod
    def clean(cls):
        return cls.uniform(0.0)

    @classmethod
    def only(cls, kind, rate=1.0):
        return cls.from_mapping({"none": 1.0 - rate, kind: rate})

    def p(self, kind):
        return dict(self.weights).get(kind, 0.0)

    @property
    def fault_rate(self):
        return 1.0 - self.p("none")

    def effective_rate(self, applicable):
        """Probability that one fault site with these applicable kinds gets corrupted."""
        return self.fault_rate if any(self.p(kind) > 0 for kind in applicable) else 0.0

    def draw(self, rng, applicable, forced=False):
        """
        Seeded draw for one fault site.

        Returns an empty list when the site stays clean, otherwise the applicable kinds in weighted
        order with the drawn kind first. With forced=True the site is corrupted whenever some kind applies.
        """
        kinds = [kind for kind in FAULT_KINDS if kind in applicable and self.p(kind) > 0]
        if not kinds or (not forced and rng.random() >= self.fault_rate):
            return []
        weights = np.array([self.p(kind) for kind in kinds])
        order = rng.choice(len(kinds), size=len(kinds), replace=False, p=weights / weights.sum())
        return [kinds[int(i)] for i in order]

    def to_dict(self):
        return dict(self.weights)


@dataclass(frozen=True)
class FaultLabel:
    kind: str = "none"
    target: str = ""

    @property
    def is_fault(self):
        return self.kind != "none"

    def to_dict(self):
        return {"kind": self.kind, "target": self.target}


@dataclass(frozen=True)
class FaultOutcome:
    """What actually gets executed: the (possibly corrupted) step plus a placement delta."""

    step: Step
    placement_delta: dict = field(default_factory=dict)


def realized_faults(labels):
    return [label for label in labels if label.is_fault]


def fault_sites(step):
    """The ops a fault can land on, in op order: every added object and every added relation."""
    return [op for op in step.ops if isinstance(op, AddObject | AddRelation)]


def site_faults(op, stage, room=True):
    """Fault kinds that can structurally apply to one site."""
    if isinstance(op, AddRelation):
        return ["relation-violation"]
    kinds = ["wrong-color", "wrong-shape"]
    # Plan faults must contradict the prompt; a dropped fact only reads as incomplete.
    if stage == "sketch":
        kinds.append("omission")
    if room:
        kinds.append("duplicate")
    return kinds


def _has_room(step, canvas):
    return len(canvas.graph.objects) + len(step.added_objects()) < MAX_OBJECTS


def clean_probability(step, stage, model, canvas):
    """Chance that no site of `step` draws a fault: the product of (1 - effective rate) over its sites."""
    room = _has_room(step, canvas)
    p = 1.0
    for op in fault_sites(step):
        p *= 1.0 - model.effective_rate(site_faults(op, stage, room))
    return p


def _fresh_index(shape, color, taken, prefer=None):
    if prefer is not None and ObjectNode(shape, color, prefer) not in taken:
        return prefer
    for index in range(1, MAX_INDEX + 1):
        if ObjectNode(shape, color, index) not in taken:
            return index
    return None


def _look(obj):
    return (obj.shape, obj.color)


def _renamed_edge(edge, renamed):
    subject, obj = (renamed.get(key, key) for key in (edge.subject, edge.object))
    if subject is None or obj is None:
        return None
    return RelationEdge(subject, edge.relation, obj)


# --- Sketch-stage corruptions ---
class _SketchDraft:
    """A step's ops while sketch faults are written into them, one site at a time."""

    def __init__(self, step, canvas, full, reserved, intended):
        self.ops = step.ops
        self.canvas = canvas
        self.wanted = {_look(o) for o in full.objects} if full is not None else set()
        self.taken = set(canvas.graph.objects) | set(reserved) | set(step.added_objects())
        # Drawn minus intended count per look. A duplicate never fills a gap an omission left,
        # and an omission never cancels a duplicate.
        self.surplus = Counter(_look(o) for o in canvas.graph.objects)
        self.surplus.subtract(_look(o) for o in intended.objects)
        self.renamed = {}
        self.delta = {}
        self.violated = []

    def substitute(self, target, attribute, rng):
        vocab = COLORS if attribute == "color" else SHAPES
        current = target.color if attribute == "color" else target.shape
        options = []
        for value in vocab:
            shape, color = (target.shape, value) if attribute == "color" else (value, target.color)
            # A substitute never looks like anything the prompt asks for.
            if value == current or (shape, color) in self.wanted:
                continue
            index = _fresh_index(shape, color, self.taken, prefer=target.index)
            if index is not None:
                options.append(ObjectNode(shape, color, index))
        if not options:
            return False
        substitute = options[int(rng.integers(len(options)))]
        self.ops = rekey_ops(self.ops, target, substitute)
        self.taken.add(substitute)
        self.renamed[target] = substitute
        self.surplus[_look(target)] -= 1
        self.surplus[_look(substitute)] += 1
        return True

    def omit(self, target):
        if self.surplus[_look(target)] > 0:
            return False
        self.ops = tuple(
            op
            for op in self.ops
            if not (isinstance(op, AddObject) and op.obj == target) and target not in op_keys(op)
        )
        self.renamed[target] = None
        self.surplus[_look(target)] -= 1
        return True

    def duplicate(self, target):
        drawn = len(self.canvas.graph.objects) + sum(isinstance(op, AddObject) for op in self.ops)
        if self.surplus[_look(target)] < 0 or drawn >= MAX_OBJECTS:
            return False
        index = _fresh_index(target.shape, target.color, self.taken)
        if index is None:
            return False
        copy = ObjectNode(target.shape, target.color, index)
        self.ops = (*self.ops, AddObject(copy))
        self.taken.add(copy)
        self.surplus[_look(target)] += 1
        return True

    def violate(self, edge):
        """Moves one endpoint of `edge` so the relation fails; every other relation of the mover still holds."""
        edge = _renamed_edge(edge, self.renamed)
        if edge is None:
            return False
        try:
            after = self.canvas.execute(self.ops).moved(self.delta)
        except (LayoutInfeasibleError, UnresolvedKeyError, SceneValidationError):
            return False
        new = {op.obj for op in self.ops if isinstance(op, AddObject)}
        mover = edge.subject if edge.subject in new or edge.object not in new else edge.object
        if mover in self.delta or any(mover in (e.subject, e.object) for e in self.violated):
            return False
        pinned = {key: cell for key, cell in after.placement.items() if key != mover}
        try:
            placed = layout(after.graph, fixed=pinned, violate=edge)
        except LayoutInfeasibleError:
            return False
        moved = after.moved({mover: placed[mover]})
        # Identical-looking objects can trade roles and still depict the relation; that is no fault.
        if matches_scene(moved.render(), SceneGraph.build(moved.graph.objects, [edge])):
            return False
        self.delta[mover] = placed[mover]
        self.violated.append(edge)
        return True

    def outcome(self, step):
        return FaultOutcome(Step(self.ops, step.ins_text, step.des_text), dict(self.delta))


# --- Plan-stage corruptions ---
class _PlanDraft:
    """A step's ops while contradictions with the prompt are written into them."""

    def __init__(self, step, base, full):
        self.ops = step.ops
        self.base = base
        self.full = full
        self.renamed = {}

    def _after(self):
        return apply_script(self.base, self.ops)

    def substitute(self, target, attribute, rng):
        after = self._after()
        if attribute == "color":
            rivals = [o for o in self.full.objects if o.shape == target.shape and o.index == target.index]
            substitutes = [ObjectNode(target.shape, c, target.index) for c in COLORS if c != target.color]
        else:
            rivals = [o for o in self.full.objects if o.color == target.color and o.index == target.index]
            substitutes = [
                ObjectNode(s, target.color, target.index)
                for s in SHAPES
                if s != target.shape and not any(o.shape == s and o.index == target.index for o in self.full.objects)
            ]
        # The only prompt counterpart with this shape (or color) and index must be the target itself.
        if any(o != target and o not in after.objects for o in rivals):
            return False
        options = [s for s in substitutes if s not in self.full.objects and s not in after.objects]
        if not options:
            return False
        substitute = options[int(rng.integers(len(options)))]
        self.ops = rekey_ops(self.ops, target, substitute)
        self.renamed[target] = substitute
        return True

    def duplicate(self, target):
        after = self._after()
        if len(after.objects) >= MAX_OBJECTS:
            return False
        clashes = {o.index for o in self.full.objects if o.shape == target.shape or o.color == target.color}
        for index in range(1, MAX_INDEX + 1):
            if index in clashes:
                continue
            copy = ObjectNode(target.shape, target.color, index)
            if copy in after.objects:
                continue
            self.ops = (*self.ops, AddObject(copy))
            return True
        return False

    def violate(self, edge):
        edge = _renamed_edge(edge, self.renamed)
        flipped = RelationEdge(edge.subject, INVERSE_RELATION[edge.relation], edge.object)
        ops = tuple(AddRelation(flipped) if isinstance(op, AddRelation) and op.edge == edge else op for op in self.ops)
        try:
            apply_script(self.base, ops)
        except SceneValidationError:
            return False
        self.ops = ops
        return True

    def outcome(self, step):
        return FaultOutcome(Step.from_ops(self.ops, self._after()))


def _realize(draft, op, kinds, rng):
    """Applies the first of `kinds` the draft can realize at this site; None when it can realize none."""
    for kind in kinds:
        if isinstance(op, AddRelation):
            done = draft.violate(op.edge)
        elif kind == "omission":
            done = draft.omit(op.obj)
        elif kind == "duplicate":
            done = draft.duplicate(op.obj)
        else:
            done = draft.substitute(op.obj, kind.split("-")[1], rng)
        if done:
            return kind
        log.debug(f"MICROWORLD: {kind} not realizable on {describe_op(op)}.")
    return None


def _site_target(op):
    return str(op.edge) if isinstance(op, AddRelation) else op.obj.ref(indexed=True)


def inject_fault(
    step, stage, seed, model, canvas=None, full=None, reserved=frozenset(), intended=None, single=False
):
    """
    Draws and applies seeded faults to a step, one independent draw per fault site.

    Every added object and every added relation is a site. A site whose drawn kind cannot be realized
    falls back to the next kind of its draw, and stays clean when none is left. Object sites are
    corrupted first in op order, then relation sites against the corrupted drawing.

    Args:
        step (Step): The planned step.
        stage (str): "sketch" corrupts what gets drawn; "plan" corrupts the <ins>/<des> text.
        seed: Anything numpy.random.default_rng accepts; equal seeds give equal draws.
        model (FaultModel): Corruption probabilities.
        canvas (Canvas): The accepted state before the step.
        full (SceneGraph): The prompt graph (plan stage; also reserves keys at sketch stage).
        reserved (frozenset): Keys substitutes and copies must avoid.
        intended (SceneGraph): What the accepted state should show; defaults to the canvas graph.
        single (bool): Corrupt at most one site, tried in seeded order until one takes a fault.

    Returns:
        tuple: (FaultOutcome, labels) with one FaultLabel per site in op order, "none" where the
        site was left alone.
    """
    canvas = canvas or Canvas()
    if stage == "plan":
        if full is None:
            raise PreconditionError("plan-stage faults need the prompt graph")
        draft = _PlanDraft(step, canvas.graph, full)
    else:
        reserved = set(reserved) | (set(full.objects) if full is not None else set())
        draft = _SketchDraft(step, canvas, full, reserved, intended or canvas.graph)
    rng = np.random.default_rng(seed)
    sites = fault_sites(step)
    room = _has_room(step, canvas)
    labels = [FaultLabel()] * len(sites)

    if single:
        if sites and rng.random() < model.fault_rate:
            for i in (int(j) for j in rng.permutation(len(sites))):
                kind = _realize(draft, sites[i], model.draw(rng, site_faults(sites[i], stage, room), forced=True), rng)
                if kind is not None:
                    labels[i] = FaultLabel(kind, _site_target(sites[i]))
                    break
    else:
        draws = [model.draw(rng, site_faults(op, stage, room)) for op in sites]
        order = sorted(range(len(sites)), key=lambda i: isinstance(sites[i], AddRelation))
        for i in order:
            if not draws[i]:
                continue
            kind = _realize(draft, sites[i], draws[i], rng)
            if kind is None:
                log.debug(f"MICROWORLD: No drawn fault realizable on {describe_op(sites[i])}; leaving it clean.")
                continue
            labels[i] = FaultLabel(kind, _site_target(sites[i]))

    if not realized_faults(labels):
        return FaultOutcome(step), tuple(labels)
    return draft.outcome(step), tuple(labels)
