# process_painter/edit_ops.py

from dataclasses import dataclass, replace
from typing import ClassVar

from .errors import SceneValidationError, UnresolvedKeyError
from .scene_graph import (
    COLORS,
    DslParser,
    ObjectNode,
    RelationEdge,
    SceneGraph,
    Violation,
    ensure_valid,
    print_scene,
)

# --- Edit operations ---
# Graph-level effect of every op lives in apply_op; placement-level effect
# (where things land on the grid) lives in microworld.Canvas.execute.


@dataclass(frozen=True)
class AddObject:
    obj: ObjectNode
    kind: ClassVar[str] = "AddObject"


@dataclass(frozen=True)
class AddRelation:
    edge: RelationEdge
    kind: ClassVar[str] = "AddRelation"


@dataclass(frozen=True)
class ModifyAttribute:
    """Recolors `target`; `index` re-keys it when the new color already has an object at the old index."""

    target: ObjectNode
    color: str
    index: int | None = None
    kind: ClassVar[str] = "ModifyAttribute"

    def __post_init__(self):
        if self.index == self.target.index:
            object.__setattr__(self, "index", None)

    @property
    def new_key(self):
        return ObjectNode(self.target.shape, self.color, self.index or self.target.index)


@dataclass(frozen=True)
class RemoveObject:
    target: ObjectNode
    kind: ClassVar[str] = "RemoveObject"


@dataclass(frozen=True)
class SwapPositions:
    first: ObjectNode
    second: ObjectNode
    kind: ClassVar[str] = "SwapPositions"


@dataclass(frozen=True)
class MoveObject:
    target: ObjectNode
    relation: str
    ref: ObjectNode
    kind: ClassVar[str] = "MoveObject"

    @property
    def edge(self):
        return RelationEdge(self.target, self.relation, self.ref)


EditOp = AddObject | AddRelation | ModifyAttribute | RemoveObject | SwapPositions | MoveObject
OP_KINDS = ("AddObject", "AddRelation", "ModifyAttribute", "RemoveObject", "SwapPositions", "MoveObject")


def op_keys(op):
    """Object keys an op needs to resolve against the working graph."""
    if isinstance(op, AddObject):
        return ()
    if isinstance(op, AddRelation):
        return (op.edge.subject, op.edge.object)
    if isinstance(op, ModifyAttribute | RemoveObject):
        return (op.target,)
    if isinstance(op, SwapPositions):
        return (op.first, op.second)
    return (op.target, op.ref)


def _require(g, *keys):
    for key in keys:
        if key not in g.objects:
            raise UnresolvedKeyError(key.ref(indexed=True))


def _rekey(edge, old, new):
    subject = new if edge.subject == old else edge.subject
    obj = new if edge.object == old else edge.object
    return RelationEdge(subject, edge.relation, obj)


def apply_op(g, op):
    """
    Applies one edit op to a graph and validates the result.

    SwapPositions is placement-only and leaves the graph unchanged. MoveObject makes sure its
    relation is the one asserted between the pair on that axis, which is a no-op when it already is.

    Raises:
        UnresolvedKeyError: The op names an object that is not in `g`.
        SceneValidationError: The result breaks an invariant (duplicate key, axis cycle, ...).
    """
    _require(g, *op_keys(op))
    objects, relations = set(g.objects), set(g.relations)
    if isinstance(op, AddObject):
        if op.obj in objects:
            raise SceneValidationError([Violation("duplicate-key", f"{op.obj.ref(indexed=True)} already exists")])
        objects.add(op.obj)
    elif isinstance(op, AddRelation):
        relations.add(op.edge)
    elif isinstance(op, ModifyAttribute):
        new_key = op.new_key
        if new_key != op.target and new_key in objects:
            raise SceneValidationError([Violation("duplicate-key", f"{new_key.ref(indexed=True)} already exists")])
        objects.discard(op.target)
        objects.add(new_key)
        relations = {_rekey(r, op.target, new_key) for r in relations}
    elif isinstance(op, RemoveObject):
        objects.discard(op.target)
        relations = {r for r in relations if op.target not in (r.subject, r.object)}
    elif isinstance(op, MoveObject):
        pair_axis = op.edge.pair_axis()
        relations = {r for r in relations if r.pair_axis() != pair_axis}
        relations.add(op.edge)
    return ensure_valid(SceneGraph.build(objects, relations), complete=False)


def apply_script(g, ops):
    for op in ops:
        g = apply_op(g, op)
    return g


# --- Instruction templates ---
def _ref(obj):
    return obj.ref()


def render_op(op):
    if isinstance(op, AddObject):
        return f"add {_ref(op.obj)}"
    if isinstance(op, AddRelation):
        return f"place {_ref(op.edge.subject)} {op.edge.relation} {_ref(op.edge.object)}"
    if isinstance(op, ModifyAttribute):
        text = f"change {_ref(op.target)} color to {op.color}"
        return text if op.index is None else f"{text} as #{op.index}"
    if isinstance(op, RemoveObject):
        return f"remove {_ref(op.target)}"
    if isinstance(op, SwapPositions):
        return f"swap positions of {_ref(op.first)} and {_ref(op.second)}"
    return f"move {_ref(op.target)} to be {op.relation} {_ref(op.ref)}"


def render_ops(ops):
    """
    Renders ops as '; '-joined instructions.

    An AddObject directly followed by a relation on the new object collapses into
    'add {ref} {relation} {ref}', which parse_ops splits back into the same two ops.
    """
    ops = list(ops)
    parts = []
    i = 0
    while i < len(ops):
        op = ops[i]
        nxt = ops[i + 1] if i + 1 < len(ops) else None
        if isinstance(op, AddObject) and isinstance(nxt, AddRelation) and nxt.edge.subject == op.obj:
            parts.append(f"add {_ref(op.obj)} {nxt.edge.relation} {_ref(nxt.edge.object)}")
            i += 2
            continue
        parts.append(render_op(op))
        i += 1
    return "; ".join(parts)


def _instruction_ref(parser):
    return parser.parse_objref(allow_count=False).node()


def parse_ops(text):
    """
    Parses instructions produced by render_ops back into edit ops.

    Object refs may leave the color out; such refs match any color.

    Raises:
        DslSyntaxError: The text does not follow the instruction grammar.
    """
    parser = DslParser(text)
    if parser.at_end():
        parser.fail("instruction")
    ops = []
    while True:
        verb = parser.expect_one_of(("add", "place", "change", "remove", "swap", "move"), "instruction verb")
        if verb == "add":
            obj = _instruction_ref(parser)
            ops.append(AddObject(obj))
            if parser.peek() not in (None, ";"):
                relation = parser.parse_relation()
                ops.append(AddRelation(RelationEdge(obj, relation, _instruction_ref(parser))))
        elif verb == "place":
            subject = _instruction_ref(parser)
            relation = parser.parse_relation()
            ops.append(AddRelation(RelationEdge(subject, relation, _instruction_ref(parser))))
        elif verb == "change":
            target = _instruction_ref(parser)
            parser.expect("color")
            parser.expect("to")
            color = parser.expect_one_of(COLORS, "color")
            index = None
            if parser.peek() == "as":
                parser.advance()
                parser.expect("#")
                token = parser.peek()
                if token is None or len(token) != 1 or token not in "123456789":
                    parser.fail("index digit 1-9")
                index = int(parser.advance())
            ops.append(ModifyAttribute(target, color, index))
        elif verb == "remove":
            ops.append(RemoveObject(_instruction_ref(parser)))
        elif verb == "swap":
            parser.expect("positions")
            parser.expect("of")
            first = _instruction_ref(parser)
            parser.expect("and")
            ops.append(SwapPositions(first, _instruction_ref(parser)))
        else:
            target = _instruction_ref(parser)
            parser.expect("to")
            parser.expect("be")
            relation = parser.parse_relation()
            ops.append(MoveObject(target, relation, _instruction_ref(parser)))
        if parser.clause_end():
            break
    return tuple(ops)


def ops_to_graph(ops, base=None):
    """Facts an op list asserts on top of `base`, without failing on unresolved refs."""
    g = base or SceneGraph()
    objects, relations = set(g.objects), set(g.relations)
    for op in ops:
        if isinstance(op, AddObject):
            objects.add(op.obj)
        elif isinstance(op, AddRelation):
            relations.add(op.edge)
        elif isinstance(op, MoveObject):
            relations.add(op.edge)
    return SceneGraph.build(objects, relations)


# --- Graph diff ---
def _rebuild(work, key, ops):
    for op in (RemoveObject(key), AddObject(key)):
        work = apply_op(work, op)
        ops.append(op)
    return work


def _offending_groups(work, expected):
    expected_groups = {}
    for edge in expected.sorted_relations():
        expected_groups.setdefault(edge.pair_axis(), []).append(edge)
    pending = {}
    for edge in work.sorted_relations():
        if edge in expected.relations:
            continue
        group = edge.pair_axis()
        if group in expected_groups:
            pending.setdefault(group, (edge, expected_groups[group][0]))
    return sorted(pending.values(), key=lambda pair: pair[1].sort_key())


def diff(expected, observed):
    """
    Edit script turning `observed` into `expected`.

    Objects are matched by exact key first, then greedily by shape alone in canonical order
    (those become ModifyAttribute fixes); leftovers are removed or added. Relations asserted on
    the wrong side of a pair become MoveObject ops, extra ones are cleared by re-adding the
    subject, and missing ones become AddRelation.
    """
    ops = []
    expected_left = sorted(expected.objects - observed.objects)
    observed_left = sorted(observed.objects - expected.objects)
    renames = []
    for exp in list(expected_left):
        match = next((obs for obs in observed_left if obs.shape == exp.shape), None)
        if match is not None:
            renames.append(ModifyAttribute(match, exp.color, exp.index))
            observed_left.remove(match)
            expected_left.remove(exp)

    work = observed
    for op in [RemoveObject(o) for o in observed_left] + renames + [AddObject(e) for e in expected_left]:
        work = apply_op(work, op)
        ops.append(op)

    # Extra relations with nothing expected on that pair and axis.
    expected_groups = {edge.pair_axis() for edge in expected.relations}
    stray = sorted({r.subject for r in work.relations - expected.relations if r.pair_axis() not in expected_groups})
    for key in stray:
        work = _rebuild(work, key, ops)

    # Relations asserted the wrong way round on a pair and axis the target constrains.
    pending = _offending_groups(work, expected)
    while pending:
        for offending, wanted in pending:
            move = MoveObject(wanted.subject, wanted.relation, wanted.object)
            try:
                work = apply_op(work, move)
            except SceneValidationError:
                continue
            ops.append(move)
            break
        else:
            work = _rebuild(work, pending[0][0].subject, ops)
        pending = _offending_groups(work, expected)

    for edge in sorted(expected.relations - work.relations):
        op = AddRelation(edge)
        work = apply_op(work, op)
        ops.append(op)
    return tuple(ops)


def describe_op(op):
    """Short human label used in logs and analyses."""
    return f"{op.kind}({render_op(op)})"


def rekey_ops(ops, old, new):
    """Rewrites every reference to `old` in `ops` as `new`."""

    def swap(key):
        return new if key == old else key

    out = []
    for op in ops:
        if isinstance(op, AddObject):
            out.append(AddObject(swap(op.obj)))
        elif isinstance(op, AddRelation):
            out.append(AddRelation(_rekey(op.edge, old, new)))
        elif isinstance(op, ModifyAttribute):
            out.append(replace(op, target=swap(op.target)))
        elif isinstance(op, RemoveObject):
            out.append(RemoveObject(swap(op.target)))
        elif isinstance(op, SwapPositions):
            out.append(SwapPositions(swap(op.first), swap(op.second)))
        else:
            out.append(MoveObject(swap(op.target), op.relation, swap(op.ref)))
    return tuple(out)


# --- Programs ---
@dataclass(frozen=True)
class Step:
    """One planned step: the ops it performs, its <ins> text and the <des> text of the scene after it."""

    ops: tuple
    ins_text: str
    des_text: str

    @classmethod
    def from_ops(cls, ops, after):
        return cls(tuple(ops), render_ops(ops), print_scene(after))

    def added_objects(self):
        return [op.obj for op in self.ops if isinstance(op, AddObject)]

    def added_relations(self):
        return [op.edge for op in self.ops if isinstance(op, AddRelation)]


@dataclass(frozen=True)
class EditProgram:
    steps: tuple
    base: SceneGraph = SceneGraph()

    @property
    def ops(self):
        return tuple(op for step in self.steps for op in step.ops)

    def graphs(self):
        """Working graph after each step."""
        g = self.base
        out = []
        for step in self.steps:
            g = apply_script(g, step.ops)
            out.append(g)
        return out

    def final_graph(self):
        return apply_script(self.base, self.ops)

    def __len__(self):
        return len(self.steps)
