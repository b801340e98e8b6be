# process_painter/inspector.py

from dataclasses import dataclass

from .edit_ops import (
    AddObject,
    AddRelation,
    ModifyAttribute,
    MoveObject,
    RemoveObject,
    SwapPositions,
    apply_op,
    diff,
    ops_to_graph,
    parse_ops,
    render_ops,
)
from .errors import PreconditionError, SceneValidationError, UnresolvedKeyError
from .logger import log
from .microworld import Canvas, canvas_from_image, derender, edge_holds, matches_scene
from .scene_graph import MAX_INDEX, ObjectNode, RelationEdge, SceneGraph, parse_scene, validate
from .settings import FAULT_KINDS

__all__ = [
    "CONSISTENT_COMPLETE",
    "CONSISTENT_INCOMPLETE",
    "CONFLICT",
    "MISALIGNED",
    "Critique",
    "Finding",
    "Observation",
    "Verdict",
    "check_image_alignment",
    "check_text_conflict",
    "matches_scene",
    "observe",
]

CONSISTENT_INCOMPLETE = "consistent-incomplete"
CONSISTENT_COMPLETE = "consistent-complete"
CONFLICT = "conflict"
MISALIGNED = "misaligned"
STATUSES = (CONSISTENT_INCOMPLETE, CONSISTENT_COMPLETE, CONFLICT, MISALIGNED)


# --- Verdicts ---
@dataclass(frozen=True)
class Finding:
    """One error record: what should be there, what is there, and which fault kind explains it."""

    kind: str
    expected: str
    observed: str

    def to_dict(self):
        return {"kind": self.kind, "expected": self.expected, "observed": self.observed}


@dataclass(frozen=True)
class Critique:
    analysis: tuple
    corrective: tuple
    rendered_text: str

    @classmethod
    def build(cls, findings, corrective):
        ranked = tuple(sorted(findings, key=lambda f: FAULT_KINDS.index(f.kind)))
        return cls(ranked, tuple(corrective), render_ops(corrective))

    @property
    def kind(self):
        """Kind of the leading finding; identity errors outrank relation errors."""
        return self.analysis[0].kind

    def to_dict(self):
        return {
            "kind": self.kind,
            "findings": [f.to_dict() for f in self.analysis],
            "corrective_ins": self.rendered_text,
        }


@dataclass(frozen=True)
class Verdict:
    status: str
    critique: Critique | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown verdict status {self.status!r}")
        if (self.critique is not None) != (self.status in (CONFLICT, MISALIGNED)):
            raise ValueError(f"{self.status} verdict must {'' if self.critique is None else 'not '}carry a critique")

    @property
    def is_clean(self):
        return self.critique is None

    def to_dict(self):
        return {"status": self.status, "analysis": self.critique.to_dict() if self.critique else None}


# --- Text conflict ---
def _counterpart(obj, full, taken):
    for same in (lambda o: o.shape == obj.shape, lambda o: o.color == obj.color):
        for candidate in full.sorted_objects():
            if same(candidate) and candidate.index == obj.index and candidate not in taken:
                return candidate
    return None


def _op_objects(op):
    if isinstance(op, AddObject):
        return (op.obj,)
    if isinstance(op, AddRelation | MoveObject):
        edge = op.edge
        return (edge.subject, edge.object)
    return ()


def check_text_conflict(ins_text, des_text, full, transient=None):
    """
    Checks an intermediate <ins>/<des> pair against the complete prompt graph.

    Facts absent from the text are fine (the scene is still being built); facts that contradict the
    prompt are not. A wrong attribute on a keyed object, an object the prompt has no room for, and a
    relation on the wrong side of a pair the prompt constrains all count as conflicts.
    Facts in `transient` (decoys a rewritten program adds and later removes) are tolerated.

    Raises:
        DslSyntaxError: des_text or ins_text is not well formed.
    """
    transient = transient or SceneGraph()
    described = parse_scene(des_text, complete=False) if des_text.strip() else SceneGraph()
    facts = described
    if ins_text.strip():
        ins_ops = parse_ops(ins_text)
        facts = ops_to_graph([op for op in ins_ops if all(k.color for k in _op_objects(op))], described)
        if validate(facts, complete=False):
            facts = described

    findings = []
    mapping = {}
    taken = set(facts.objects & full.objects)
    for obj in sorted(facts.objects - full.objects - transient.objects):
        match = _counterpart(obj, full, taken)
        mapping[obj] = match
        if match is None:
            findings.append(Finding("duplicate", "nothing", obj.ref(indexed=True)))
            continue
        taken.add(match)
        kind = "wrong-color" if match.shape == obj.shape else "wrong-shape"
        findings.append(Finding(kind, match.ref(indexed=True), obj.ref(indexed=True)))

    required = {edge.pair_axis(): edge for edge in full.relations}
    fixed_relations = set(facts.relations & transient.relations)
    for edge in (e for e in facts.sorted_relations() if e not in transient.relations):
        subject, obj = mapping.get(edge.subject, edge.subject), mapping.get(edge.object, edge.object)
        if subject is None or obj is None:
            continue
        moved = RelationEdge(subject, edge.relation, obj)
        wanted = required.get(moved.pair_axis())
        if wanted is not None and wanted.normalized() != moved.normalized():
            findings.append(Finding("relation-violation", str(wanted), str(edge)))
            moved = wanted
        fixed_relations.add(moved)

    if not findings:
        complete = full.objects <= facts.objects and full.relations <= facts.relations
        return Verdict(CONSISTENT_COMPLETE if complete else CONSISTENT_INCOMPLETE)

    fixed = SceneGraph.build((m for m in (mapping.get(o, o) for o in facts.objects) if m is not None), fixed_relations)
    corrective = diff(fixed, facts)
    log.debug(f"INSPECTOR: Text conflict in {des_text!r}: {render_ops(corrective)!r}")
    return Verdict(CONFLICT, Critique.build(findings, corrective))


# --- Image alignment ---
@dataclass(frozen=True)
class Observation:
    """What a draft actually shows, keyed against the step that should have produced it."""

    canvas: Canvas
    expected: SceneGraph
    findings: tuple = ()
    corrective: tuple = ()

    @property
    def aligned(self):
        return not self.findings

    def verdict(self):
        if self.aligned:
            return Verdict(CONSISTENT_COMPLETE)
        return Verdict(MISALIGNED, Critique.build(self.findings, self.corrective))


def _expected_state(canvas, step):
    """Expected graph, cells the step must leave untouched, flexible keys, and edges to check."""
    graph = canvas.graph
    pinned = dict(canvas.placement)
    flexible = set()
    checked = set()
    for op in step.ops:
        try:
            after = apply_op(graph, op)
        except (UnresolvedKeyError, SceneValidationError) as e:
            log.debug(f"INSPECTOR: Step op does not resolve on the drawn state: {e}")
            continue
        if isinstance(op, AddObject):
            flexible.add(op.obj)
        elif isinstance(op, AddRelation):
            checked.add(op.edge)
        elif isinstance(op, ModifyAttribute):
            if op.target in pinned:
                pinned[op.new_key] = pinned.pop(op.target)
            if op.target in flexible:
                flexible.discard(op.target)
                flexible.add(op.new_key)
        elif isinstance(op, RemoveObject):
            pinned.pop(op.target, None)
            flexible.discard(op.target)
        elif isinstance(op, SwapPositions):
            if op.first in pinned and op.second in pinned:
                pinned[op.first], pinned[op.second] = pinned[op.second], pinned[op.first]
            else:
                for key in (op.first, op.second):
                    pinned.pop(key, None)
                    flexible.add(key)
        else:
            pinned.pop(op.target, None)
            flexible.add(op.target)
            checked.add(op.edge)
        graph = after
    pinned = {key: cell for key, cell in pinned.items() if key in graph.objects}
    return graph, pinned, flexible & graph.objects, checked & graph.relations


def _same_look(key, seen):
    return key.shape == seen.shape and key.color in (None, seen.color)


def _assign(keys, pool, compatible, cells, edges):
    """Best partial matching of keys to drawn objects: most matches first, then most relations holding."""
    best = [(-1, -1), {}]
    ceiling = (len(keys), len(edges))
    current = {}
    used = set()

    def score():
        placed = {**cells, **{key: pool[j].cell for key, j in current.items()}}
        held = sum(1 for e in edges if e.subject in placed and e.object in placed and edge_holds(e, placed))
        return (len(current), held)

    # True once every key is matched with every relation holding.
    def search(i):
        if len(current) + len(keys) - i < best[0][0]:
            return False
        if i == len(keys):
            found = score()
            if found > best[0]:
                best[0], best[1] = found, dict(current)
            return found == ceiling
        key = keys[i]
        for j, seen in enumerate(pool):
            if j not in used and compatible(key, seen):
                current[key] = j
                used.add(j)
                if search(i + 1):
                    return True
                del current[key]
                used.discard(j)
        return search(i + 1)

    search(0)
    return best[1]


def _fresh(shape, color, taken, prefer=None):
    order = ([prefer] if prefer else []) + list(range(1, MAX_INDEX + 1))
    for index in order:
        key = ObjectNode(shape, color, index)
        if key not in taken:
            taken.add(key)
            return key
    raise PreconditionError(f"no free index for {color} {shape}")


def observe(canvas, img, step, reserved=frozenset()):
    """
    Keys the objects of a draft against the state the step should produce.

    Objects the step leaves alone are matched by cell. New, moved and swapped objects are matched by
    look, preferring the keying under which their relations hold. What stays unmatched is explained
    in order as a wrong color (same shape), a wrong shape (same color), an omission or a duplicate.

    Args:
        canvas (Canvas): The accepted, keyed state before the step.
        img (RasterImage): The draft.
        step (Step): The planned step.
        reserved (frozenset): Keys new labels for unexpected objects must avoid.

    Returns:
        Observation: The draft as a keyed canvas, plus findings and the corrective script.
    """
    expected, pinned, flexible, checked = _expected_state(canvas, step)
    seen = derender(img)
    by_cell = {s.cell: j for j, s in enumerate(seen)}

    matched = {}
    cells = {}
    for key, cell in sorted(pinned.items()):
        j = by_cell.get(cell)
        if j is not None and _same_look(key, seen[j]):
            matched[key] = j
            cells[key] = cell
        else:
            flexible.add(key)
    checked |= {edge for edge in expected.relations if edge.subject in flexible or edge.object in flexible}

    edges = expected.sorted_relations()
    tiers = (
        ("exact", _same_look),
        ("wrong-color", lambda key, s: key.shape == s.shape),
        ("wrong-shape", lambda key, s: key.color == s.color),
    )
    tier_of = dict.fromkeys(matched, "exact")
    for tier, compatible in tiers:
        keys = sorted(k for k in flexible if k not in matched)
        free = [j for j in range(len(seen)) if j not in matched.values()]
        pool = [seen[j] for j in free]
        for key, local in _assign(keys, pool, compatible, cells, edges).items():
            matched[key] = free[local]
            cells[key] = pool[local].cell
            tier_of[key] = tier

    taken = set(expected.objects) | set(reserved)
    labels = {}
    findings = []
    for key in expected.sorted_objects():
        if key not in matched:
            findings.append(Finding("omission", key.ref(indexed=True), "nothing"))
            continue
        drawn = seen[matched[key]]
        if tier_of[key] == "exact":
            labels[key] = key if key.color else _fresh(key.shape, drawn.color, taken, key.index)
        else:
            labels[key] = _fresh(drawn.shape, drawn.color, taken, key.index)
            findings.append(Finding(tier_of[key], key.ref(indexed=True), labels[key].ref(indexed=True)))
    extras = [j for j in range(len(seen)) if j not in matched.values()]
    duplicates = [_fresh(seen[j].shape, seen[j].color, taken) for j in extras]
    findings += [Finding("duplicate", "nothing", d.ref(indexed=True)) for d in duplicates]

    keyed = {key for key, tier in tier_of.items() if tier in ("exact", "wrong-color")}
    violated = [
        edge
        for edge in sorted(checked)
        if edge.subject in keyed and edge.object in keyed and not edge_holds(edge, cells)
    ]
    findings += [Finding("relation-violation", str(edge), f"{edge.relation} does not hold") for edge in violated]

    placement = {labels[key]: cells[key] for key in labels}
    placement.update({d: seen[j].cell for d, j in zip(duplicates, extras, strict=True)})
    relations = [
        RelationEdge(labels[e.subject], e.relation, labels[e.object])
        for e in edges
        if e.subject in keyed and e.object in keyed
    ]
    drawn_graph = SceneGraph.build(placement, relations)
    drawn = Canvas(drawn_graph, {key: placement[key] for key in drawn_graph.sorted_objects()})
    corrective = _corrective(expected, labels, tier_of, duplicates, violated)
    if findings:
        log.debug(f"INSPECTOR: Draft for {step.ins_text!r} misaligned: {[f.kind for f in findings]}")
    return Observation(drawn, expected, tuple(findings), corrective)


def _corrective(expected, labels, tier_of, duplicates, violated):
    ops = [RemoveObject(d) for d in duplicates]
    readd = []
    for key in expected.sorted_objects():
        tier = tier_of.get(key)
        if tier == "wrong-color":
            ops.append(ModifyAttribute(labels[key], key.color, key.index))
        elif tier == "wrong-shape":
            ops.append(RemoveObject(labels[key]))
            readd.append(key)
        elif tier is None:
            readd.append(key)
    ops += [AddObject(key) for key in readd]
    ops += [AddRelation(edge) for edge in expected.sorted_relations() if edge.subject in readd or edge.object in readd]
    ops += [MoveObject(edge.subject, edge.relation, edge.object) for edge in violated]
    return tuple(ops)


def check_image_alignment(before, after, step, canvas=None, reserved=frozenset()):
    """
    Checks a draft against the step it was meant to realize.

    `canvas` carries the keys of the accepted state `before` depicts; without it the keys are
    recovered from `before` against the scene the step describes.

    Raises:
        MalformedImageError: Either raster cannot be read.
        PreconditionError: `canvas` does not depict `before`.
    """
    if canvas is None:
        canvas = canvas_from_image(before, parse_scene(step.des_text, complete=False))
    elif canvas.render() != before:
        raise PreconditionError("keyed state does not match the before image")
    derender(before)
    return observe(canvas, after, step, reserved).verdict()
