# process_painter/scene_graph.py

import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import DslSyntaxError, SceneValidationError

# --- Closed vocabularies ---
# Codes used by the raster are the 1-based positions in these tuples.
SHAPES = ("circle", "square", "triangle", "star", "cross", "diamond")
COLORS = ("red", "green", "blue", "yellow", "purple", "orange")
RELATIONS = ("above", "below", "left-of", "right-of")

MAX_OBJECTS = 8
MAX_COUNT = 4
MAX_INDEX = 9

INVERSE_RELATION = {"above": "below", "below": "above", "left-of": "right-of", "right-of": "left-of"}
RELATION_AXIS = {"above": "vertical", "below": "vertical", "left-of": "horizontal", "right-of": "horizontal"}


@dataclass(frozen=True)
class ObjectNode:
    """One object of a scene. (shape, color, index) is its key; color is None only in step instructions."""

    shape: str
    color: str | None
    index: int = 1

    def sort_key(self):
        return (self.shape, self.color or "", self.index)

    def __lt__(self, other):
        return self.sort_key() < other.sort_key()

    def ref(self, indexed=False):
        """Instruction-style reference, e.g. 'red circle' or 'red circle#2'."""
        text = self.shape if self.color is None else f"{self.color} {self.shape}"
        if indexed or self.index != 1:
            text += f"#{self.index}"
        return text

    def __str__(self):
        return self.ref()


@dataclass(frozen=True)
class RelationEdge:
    subject: ObjectNode
    relation: str
    object: ObjectNode

    def sort_key(self):
        return (self.subject.sort_key(), self.relation, self.object.sort_key())

    def __lt__(self, other):
        return self.sort_key() < other.sort_key()

    @property
    def axis(self):
        return RELATION_AXIS[self.relation]

    def normalized(self):
        """(axis, first, second) where `first` must have the smaller row or column."""
        if self.relation in ("above", "left-of"):
            return (self.axis, self.subject, self.object)
        return (self.axis, self.object, self.subject)

    def pair_axis(self):
        return (frozenset((self.subject, self.object)), self.axis)

    def __str__(self):
        return f"{self.relation}({self.subject.ref(indexed=True)}, {self.object.ref(indexed=True)})"


@dataclass(frozen=True)
class SceneGraph:
    objects: frozenset = field(default_factory=frozenset)
    relations: frozenset = field(default_factory=frozenset)

    @classmethod
    def build(cls, objects=(), relations=()):
        return cls(frozenset(objects), frozenset(relations))

    def sorted_objects(self):
        return sorted(self.objects)

    def sorted_relations(self):
        return sorted(self.relations)

    def incident(self, key):
        return [r for r in self.sorted_relations() if key in (r.subject, r.object)]

    def restrict(self, keys):
        """The closed subgraph induced by `keys`."""
        keys = frozenset(keys) & self.objects
        return SceneGraph(keys, frozenset(r for r in self.relations if r.subject in keys and r.object in keys))

    def is_subgraph_of(self, other):
        return self.objects <= other.objects and self.relations <= other.relations

    def element_count(self):
        return len(self.objects) + len(self.relations)

    def __str__(self):
        return print_scene(self)


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str

    def __str__(self):
        return f"{self.kind}: {self.detail}"


# --- Validation ---
def _has_cycle(edges):
    graph = {}
    for first, second in edges:
        graph.setdefault(first, []).append(second)
        graph.setdefault(second, [])
    state = dict.fromkeys(graph, 0)

    def visit(node):
        state[node] = 1
        for nxt in graph[node]:
            if state[nxt] == 1 or (state[nxt] == 0 and visit(nxt)):
                return True
        state[node] = 2
        return False

    return any(state[node] == 0 and visit(node) for node in sorted(graph))


def validate(g, complete=True):
    """
    Returns every violated scene-graph invariant; an empty list means the graph is valid.

    Args:
        g (SceneGraph): The graph to check.
        complete (bool): Full prompts must be non-empty and name every color.
            Working graphs and step instructions pass complete=False.
    """
    violations = []
    count = len(g.objects)
    if count > MAX_OBJECTS or (complete and count == 0):
        violations.append(Violation("object-count", f"{count} objects, expected 1..{MAX_OBJECTS}"))
    for obj in g.sorted_objects():
        if obj.shape not in SHAPES:
            violations.append(Violation("unknown-vocabulary", f"shape {obj.shape!r}"))
        if obj.color is None:
            if complete:
                violations.append(Violation("missing-color", f"{obj.ref(indexed=True)} has no color"))
        elif obj.color not in COLORS:
            violations.append(Violation("unknown-vocabulary", f"color {obj.color!r}"))
        if not 1 <= obj.index <= MAX_INDEX:
            violations.append(Violation("bad-index", f"{obj.shape} index {obj.index}"))

    axis_edges = {"vertical": [], "horizontal": []}
    for edge in g.sorted_relations():
        if edge.relation not in RELATIONS:
            violations.append(Violation("unknown-vocabulary", f"relation {edge.relation!r}"))
            continue
        if edge.subject == edge.object:
            violations.append(
                Violation("self-relation", f"{edge}: identical object refs collide, disambiguate with #index")
            )
            continue
        if edge.subject not in g.objects or edge.object not in g.objects:
            violations.append(Violation("dangling-endpoint", f"{edge} names an absent object"))
            continue
        axis, first, second = edge.normalized()
        axis_edges[axis].append((first, second))

    for axis in ("vertical", "horizontal"):
        if _has_cycle(axis_edges[axis]):
            violations.append(Violation("axis-cycle", f"{axis} relations form a cycle"))
    return violations


def ensure_valid(g, complete=True):
    violations = validate(g, complete=complete)
    if violations:
        raise SceneValidationError(violations)
    return g


# --- DSL parsing ---
_TOKEN_RE = re.compile(r";|#|[^\s;#]+")


@dataclass(frozen=True)
class ObjRef:
    count: int | None
    color: str | None
    shape: str
    index: int | None
    position: int

    def node(self, index=None):
        return ObjectNode(self.shape, self.color, index or self.index or 1)


class DslParser:
    """Token-level recursive-descent parser shared by the scene DSL and the instruction mini-grammar."""

    def __init__(self, text):
        self.text = text
        self.tokens = [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(text)]
        self.pos = 0

    # --- Token helpers ---
    def peek(self):
        return self.tokens[self.pos][0] if self.pos < len(self.tokens) else None

    def position(self):
        return self.tokens[self.pos][1] if self.pos < len(self.tokens) else len(self.text)

    def at_end(self):
        return self.pos >= len(self.tokens)

    def advance(self):
        token = self.peek()
        self.pos += 1
        return token

    def fail(self, expected):
        raise DslSyntaxError(self.position(), expected, self.peek())

    def expect(self, word):
        if self.peek() != word:
            self.fail(repr(word))
        return self.advance()

    def expect_one_of(self, words, expected):
        if self.peek() not in words:
            self.fail(expected)
        return self.advance()

    # --- Grammar pieces ---
    def parse_objref(self, allow_count=True):
        start = self.position()
        count = None
        token = self.peek()
        if token is not None and token.isdigit():
            if not allow_count:
                self.fail("color or shape (counts are not allowed here)")
            count = int(self.advance())
            if not 1 <= count <= MAX_COUNT:
                violation = Violation("count-range", f"count {count} at position {start}, expected 1..{MAX_COUNT}")
                raise SceneValidationError([violation])
        color = None
        if self.peek() in COLORS:
            color = self.advance()
        shape = self.expect_one_of(SHAPES, "shape")
        index = None
        if self.peek() == "#":
            hash_position = self.position()
            self.advance()
            token = self.peek()
            if token is None or len(token) != 1 or token not in "123456789":
                self.fail("index digit 1-9")
            index = int(self.advance())
            if count is not None and count > 1:
                raise DslSyntaxError(hash_position, "no #index after a count", "#")
        return ObjRef(count, color, shape, index, start)

    def parse_relation(self):
        return self.expect_one_of(RELATIONS, "relation")

    def clause_end(self, expected="';' or end of input"):
        if self.at_end():
            return True
        if self.peek() == ";":
            self.advance()
            if self.at_end():
                self.fail("clause after ';'")
            return False
        self.fail(expected)


def parse_scene(text, complete=True):
    """
    Parses a scene DSL string into a validated SceneGraph.

    Counts expand to indices 1..n; repeated references to the same key name the same object.

    Raises:
        DslSyntaxError: The text does not follow the grammar.
        SceneValidationError: The parsed graph breaks an invariant.
    """
    parser = DslParser(text)
    if parser.at_end():
        parser.fail("object reference")
    objects = set()
    relations = set()
    while True:
        ref = parser.parse_objref()
        if parser.peek() in RELATIONS:
            if ref.count not in (None, 1):
                raise DslSyntaxError(ref.position, "a single object in a relation clause", str(ref.count))
            relation = parser.parse_relation()
            other = parser.parse_objref(allow_count=False)
            subject, obj = ref.node(), other.node()
            objects.update((subject, obj))
            relations.add(RelationEdge(subject, relation, obj))
        elif ref.count is not None and ref.index is None:
            objects.update(ref.node(i) for i in range(1, ref.count + 1))
        else:
            objects.add(ref.node())
        if parser.clause_end("';', relation or end of input"):
            break
    return ensure_valid(SceneGraph.build(objects, relations), complete=complete)


def print_scene(g):
    """
    Canonical DSL form of a graph.

    Objects that are not the subject of any relation are listed first in (shape, color, index)
    order, collapsing full 1..n runs into a count; relation clauses follow in sorted order.
    """
    siblings = Counter((o.shape, o.color) for o in g.objects)

    def ref(o):
        return o.ref(indexed=siblings[(o.shape, o.color)] > 1)

    subjects = {r.subject for r in g.relations}
    listed = [o for o in g.sorted_objects() if o not in subjects]
    clauses = []
    i = 0
    while i < len(listed):
        j = i
        while j < len(listed) and (listed[j].shape, listed[j].color) == (listed[i].shape, listed[i].color):
            j += 1
        group = listed[i:j]
        if 1 < len(group) <= MAX_COUNT and [o.index for o in group] == list(range(1, len(group) + 1)):
            clauses.append(f"{len(group)} {group[0].color} {group[0].shape}")
        else:
            clauses.extend(ref(o) for o in group)
        i = j
    clauses.extend(f"{ref(r.subject)} {r.relation} {ref(r.object)}" for r in g.sorted_relations())
    return "; ".join(clauses)
