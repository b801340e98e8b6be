import pytest
from conftest import scenes
from hypothesis import given, settings

from process_painter.errors import DslSyntaxError, SceneValidationError
from process_painter.scene_graph import (
    ObjectNode,
    RelationEdge,
    SceneGraph,
    parse_scene,
    print_scene,
    validate,
)

RED_CIRCLE = ObjectNode("circle", "red", 1)
BLUE_SQUARE = ObjectNode("square", "blue", 1)


def test_parse_two_object_clause(two_objects):
    assert two_objects.objects == {RED_CIRCLE, BLUE_SQUARE}
    assert two_objects.relations == {RelationEdge(RED_CIRCLE, "above", BLUE_SQUARE)}


def test_count_expands_to_indices():
    g = parse_scene("3 yellow triangle")
    assert sorted(o.index for o in g.objects) == [1, 2, 3]
    assert not g.relations


def test_identical_refs_collide():
    with pytest.raises(SceneValidationError) as e:
        parse_scene("red circle above red circle")
    assert e.value.violations[0].kind == "self-relation"
    assert len(parse_scene("red circle#1 above red circle#2").objects) == 2


def test_axis_cycle_is_rejected():
    with pytest.raises(SceneValidationError) as e:
        parse_scene("green star left-of green star#2; green star right-of green star#2")
    assert [v.kind for v in e.value.violations] == ["axis-cycle"]


def test_longer_cycle_is_rejected():
    with pytest.raises(SceneValidationError):
        parse_scene("red circle above blue square; blue square above green star; green star above red circle")


@pytest.mark.parametrize(
    "text, position",
    [
        ("red circle above", 16),
        ("red blob", 4),
        ("red circle;", 11),
        ("red circle #0", 12),
        ("2 red circle#2", 12),
    ],
)
def test_syntax_errors_carry_position(text, position):
    with pytest.raises(DslSyntaxError) as e:
        parse_scene(text)
    assert e.value.position == position


def test_count_range_and_object_limit():
    with pytest.raises(SceneValidationError):
        parse_scene("5 red circle")
    with pytest.raises(SceneValidationError):
        parse_scene("4 red circle; 4 blue circle; green star")


def test_missing_color_only_for_instructions():
    with pytest.raises(SceneValidationError):
        parse_scene("circle")
    g = parse_scene("circle", complete=False)
    assert g.objects == {ObjectNode("circle", None, 1)}


def test_print_is_canonical(two_objects):
    assert print_scene(two_objects) == "blue square; red circle above blue square"
    assert print_scene(parse_scene("3 yellow triangle")) == "3 yellow triangle"


def test_print_keeps_gaps_in_indices():
    g = SceneGraph.build([ObjectNode("star", "green", 1), ObjectNode("star", "green", 3)])
    assert print_scene(g) == "green star#1; green star#3"
    assert parse_scene(print_scene(g)) == g


def test_validate_reports_each_invariant():
    a, b = RED_CIRCLE, BLUE_SQUARE
    assert validate(SceneGraph.build([a, b], [RelationEdge(a, "above", b)])) == []
    dangling = SceneGraph.build([a], [RelationEdge(a, "above", b)])
    assert [v.kind for v in validate(dangling)] == ["dangling-endpoint"]
    cycle = SceneGraph.build([a, b], [RelationEdge(a, "above", b), RelationEdge(b, "above", a)])
    assert [v.kind for v in validate(cycle)] == ["axis-cycle"]
    assert [v.kind for v in validate(SceneGraph())] == ["object-count"]
    assert [v.kind for v in validate(SceneGraph.build([ObjectNode("blob", "red")]))] == ["unknown-vocabulary"]
    assert [v.kind for v in validate(SceneGraph.build([ObjectNode("star", "red", 0)]))] == ["bad-index"]
    nine = SceneGraph.build(ObjectNode("star", "red", i) for i in range(1, 10))
    assert [v.kind for v in validate(nine)] == ["object-count"]


def test_opposite_relations_on_one_axis_are_a_cycle():
    # below(a, b) normalizes to b-before-a, so with above(a, b) it closes a 2-cycle.
    a, b = RED_CIRCLE, BLUE_SQUARE
    g = SceneGraph.build([a, b], [RelationEdge(a, "above", b), RelationEdge(a, "below", b)])
    assert "axis-cycle" in [v.kind for v in validate(g)]


@settings(max_examples=200, deadline=None)
@given(scenes)
def test_round_trip(g):
    text = print_scene(g)
    assert parse_scene(text) == g
    assert print_scene(parse_scene(text)) == text
