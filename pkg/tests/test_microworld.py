import itertools
from collections import Counter

import numpy as np
import pytest
from conftest import scenes
from hypothesis import given, settings

from process_painter.edit_ops import AddObject, AddRelation, MoveObject, Step, SwapPositions
from process_painter.errors import LayoutInfeasibleError, MalformedImageError, PreconditionError
from process_painter.microworld import (
    CELLS,
    Canvas,
    FaultLabel,
    FaultModel,
    RasterImage,
    canvas_from_image,
    clean_probability,
    derender,
    edge_holds,
    fault_sites,
    inject_fault,
    layout,
    matches_scene,
    realized_faults,
    relation_holds,
    render,
    site_faults,
)
from process_painter.scene_graph import RELATIONS, ObjectNode, RelationEdge, SceneGraph, parse_scene
from process_painter.settings import FAULT_KINDS

A = ObjectNode("circle", "red", 1)
B = ObjectNode("square", "blue", 1)


def test_relations_are_strict():
    assert relation_holds("above", (0, 3), (1, 0))
    assert not relation_holds("above", (2, 0), (2, 5))
    assert relation_holds("left-of", (5, 0), (0, 1))
    assert not relation_holds("right-of", (1, 1), (1, 1))


def test_layout_is_first_in_row_major_order(two_objects):
    assert layout(two_objects) == {A: (0, 0), B: (1, 0)}


def test_layout_keeps_fixed_cells(two_objects):
    placement = layout(two_objects, fixed={B: (5, 5)})
    assert placement[B] == (5, 5)
    assert placement[A][0] < 5


def test_layout_can_violate_one_edge(two_objects):
    edge = RelationEdge(A, "above", B)
    placement = layout(two_objects, violate=edge)
    assert not edge_holds(edge, placement)


def test_layout_infeasible():
    with pytest.raises(LayoutInfeasibleError):
        layout(parse_scene("red circle above blue square"), fixed={A: (5, 0)})
    with pytest.raises(LayoutInfeasibleError):
        layout(parse_scene("red circle; blue square"), fixed={A: (0, 0), B: (0, 0)})


def test_layout_agrees_with_brute_force_on_small_graphs():
    objects = [A, B, ObjectNode("star", "green", 1)]
    pairs = list(itertools.combinations(objects, 2))
    small_cells = [c for c in CELLS if c[0] < 3 and c[1] < 3]
    for rels in itertools.product([None, *RELATIONS], repeat=len(pairs)):
        edges = [RelationEdge(a, r, b) for (a, b), r in zip(pairs, rels, strict=True) if r is not None]
        g = SceneGraph.build(objects, edges)
        feasible = any(
            all(edge_holds(e, dict(zip(objects, cells, strict=True))) for e in edges)
            for cells in itertools.permutations(small_cells, 3)
        )
        try:
            placement = layout(g)
        except LayoutInfeasibleError:
            assert not feasible
        else:
            assert feasible
            assert all(edge_holds(e, placement) for e in edges)


@settings(max_examples=100, deadline=None)
@given(scenes)
def test_layout_satisfies_every_relation(g):
    placement = layout(g)
    assert len(set(placement.values())) == len(placement)
    assert all(edge_holds(e, placement) for e in g.relations)
    assert matches_scene(render(placement, g), g)


def test_render_and_derender(two_objects):
    img = render(layout(two_objects), two_objects)
    assert img.occupied() == 2
    seen = derender(img)
    assert [(s.shape, s.color, s.cell) for s in seen] == [("circle", "red", (0, 0)), ("square", "blue", (1, 0))]
    assert RasterImage.from_list(img.to_list()) == img


def test_malformed_raster():
    cells = np.zeros((6, 6, 2), dtype=np.int64)
    cells[2, 3] = (1, 0)
    with pytest.raises(MalformedImageError) as e:
        derender(RasterImage(cells))
    assert (e.value.row, e.value.col) == (2, 3)
    with pytest.raises(MalformedImageError):
        RasterImage(np.zeros((5, 6, 2)))


def test_matches_scene_checks_relations(two_objects):
    good = render({A: (0, 0), B: (1, 0)}, two_objects)
    flat = render({A: (1, 0), B: (1, 1)}, two_objects)
    assert matches_scene(good, two_objects)
    assert not matches_scene(flat, two_objects)
    assert not matches_scene(RasterImage.blank(), two_objects)


def test_execute_keeps_earlier_placements(two_objects):
    canvas = Canvas().execute([AddObject(B)])
    assert canvas.placement == {B: (0, 0)}
    after = canvas.execute([AddObject(A), AddRelation(RelationEdge(A, "above", B))], lenient=True)
    # B cannot move, and nothing fits above row 0, so the relation-free fallback places A.
    assert after.placement[B] == (0, 0)
    assert after.graph == two_objects
    with pytest.raises(LayoutInfeasibleError):
        canvas.execute([AddObject(A), AddRelation(RelationEdge(A, "above", B))])
    released = canvas.execute([AddObject(A), AddRelation(RelationEdge(A, "above", B))], release=True)
    assert released.placement == {A: (0, 0), B: (1, 0)}


def test_swap_and_move():
    below = RelationEdge(A, "below", B)
    canvas = Canvas().execute([AddObject(A), AddObject(B), AddRelation(below)])
    assert canvas.placement == {A: (1, 0), B: (0, 0)}
    swapped = canvas.execute([SwapPositions(A, B)])
    assert swapped.placement == {A: (0, 0), B: (1, 0)}
    assert swapped.violated_edges() == [below]
    fixed = swapped.execute([MoveObject(A, "below", B)])
    assert not fixed.violated_edges()
    assert fixed.placement[B] == swapped.placement[B]


def test_canvas_from_image(two_objects):
    img = render({A: (0, 0), B: (1, 0)}, two_objects)
    canvas = canvas_from_image(img, two_objects)
    assert canvas.placement == {A: (0, 0), B: (1, 0)}
    with pytest.raises(PreconditionError):
        canvas_from_image(img, parse_scene("red circle"))
    with pytest.raises(PreconditionError):
        canvas_from_image(render({A: (2, 0), B: (1, 0)}, two_objects), two_objects)


def test_fault_model():
    model = FaultModel.uniform(0.5)
    assert model.fault_rate == pytest.approx(0.5)
    assert model.p("omission") == pytest.approx(0.1)
    assert FaultModel.clean().fault_rate == 0.0
    assert model.effective_rate([]) == 0.0
    only = FaultModel.only("duplicate")
    assert only.effective_rate(["omission"]) == 0.0
    assert only.effective_rate(["duplicate"]) == pytest.approx(1.0)


def test_fault_draws_per_site():
    rng = np.random.default_rng(0)
    object_site = site_faults(AddObject(A), "sketch")
    assert FaultModel.clean().draw(rng, object_site) == []
    assert FaultModel.only("relation-violation").draw(rng, object_site) == []
    assert FaultModel.only("omission").draw(rng, object_site) == ["omission"]
    assert FaultModel.uniform(0.01).draw(rng, ["wrong-color"], forced=True) == ["wrong-color"]
    assert sorted(FaultModel.uniform(1.0).draw(rng, object_site)) == sorted(object_site)


def test_site_faults():
    assert set(site_faults(AddObject(A), "sketch")) | {"relation-violation"} == set(FAULT_KINDS)
    assert site_faults(AddObject(A), "plan") == ["wrong-color", "wrong-shape", "duplicate"]
    assert site_faults(AddRelation(RelationEdge(A, "above", B)), "sketch") == ["relation-violation"]
    assert "duplicate" not in site_faults(AddObject(A), "sketch", room=False)


def _first_step(two_objects):
    ops = [AddObject(A), AddObject(B), AddRelation(RelationEdge(A, "above", B))]
    return Step.from_ops(ops, two_objects)


def test_clean_probability_multiplies_over_sites(two_objects):
    step = _first_step(two_objects)
    assert len(fault_sites(step)) == 3
    assert clean_probability(step, "sketch", FaultModel.uniform(0.3), Canvas()) == pytest.approx(0.7**3)
    assert clean_probability(step, "sketch", FaultModel.only("omission", 0.5), Canvas()) == pytest.approx(0.25)
    assert clean_probability(step, "plan", FaultModel.only("omission", 0.5), Canvas()) == 1.0


@pytest.mark.parametrize("kind", ["wrong-color", "wrong-shape", "omission", "duplicate", "relation-violation"])
def test_sketch_faults_change_the_drawing(kind, two_objects):
    step = _first_step(two_objects)
    outcome, labels = inject_fault(step, "sketch", 7, FaultModel.only(kind), Canvas(), two_objects)
    assert len(labels) == 3
    assert {label.kind for label in realized_faults(labels)} == {kind}
    drawn = Canvas().sketch(outcome).render()
    assert not matches_scene(drawn, two_objects)


@pytest.mark.parametrize("kind", ["wrong-color", "wrong-shape", "omission", "duplicate", "relation-violation"])
def test_single_mode_corrupts_one_site(kind, two_objects):
    step = _first_step(two_objects)
    for seed in range(10):
        _, labels = inject_fault(step, "sketch", seed, FaultModel.only(kind), Canvas(), two_objects, single=True)
        assert [label.kind for label in realized_faults(labels)] == [kind]


def test_every_site_draws_on_its_own(two_objects):
    step = _first_step(two_objects)
    counts = Counter()
    for seed in range(400):
        _, labels = inject_fault(step, "sketch", seed, FaultModel.uniform(0.5), Canvas(), two_objects)
        counts[len(realized_faults(labels))] += 1
    # Three sites at rate 0.5: more than one fault per step is common.
    assert counts[0] < 0.25 * 400
    assert counts[2] + counts[3] > 0.3 * 400


def test_clean_model_never_faults(two_objects):
    step = _first_step(two_objects)
    for seed in range(20):
        outcome, labels = inject_fault(step, "sketch", seed, FaultModel.clean(), Canvas(), two_objects)
        assert labels == (FaultLabel(),) * 3
        assert outcome.step == step


def test_a_duplicate_never_fills_an_omitted_look():
    second = ObjectNode("circle", "red", 2)
    step = Step.from_ops([AddObject(second)], SceneGraph.build([second], []))
    missing = SceneGraph.build([A], [])
    outcome, labels = inject_fault(step, "sketch", 3, FaultModel.only("duplicate"), Canvas(), intended=missing)
    assert labels == (FaultLabel(),)
    assert outcome.step == step
    _, labels = inject_fault(step, "sketch", 3, FaultModel.only("duplicate"), Canvas())
    assert [label.kind for label in labels] == ["duplicate"]


def test_an_unrealizable_kind_falls_back_to_the_next():
    second = ObjectNode("circle", "red", 2)
    step = Step.from_ops([AddObject(second)], SceneGraph.build([second], []))
    missing = SceneGraph.build([A], [])
    model = FaultModel.from_mapping({"duplicate": 0.5, "wrong-color": 0.5})
    for seed in range(10):
        _, labels = inject_fault(step, "sketch", seed, model, Canvas(), intended=missing)
        assert [label.kind for label in labels] == ["wrong-color"]


def test_fault_draws_are_seeded(two_objects):
    step = _first_step(two_objects)
    model = FaultModel.uniform(0.6)
    first = [inject_fault(step, "sketch", [s, 22, 0], model, Canvas(), two_objects)[1] for s in range(30)]
    again = [inject_fault(step, "sketch", [s, 22, 0], model, Canvas(), two_objects)[1] for s in range(30)]
    assert first == again


def test_plan_fault_needs_prompt(two_objects):
    with pytest.raises(PreconditionError):
        inject_fault(_first_step(two_objects), "plan", 0, FaultModel.only("wrong-color"), Canvas())
