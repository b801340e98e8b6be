from collections import Counter

import numpy as np
import pytest

from process_painter.edit_ops import AddObject, AddRelation, ModifyAttribute, MoveObject, RemoveObject, Step
from process_painter.errors import LayoutInfeasibleError, PreconditionError
from process_painter.inspector import (
    CONFLICT,
    CONSISTENT_COMPLETE,
    CONSISTENT_INCOMPLETE,
    MISALIGNED,
    Critique,
    Finding,
    Verdict,
    check_image_alignment,
    check_text_conflict,
    observe,
)
from process_painter.microworld import Canvas, FaultModel, inject_fault, matches_scene, realized_faults
from process_painter.orchestrator import RunConfig, plan_program
from process_painter.planner import sample_scene
from process_painter.scene_graph import ObjectNode, RelationEdge, parse_scene

A = ObjectNode("circle", "red", 1)
B = ObjectNode("square", "blue", 1)
FAULTS = ["wrong-color", "wrong-shape", "omission", "duplicate", "relation-violation"]


# --- Text conflicts ---
def test_partial_description_is_incomplete(two_objects):
    verdict = check_text_conflict("add red circle", "red circle", two_objects)
    assert verdict == Verdict(CONSISTENT_INCOMPLETE)


def test_full_description_is_complete(two_objects):
    verdict = check_text_conflict(
        "add blue square; place red circle above blue square", "blue square; red circle above blue square", two_objects
    )
    assert verdict.status == CONSISTENT_COMPLETE
    assert verdict.is_clean


def test_wrong_color_in_text(two_objects):
    verdict = check_text_conflict("add green circle", "green circle", two_objects)
    assert verdict.status == CONFLICT
    assert verdict.critique.analysis == (Finding("wrong-color", "red circle#1", "green circle#1"),)
    assert verdict.critique.corrective == (ModifyAttribute(ObjectNode("circle", "green", 1), "red"),)
    assert verdict.critique.rendered_text == "change green circle color to red"


def test_relation_on_the_wrong_side(two_objects):
    verdict = check_text_conflict(
        "add blue square; place red circle below blue square", "blue square; red circle below blue square", two_objects
    )
    assert verdict.critique.kind == "relation-violation"
    assert verdict.critique.corrective == (MoveObject(A, "above", B),)


def test_object_with_no_counterpart_is_a_duplicate(two_objects):
    verdict = check_text_conflict("add red circle#2", "2 red circle", two_objects)
    assert verdict.critique.kind == "duplicate"
    assert verdict.critique.corrective == (RemoveObject(ObjectNode("circle", "red", 2)),)


def test_transient_facts_are_tolerated(two_objects):
    decoy = parse_scene("green star", complete=False)
    verdict = check_text_conflict("add green star", "green star; red circle", two_objects, transient=decoy)
    assert verdict.status == CONSISTENT_INCOMPLETE


def test_findings_are_ranked():
    findings = [Finding("duplicate", "nothing", "x"), Finding("wrong-color", "a", "b")]
    critique = Critique.build(findings, ())
    assert [f.kind for f in critique.analysis] == ["wrong-color", "duplicate"]
    assert critique.to_dict()["kind"] == "wrong-color"


def test_verdict_status_and_critique_must_agree():
    with pytest.raises(ValueError):
        Verdict(CONFLICT)
    with pytest.raises(ValueError):
        Verdict(CONSISTENT_COMPLETE, Critique.build([Finding("omission", "a", "nothing")], ()))


# --- Image alignment ---
def _first_step(full):
    ops = [AddObject(A), AddObject(B), AddRelation(RelationEdge(A, "above", B))]
    return Step.from_ops(ops, full)


def test_clean_draft_is_aligned(two_objects):
    step = _first_step(two_objects)
    img = Canvas().execute(step.ops).render()
    observation = observe(Canvas(), img, step)
    assert observation.aligned
    assert observation.verdict() == Verdict(CONSISTENT_COMPLETE)
    assert check_image_alignment(Canvas().render(), img, step).is_clean


@pytest.mark.parametrize("kind", FAULTS)
def test_each_fault_is_detected_and_fixed_in_one_round(kind, two_objects):
    step = _first_step(two_objects)
    outcome, labels = inject_fault(step, "sketch", 11, FaultModel.only(kind), Canvas(), two_objects, single=True)
    [label] = realized_faults(labels)
    assert label.kind == kind
    img = Canvas().sketch(outcome).render()
    observation = observe(Canvas(), img, step, frozenset(two_objects.objects))
    verdict = observation.verdict()
    assert verdict.status == MISALIGNED
    assert verdict.critique.kind == kind
    fixed = observation.canvas.execute(verdict.critique.corrective, release=True)
    assert matches_scene(fixed.render(), two_objects)
    assert observe(Canvas(), fixed.render(), step).aligned


def test_faults_on_sampled_scenes_are_named_and_fixed_in_one_round():
    kinds = Counter()
    fixed_in_one = 0
    for seed in range(150):
        full = sample_scene(np.random.default_rng([seed, 5]))
        program = plan_program(full, RunConfig(seed=seed))
        canvas = Canvas()
        reserved = frozenset(full.objects)
        for i, step in enumerate(program.steps):
            clean_img = canvas.execute(step.ops).render()
            clean = observe(canvas, clean_img, step, reserved)
            assert clean.aligned
            outcome, labels = inject_fault(
                step, "sketch", [seed, i], FaultModel.uniform(1.0), canvas, full, reserved, single=True
            )
            for label in realized_faults(labels):
                kinds[label.kind] += 1
                faulty = observe(canvas, canvas.sketch(outcome).render(), step, reserved)
                verdict = faulty.verdict()
                assert verdict.status == MISALIGNED
                assert verdict.critique.kind == label.kind
                try:
                    fixed = faulty.canvas.execute(verdict.critique.corrective, release=True)
                except LayoutInfeasibleError:
                    continue
                fixed_in_one += observe(canvas, fixed.render(), step, reserved).aligned
            canvas = clean.canvas
    assert set(kinds) == set(FAULTS)
    assert fixed_in_one >= 0.97 * sum(kinds.values())


def test_keyed_state_must_match_before_image(two_objects):
    step = _first_step(two_objects)
    canvas = Canvas().execute([AddObject(A)])
    with pytest.raises(PreconditionError):
        check_image_alignment(Canvas().render(), canvas.render(), step, canvas=canvas)
