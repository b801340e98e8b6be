import json
import os

import pytest

from process_painter.errors import PreconditionError
from process_painter.evalharness import (
    CATEGORIES,
    build_suite,
    compare_modes,
    expected_single_pass,
    format_report,
    score,
    sweep,
    write_report,
)
from process_painter.microworld import FaultModel, layout, render
from process_painter.scene_graph import RELATIONS, ObjectNode, SceneGraph, parse_scene
from process_painter.task_runner import TaskRunner


@pytest.fixture
def runner():
    return TaskRunner(1, progress=False)


def test_suites_fit_their_category():
    for category in CATEGORIES:
        suite = build_suite(category, 12, 5)
        assert len(suite) == 12
        assert suite == build_suite(category, 12, 5)
        for i, prompt in enumerate(suite.prompts):
            g = parse_scene(prompt)
            shapes = {o.shape for o in g.objects}
            colors = {o.color for o in g.objects}
            if category in ("single-object", "colors"):
                assert len(g.objects) == 1
            elif category == "counting":
                assert 2 <= len(g.objects) <= 4
                assert len(shapes) == len(colors) == 1
            elif category == "composite":
                assert len(g.objects) == len(shapes) == len(colors) == 4
            else:
                assert len(g.objects) == len(shapes) == 2
            if category == "color-attributes":
                assert len(colors) == 2
            if category == "position":
                [edge] = g.relations
                assert edge.relation == RELATIONS[i % len(RELATIONS)]
            else:
                assert not g.relations


def test_suite_preconditions():
    with pytest.raises(PreconditionError):
        build_suite("texture", 3, 0)
    with pytest.raises(PreconditionError):
        build_suite("counting", 0, 0)


def test_clean_renders_score():
    for category in CATEGORIES:
        for prompt in build_suite(category, 8, 1).prompts:
            g = parse_scene(prompt)
            assert score(category, prompt, render(layout(g), g))


def test_wrong_renders_fail():
    prompt = "3 red star"
    two = SceneGraph.build([ObjectNode("star", "red", 1), ObjectNode("star", "red", 2)])
    assert not score("counting", prompt, render(layout(two), two))
    recolored = parse_scene("blue circle; red square")
    assert not score("color-attributes", "red circle; blue square", render(layout(recolored), recolored))
    prompt = "red circle above blue square"
    flipped = parse_scene("red circle below blue square")
    assert not score("position", prompt, render(layout(flipped), flipped))


def test_closed_form_single_pass():
    prompt = "red circle above blue square"
    assert expected_single_pass(prompt, FaultModel.clean(), 0) == 1.0
    # One draw per added object and per added relation, however the program splits them into steps.
    assert expected_single_pass(prompt, FaultModel.uniform(0.3), 0) == pytest.approx(0.7**3)
    assert expected_single_pass(prompt, FaultModel.only("omission", 0.3), 0) == pytest.approx(0.7**2)
    four = "red circle; blue square; green star; yellow cross"
    for seed in range(5):
        assert expected_single_pass(four, FaultModel.uniform(0.3), seed) == pytest.approx(0.2401)


def test_composite_report_carries_the_closed_form(tiny_settings, runner):
    tiny_settings["eval"]["categories"] = ["composite"]
    table = compare_modes(tiny_settings, 0.3, runner)
    [row] = table.rows
    assert row.category == "composite"
    assert row.expected_single_pass == pytest.approx(0.2401)
    assert table.overall_expected_single_pass == pytest.approx(0.2401)
    assert "0.2401" in format_report([table])


def test_no_faults_means_perfect_scores(tiny_settings, runner):
    table = compare_modes(tiny_settings, 0.0, runner)
    assert [row.category for row in table.rows] == list(CATEGORIES)
    assert table.overall_process == table.overall_single_pass == 1.0
    assert table.mean_refines == 0.0
    assert all(row.n == 4 and row.expected_single_pass == 1.0 for row in table.rows)


def test_refinement_never_loses_to_one_pass(tiny_settings, runner):
    tiny_settings["eval"]["n"] = 10
    table = compare_modes(tiny_settings, 0.5, runner, seed=3)
    for row in table.rows:
        assert row.process >= row.single_pass
    assert table.mean_refines > 0


def test_reports(tmp_path, tiny_settings, runner):
    tiny_settings["eval"]["categories"] = ["single-object", "position"]
    tables = sweep(tiny_settings, [0.0, 0.3], runner)
    assert [t.fault_rate for t in tables] == [0.0, 0.3]
    json_path, text_path = write_report(tables, str(tmp_path))
    with open(json_path, encoding="utf-8") as f:
        data = json.load(f)
    assert [t["fault_rate"] for t in data] == [0.0, 0.3]
    assert data[0]["rows"][1]["category"] == "position"
    assert os.path.getsize(text_path) > 0
    assert "fault rate 0.3, R=3" in format_report(tables)
