import pytest

from process_painter.edit_ops import AddObject
from process_painter.errors import ConfigError, DslSyntaxError, PreconditionError
from process_painter.inspector import Critique, Finding
from process_painter.microworld import Canvas, FaultModel, matches_scene
from process_painter.orchestrator import (
    RunConfig,
    Segment,
    clean_trajectory,
    refine_round,
    run_trajectory,
    single_pass,
    validate_segments,
)
from process_painter.scene_graph import ObjectNode, parse_scene

PROMPT = "red circle above blue square"
A = ObjectNode("circle", "red", 1)


def codes(trajectory):
    return "".join(s.code for s in trajectory.segments)


def test_clean_run_alternates_plans_and_sketches():
    trajectory = run_trajectory(PROMPT, RunConfig(seed=7, k_hint=2))
    assert codes(trajectory) == "PVPV"
    assert trajectory.success
    assert trajectory.meta["steps"] == 2
    assert trajectory.meta["refine_rounds"] == [0, 0]
    assert trajectory.final_image == trajectory.images()[-1]
    assert matches_scene(trajectory.final_image, parse_scene(PROMPT))


def test_plan_segments_describe_the_scene_so_far():
    trajectory = clean_trajectory(PROMPT, seed=1, k_hint=3)
    plans = [s for s in trajectory.segments if s.kind == "plan"]
    assert len(plans) == 3
    assert plans[-1].des_text == "blue square; red circle above blue square"


def test_clean_inspects_can_close_steps():
    trajectory = run_trajectory(PROMPT, RunConfig(seed=7, k_hint=2, emit_clean_inspect=True))
    assert codes(trajectory) == "PVIPV"
    assert validate_segments(trajectory.segments)


def test_sketch_faults_are_refined_away():
    prompts = ["red circle above blue square", "2 green star; yellow cross left-of green star#1", "purple diamond"]
    results = []
    for seed in range(20):
        cfg = RunConfig(sketch_faults=FaultModel.uniform(0.5), seed=seed)
        for prompt in prompts:
            trajectory = run_trajectory(prompt, cfg)
            assert validate_segments(trajectory.segments)
            assert max(trajectory.meta["refine_rounds"]) <= 3
            results.append(trajectory.success)
    assert sum(results) >= 0.9 * len(results)


def test_one_wrong_color_on_the_second_step_takes_one_refine():
    found = 0
    for seed in range(40):
        cfg = RunConfig(sketch_faults=FaultModel.only("wrong-color", 0.5), seed=seed, k_hint=2)
        trajectory = run_trajectory("red circle; blue square", cfg)
        kinds = [[f["kind"] for f in label["sketch"]] for label in trajectory.meta["fault_labels"]]
        if kinds != [[], ["wrong-color"]]:
            continue
        found += 1
        assert codes(trajectory).count("R") == 1
        assert codes(trajectory).endswith("VIRV")
        assert trajectory.success
    assert found > 0


def test_without_refinement_the_run_equals_one_pass():
    for seed in range(10):
        cfg = RunConfig(sketch_faults=FaultModel.uniform(0.5), max_refine_rounds=0, seed=seed)
        trajectory = run_trajectory(PROMPT, cfg)
        assert "R" not in codes(trajectory)
        assert trajectory.final_image == single_pass(PROMPT, cfg)


def test_conflicting_plans_are_refined_before_the_sketch():
    cfg = RunConfig(plan_faults=FaultModel.only("wrong-color"), seed=4)
    trajectory = run_trajectory("red circle; blue square", cfg)
    assert codes(trajectory) == "PIRVPIRV"
    assert trajectory.success
    first_inspect = trajectory.segments[1]
    assert first_inspect.text.startswith("conflict: wrong-color")
    assert trajectory.segments[2].text.startswith("change ")


def test_conflicting_plans_can_be_repaired_after_the_sketch():
    cfg = RunConfig(plan_faults=FaultModel.only("wrong-color"), inspect_plan_before_sketch=False, seed=4)
    trajectory = run_trajectory("red circle; blue square", cfg)
    assert codes(trajectory) == "PVIRVPVIRV"
    assert trajectory.success


def test_editing_an_existing_image():
    initial = Canvas().execute([AddObject(A)]).render()
    trajectory = run_trajectory("red circle left-of blue square", RunConfig(seed=3), initial=initial)
    assert trajectory.initial_image == initial
    assert trajectory.success
    assert codes(trajectory) == "PVPV"


def test_invalid_prompt():
    with pytest.raises(DslSyntaxError):
        run_trajectory("red blob", RunConfig())


def test_refine_round_needs_a_script():
    critique = Critique.build([Finding("omission", "red circle#1", "nothing")], ())
    with pytest.raises(PreconditionError):
        refine_round(Canvas(), critique)


def test_segment_shapes():
    with pytest.raises(ValueError):
        Segment("plan", ins_text="add red circle")
    with pytest.raises(ValueError):
        Segment("vision")
    with pytest.raises(ValueError):
        Segment("sketch")
    assert not validate_segments([Segment.vision(Canvas().render())])


def test_run_config(settings):
    with pytest.raises(ConfigError):
        RunConfig(max_refine_rounds=-1)
    with pytest.raises(ConfigError):
        RunConfig(augmentation_ratio=1.5)
    cfg = RunConfig.from_settings(settings, seed=9)
    assert cfg.seed == 9
    assert cfg.sketch_faults.fault_rate == pytest.approx(0.3)
    assert cfg.augmentation_ratio == pytest.approx(0.1)
    settings["augmentation"]["enabled"] = False
    assert RunConfig.from_settings(settings).augmentation_ratio == 0.0
