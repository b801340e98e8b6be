# process_painter/orchestrator.py

import re
from dataclasses import dataclass, field, replace

from .errors import ConfigError, LayoutInfeasibleError, PreconditionError, SceneValidationError, UnresolvedKeyError
from .inspector import CONSISTENT_COMPLETE, Verdict, check_text_conflict, matches_scene, observe
from .judge import judge_request
from .logger import log
from .microworld import Canvas, FaultModel, canvas_from_image, inject_fault, realized_faults
from .planner import MAX_STEPS, augment_program, subsample_chain, synthesize_program
from .scene_graph import SceneGraph, parse_scene

SEGMENT_KINDS = ("plan", "inspect", "refine", "vision")
_CODES = {"plan": "P", "inspect": "I", "refine": "R", "vision": "V"}

# Plan, then a drawn sketch, then any number of inspect/refine/redraw rounds; a clean inspect may
# close a step. Conflicting plans are refined before their sketch.
SEGMENT_PATTERN = re.compile(r"^(P(IR)?V(IRV)*I?)+$")

# Seed stream ids for the per-step fault draws.
PLAN_STREAM = 21
SKETCH_STREAM = 22

_REFINE_ERRORS = (UnresolvedKeyError, SceneValidationError, LayoutInfeasibleError)


# --- Types ---
@dataclass(frozen=True)
class Segment:
    kind: str
    ins_text: str = ""
    des_text: str = ""
    text: str = ""
    image: object = None
    verdict: Verdict | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.kind == "plan" and not (self.ins_text and self.des_text):
            raise ValueError("plan segments carry both <ins> and <des> text")
        if self.kind == "vision" and self.image is None:
            raise ValueError("vision segments carry exactly one image")
        if self.kind in ("inspect", "refine") and not self.text:
            raise ValueError(f"{self.kind} segments carry text")

    @classmethod
    def plan(cls, step):
        return cls("plan", ins_text=step.ins_text, des_text=step.des_text)

    @classmethod
    def vision(cls, img):
        return cls("vision", image=img)

    @classmethod
    def inspect(cls, verdict):
        return cls("inspect", text=describe_verdict(verdict), verdict=verdict)

    @classmethod
    def refine(cls, critique):
        return cls("refine", text=critique.rendered_text)

    @property
    def code(self):
        return _CODES[self.kind]


@dataclass(frozen=True)
class Trajectory:
    prompt: str
    segments: tuple
    final_image: object
    initial_image: object = None
    meta: dict = field(default_factory=dict)

    @property
    def success(self):
        return self.meta.get("success", False)

    def images(self):
        return [s.image for s in self.segments if s.kind == "vision"]


@dataclass(frozen=True)
class RunConfig:
    sketch_faults: FaultModel = field(default_factory=FaultModel.clean)
    plan_faults: FaultModel = field(default_factory=FaultModel.clean)
    max_refine_rounds: int = 3
    k_hint: int | None = None
    augmentation_ratio: float = 0.0
    augmentation_max_steps: int = MAX_STEPS
    seed: int = 0
    inspect_text: bool = True
    inspect_image: bool = True
    inspect_plan_before_sketch: bool = True
    emit_clean_inspect: bool = False

    def __post_init__(self):
        if self.max_refine_rounds < 0:
            raise ConfigError(f"max_refine_rounds must be >= 0, got {self.max_refine_rounds}")
        if not 0.0 <= self.augmentation_ratio <= 1.0:
            raise ConfigError(f"augmentation ratio must lie in [0, 1], got {self.augmentation_ratio}")

    @classmethod
    def from_settings(cls, settings, **overrides):
        run = settings["run"]
        augmentation = settings["augmentation"]
        cfg = cls(
            sketch_faults=FaultModel.from_mapping(settings["faults"]["sketch"]),
            plan_faults=FaultModel.from_mapping(settings["faults"]["plan"]),
            max_refine_rounds=run["max_refine_rounds"],
            k_hint=run["k_hint"],
            augmentation_ratio=augmentation["ratio"] if augmentation["enabled"] else 0.0,
            augmentation_max_steps=augmentation["max_steps"],
            seed=settings["seed"],
            inspect_text=run["inspect_text"],
            inspect_image=run["inspect_image"],
            inspect_plan_before_sketch=run["inspect_plan_before_sketch"],
            emit_clean_inspect=run["emit_clean_inspect"],
        )
        return replace(cfg, **overrides)


def describe_verdict(verdict):
    """Inspect-segment text: the status, then one clause per finding."""
    if verdict.critique is None:
        return verdict.status
    clauses = [f"{f.kind} expected {f.expected} found {f.observed}" for f in verdict.critique.analysis]
    return f"{verdict.status}: " + "; ".join(clauses)


def validate_segments(segments):
    """True when the segment kinds follow the cycle grammar and the last one is an image."""
    codes = "".join(s.code for s in segments)
    return bool(SEGMENT_PATTERN.match(codes)) and codes.endswith("V")


# --- Planning ---
def _start_canvas(full, initial):
    if initial is None:
        return Canvas()
    return canvas_from_image(initial, full)


def plan_program(full, cfg, start=None):
    """Chain, lowered program, and (optionally) its augmented rewrite for one prompt."""
    start = start or Canvas()
    chain = subsample_chain(full, cfg.seed, cfg.k_hint, start)
    program = synthesize_program(chain)
    if cfg.augmentation_ratio > 0:
        program = augment_program(
            program, cfg.seed, cfg.augmentation_ratio, max_steps=cfg.augmentation_max_steps, start=start
        )
    return program


def _transient(graph, full):
    extra = graph.objects - full.objects
    return SceneGraph.build(extra, (e for e in graph.relations if e.subject in extra or e.object in extra))


def _reserved(program, full):
    keys = set(full.objects)
    for g in program.graphs():
        keys |= g.objects
    return frozenset(keys)


def _sketch_step(canvas, step, i, cfg, full, reserved, intended):
    """Draws one step with its seeded sketch faults and keys the draft against the step."""
    seed = [cfg.seed, SKETCH_STREAM, i]
    outcome, labels = inject_fault(step, "sketch", seed, cfg.sketch_faults, canvas, full, reserved, intended)
    img = canvas.sketch(outcome).render()
    faults = realized_faults(labels)
    for label in faults:
        log.debug(f"ORCHESTRATOR: Step {i} sketched with {label.kind} on {label.target}.")
    return img, observe(canvas, img, step, reserved), faults


# --- Refinement ---
def refine_round(canvas, critique, lenient=False):
    """
    Applies a critique's corrective script to the drawn state and redraws it.
    Objects the script names may be moved off their cells when the fix cannot fit around them.

    Returns:
        tuple: (new Canvas, [refine Segment, vision Segment]).

    Raises:
        PreconditionError: The critique has nothing to apply.
        UnresolvedKeyError: A corrective op names an object the state does not have.
    """
    if not critique.corrective:
        raise PreconditionError("refine round needs a non-empty corrective script")
    fixed = canvas.execute(critique.corrective, lenient=lenient, release=True)
    return fixed, [Segment.refine(critique), Segment.vision(fixed.render())]


# --- Runs ---
def _check_plan(planned, full, transient, judge, prompt):
    if judge is not None and not transient.objects:
        return judge.judge(judge_request(prompt, planned.ins_text, planned.des_text))
    return check_text_conflict(planned.ins_text, planned.des_text, full, transient)


def run_trajectory(prompt, cfg, initial=None, judge=None):
    """
    Runs the plan, sketch, inspect and refine cycle over one prompt.

    Each step's plan may be corrupted (plan fault model) and its sketch may be corrupted (sketch
    fault model), both from seeds derived from cfg.seed and the step index. Conflicting plans are
    repaired before sketching; misaligned drafts get up to cfg.max_refine_rounds corrective
    redraws. A trajectory that still misses the prompt comes back with success=False.

    Args:
        prompt (str): The scene in the DSL.
        cfg (RunConfig): Fault models, limits and switches.
        initial (RasterImage): Optional starting image (editing mode).
        judge: Optional judge used for plan checks; the exact inspector otherwise.

    Raises:
        DslSyntaxError, SceneValidationError: The prompt is not a valid scene.
        ChainInfeasibleError, LayoutInfeasibleError: The scene cannot be planned or placed.
    """
    full = parse_scene(prompt)
    canvas = _start_canvas(full, initial)
    program = plan_program(full, cfg, canvas)
    reserved = _reserved(program, full)
    graphs = [program.base, *program.graphs()]

    segments = []
    rounds_used = []
    labels = []
    unresolved = 0
    for i, step in enumerate(program.steps):
        last = i == len(program.steps) - 1
        transient = _transient(graphs[i + 1], full)

        # Plan
        outcome, plan_labels = inject_fault(
            step, "plan", [cfg.seed, PLAN_STREAM, i], cfg.plan_faults, Canvas(graphs[i]), full, reserved
        )
        planned = outcome.step
        segments.append(Segment.plan(planned))
        conflict = None
        if cfg.inspect_text:
            verdict = _check_plan(planned, full, transient, judge, prompt)
            conflict = verdict if verdict.critique is not None else None
        drawn_step = planned
        if conflict is not None and cfg.inspect_plan_before_sketch:
            segments += [Segment.inspect(conflict), Segment.refine(conflict.critique)]
            drawn_step = step

        # Sketch
        img, observed, sketch_faults = _sketch_step(canvas, drawn_step, i, cfg, full, reserved, graphs[i])
        segments.append(Segment.vision(img))
        if conflict is not None and not cfg.inspect_plan_before_sketch:
            segments.append(Segment.inspect(conflict))
            try:
                fixed, refined = refine_round(observed.canvas, conflict.critique, lenient=True)
            except _REFINE_ERRORS as e:
                log.warning(f"ORCHESTRATOR: Plan correction at step {i} did not apply: {e}")
                segments.pop()
            else:
                segments += refined
                drawn_step = step
                observed = observe(canvas, fixed.render(), step, reserved)

        # Inspect and refine
        rounds = 0
        while cfg.inspect_image and not observed.aligned and rounds < cfg.max_refine_rounds:
            verdict = observed.verdict()
            segments.append(Segment.inspect(verdict))
            try:
                fixed, refined = refine_round(observed.canvas, verdict.critique)
            except _REFINE_ERRORS as e:
                log.warning(f"ORCHESTRATOR: Corrective at step {i} did not resolve: {e}")
                segments.pop()
                break
            segments += refined
            rounds += 1
            observed = observe(canvas, fixed.render(), drawn_step, reserved)
        if not observed.aligned:
            unresolved += 1
        elif cfg.emit_clean_inspect and not last:
            segments.append(Segment.inspect(Verdict(CONSISTENT_COMPLETE)))

        canvas = observed.canvas
        rounds_used.append(rounds)
        labels.append(
            {
                "plan": [label.to_dict() for label in realized_faults(plan_labels)],
                "sketch": [label.to_dict() for label in sketch_faults],
            }
        )

    final_image = segments[-1].image
    success = matches_scene(final_image, full)
    meta = {
        "seed": cfg.seed,
        "steps": len(program.steps),
        "refine_rounds": rounds_used,
        "fault_labels": labels,
        "unresolved_steps": unresolved,
        "success": success,
    }
    log.debug(f"ORCHESTRATOR: Seed {cfg.seed}: {len(segments)} segments, success={success}.")
    return Trajectory(prompt, tuple(segments), final_image, initial, meta)


def single_pass(prompt, cfg, initial=None):
    """
    The baseline: the whole program drawn in one go, every site with its seeded sketch fault draw,
    and no inspection or refinement. Plan faults do not apply.
    """
    full = parse_scene(prompt)
    canvas = _start_canvas(full, initial)
    program = plan_program(full, cfg, canvas)
    reserved = _reserved(program, full)
    graphs = [program.base, *program.graphs()]
    img = canvas.render()
    for i, step in enumerate(program.steps):
        img, observed, _ = _sketch_step(canvas, step, i, cfg, full, reserved, graphs[i])
        canvas = observed.canvas
    return img


def clean_trajectory(prompt, seed=0, k_hint=None, augmentation_ratio=0.0, initial=None):
    """Fault-free run; the source of multi-turn training records."""
    cfg = RunConfig(seed=seed, k_hint=k_hint, augmentation_ratio=augmentation_ratio)
    return run_trajectory(prompt, cfg, initial)
