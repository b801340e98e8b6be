# process_painter/evalharness.py

import json
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np

from .errors import PreconditionError, ProcessPainterError
from .logger import log
from .microworld import Canvas, FaultModel, clean_probability, derender, edge_holds, matches_scene
from .orchestrator import RunConfig, plan_program, run_trajectory, single_pass
from .scene_graph import COLORS, RELATIONS, SHAPES, ObjectNode, RelationEdge, SceneGraph, parse_scene, print_scene
from .task_runner import TaskRunner

CATEGORIES = ("single-object", "two-objects", "counting", "colors", "position", "color-attributes", "composite")

# Objects in a composite prompt: four distinct shapes, so four sites and no relations.
COMPOSITE_OBJECTS = 4

# Mean reasoning steps per image reported for the full-scale model; shown for context only.
REFERENCE_STEPS = 2.62

REPORT_JSON = "eval_report.json"
REPORT_TEXT = "eval_report.txt"


# --- Suites ---
@dataclass(frozen=True)
class CategorySuite:
    category: str
    prompts: tuple
    seed: int

    def __len__(self):
        return len(self.prompts)


def _pick(rng, values, k):
    return [values[int(i)] for i in rng.choice(len(values), size=k, replace=False)]


def _category_scene(category, i, rng):
    if category in ("single-object", "colors"):
        return SceneGraph.build([ObjectNode(_pick(rng, SHAPES, 1)[0], _pick(rng, COLORS, 1)[0])])
    if category == "counting":
        shape, color = _pick(rng, SHAPES, 1)[0], _pick(rng, COLORS, 1)[0]
        count = int(rng.integers(2, 5))
        return SceneGraph.build(ObjectNode(shape, color, n) for n in range(1, count + 1))
    if category == "composite":
        shapes, colors = _pick(rng, SHAPES, COMPOSITE_OBJECTS), _pick(rng, COLORS, COMPOSITE_OBJECTS)
        return SceneGraph.build(ObjectNode(s, c) for s, c in zip(shapes, colors, strict=True))
    first, second = _pick(rng, SHAPES, 2)
    if category == "color-attributes":
        a, b = _pick(rng, COLORS, 2)
    else:
        a, b = _pick(rng, COLORS, 1)[0], _pick(rng, COLORS, 1)[0]
    objects = [ObjectNode(first, a), ObjectNode(second, b)]
    if category == "position":
        return SceneGraph.build(objects, [RelationEdge(objects[0], RELATIONS[i % len(RELATIONS)], objects[1])])
    return SceneGraph.build(objects)


def build_suite(category, n, seed):
    """
    n deterministic prompts exercising one category.

    Position prompts cycle through the four relations; color-attributes prompts bind two distinct
    colors to two differently shaped objects. Composite prompts hold four differently shaped objects,
    four fault sites that only an exact match survives.
    """
    if category not in CATEGORIES:
        raise PreconditionError(f"unknown category {category!r}")
    if n < 1:
        raise PreconditionError(f"suite size must be >= 1, got {n}")
    c = CATEGORIES.index(category)
    prompts = tuple(print_scene(_category_scene(category, i, np.random.default_rng([seed, c, i]))) for i in range(n))
    return CategorySuite(category, prompts, seed)


def prompt_seed(seed, category, i):
    """The run seed for prompt i of a suite, shared by both modes."""
    return int(np.random.SeedSequence([seed, CATEGORIES.index(category), i]).generate_state(1)[0])


# --- Scoring ---
def _object_counts(seen):
    return Counter((o.shape, o.color) for o in seen)


def score(category, prompt, img):
    """
    Exact checker for one final image.

    Every category needs the drawn objects to be the prompt's objects; counting also checks the
    instance count, color categories the color of each shape, and position every stated relation
    under the strict single-axis rule.
    """
    g = parse_scene(prompt)
    seen = derender(img)
    wanted = Counter((o.shape, o.color) for o in g.objects)
    if category == "counting":
        [(key, count)] = wanted.items()
        return sum(1 for o in seen if (o.shape, o.color) == key) == count and len(seen) == count
    if category in ("colors", "color-attributes"):
        for shape in {o.shape for o in g.objects}:
            drawn = sorted(o.color for o in seen if o.shape == shape)
            if drawn != sorted(o.color for o in g.objects if o.shape == shape):
                return False
        return len(seen) == len(g.objects)
    if category == "position":
        if _object_counts(seen) != wanted:
            return False
        cells = {(o.shape, o.color): o.cell for o in seen}
        if len(cells) == len(seen):
            placement = {o: cells[(o.shape, o.color)] for o in g.objects}
            return all(edge_holds(edge, placement) for edge in g.relations)
        return matches_scene(img, g)
    return _object_counts(seen) == wanted


def expected_single_pass(prompt, model, seed):
    """
    Closed-form single-pass accuracy: the chance that no fault site of the planned program draws a
    fault, the product over its added objects and relations of (1 - effective fault rate).
    A four-site prompt at p=0.3 gives 0.7**4 = 0.2401.
    """
    full = parse_scene(prompt)
    program = plan_program(full, RunConfig(seed=seed))
    p = 1.0
    for step, graph in zip(program.steps, [program.base, *program.graphs()], strict=False):
        p *= clean_probability(step, "sketch", model, Canvas(graph))
    return p


# --- Per-prompt evaluation (module level so it pickles) ---
def _evaluate_prompt(category, prompts, rate, max_refine_rounds, seed, i):
    prompt = prompts[i]
    run_seed = prompt_seed(seed, category, i)
    model = FaultModel.uniform(rate)
    cfg = RunConfig(sketch_faults=model, max_refine_rounds=max_refine_rounds, seed=run_seed)
    try:
        t = run_trajectory(prompt, cfg)
        baseline = single_pass(prompt, cfg)
        expected = expected_single_pass(prompt, model, run_seed)
    except ProcessPainterError as e:
        return {"prompt": prompt, "excluded": f"{e.code}: {e}"}
    return {
        "prompt": prompt,
        "process": score(category, prompt, t.final_image),
        "single_pass": score(category, prompt, baseline),
        "expected_single_pass": expected,
        "segments": len(t.segments),
        "refines": sum(t.meta["refine_rounds"]),
    }


# --- Reports ---
@dataclass
class CategoryRow:
    category: str
    n: int
    process: float
    single_pass: float
    expected_single_pass: float
    mean_segments: float
    mean_refines: float
    excluded: list = field(default_factory=list)


@dataclass
class ReportTable:
    fault_rate: float
    max_refine_rounds: int
    rows: list
    overall_process: float
    overall_single_pass: float
    overall_expected_single_pass: float
    mean_segments: float
    mean_refines: float
    reference_steps: float = REFERENCE_STEPS

    def to_dict(self):
        return asdict(self)


def _mean(values):
    return round(float(np.mean(values)), 4) if values else 0.0


def _category_row(category, results):
    kept = [r for r in results if "excluded" not in r]
    excluded = [{"prompt": r["prompt"], "reason": r["excluded"]} for r in results if "excluded" in r]
    if excluded:
        log.warning(f"EVAL: {category}: {len(excluded)} prompt(s) excluded.")
    return CategoryRow(
        category=category,
        n=len(kept),
        process=_mean([float(r["process"]) for r in kept]),
        single_pass=_mean([float(r["single_pass"]) for r in kept]),
        expected_single_pass=_mean([r["expected_single_pass"] for r in kept]),
        mean_segments=_mean([r["segments"] for r in kept]),
        mean_refines=_mean([r["refines"] for r in kept]),
        excluded=excluded,
    )


def compare_modes(settings, fault_rate, runner=None, seed=None):
    """
    Runs process-driven and single-pass generation on identical suites and seeds.

    Args:
        settings (dict): Resolved settings; the eval block fixes n, categories and R.
        fault_rate (float): Total sketch-fault probability, split evenly over the fault kinds.
        runner (TaskRunner): Pool used across prompts.
        seed (int): Overrides settings["seed"].

    Returns:
        ReportTable: Per-category and overall accuracies for both modes, plus step counts.
    """
    ev = settings["eval"]
    seed = settings["seed"] if seed is None else seed
    runner = runner or TaskRunner(settings["workers"])
    rows = []
    all_results = []
    for category in ev["categories"]:
        suite = build_suite(category, ev["n"], seed)
        func = partial(_evaluate_prompt, category, suite.prompts, fault_rate, ev["max_refine_rounds"], seed)
        results = runner.map(func, range(len(suite)), desc=f"eval {category}")
        rows.append(_category_row(category, results))
        all_results += [r for r in results if "excluded" not in r]
    table = ReportTable(
        fault_rate=fault_rate,
        max_refine_rounds=ev["max_refine_rounds"],
        rows=rows,
        overall_process=_mean([row.process for row in rows]),
        overall_single_pass=_mean([row.single_pass for row in rows]),
        overall_expected_single_pass=_mean([row.expected_single_pass for row in rows]),
        mean_segments=_mean([r["segments"] for r in all_results]),
        mean_refines=_mean([r["refines"] for r in all_results]),
    )
    log.info(
        f"EVAL: p={fault_rate}: process {table.overall_process:.4f}, "
        f"single-pass {table.overall_single_pass:.4f} (closed form {table.overall_expected_single_pass:.4f}), "
        f"{table.mean_refines} refines per image."
    )
    return table


def sweep(settings, fault_rates=None, runner=None, seed=None):
    """One ReportTable per fault rate."""
    rates = settings["eval"]["fault_rates"] if fault_rates is None else fault_rates
    return [compare_modes(settings, rate, runner, seed) for rate in rates]


def format_report(tables):
    lines = []
    header = f"{'category':<18}{'n':>6}{'process':>10}{'single':>10}{'expected':>10}{'segments':>10}{'refines':>10}"
    for table in tables:
        lines.append(f"fault rate {table.fault_rate}, R={table.max_refine_rounds}")
        lines.append(header)
        for row in table.rows:
            lines.append(
                f"{row.category:<18}{row.n:>6}{row.process:>10.4f}{row.single_pass:>10.4f}"
                f"{row.expected_single_pass:>10.4f}{row.mean_segments:>10.2f}{row.mean_refines:>10.2f}"
            )
        lines.append(
            f"{'overall':<18}{'':>6}{table.overall_process:>10.4f}{table.overall_single_pass:>10.4f}"
            f"{table.overall_expected_single_pass:>10.4f}{table.mean_segments:>10.2f}{table.mean_refines:>10.2f}"
        )
        lines.append(f"reference: {table.reference_steps} reasoning steps per image at full scale")
        lines.append("")
    return "\n".join(lines)


def write_report(tables, out_dir):
    """Writes the JSON report and the aligned text table; returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, REPORT_JSON)
    text_path = os.path.join(out_dir, REPORT_TEXT)
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump([t.to_dict() for t in tables], f, indent=2, sort_keys=True)
    with open(text_path, "w", encoding="utf-8") as f:
        f.write(format_report(tables))
    return json_path, text_path
