# process_painter/dataset_builder.py

import json
import os
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np

from . import DATASET_FILES, MANIFEST_FILE, __version__
from .errors import CorruptRecordError, ProcessPainterError, TargetInfeasibleError
from .inspector import check_text_conflict, observe
from .logger import log
from .microworld import COLOR_CODES, SHAPE_CODES, Canvas, FaultModel, inject_fault, realized_faults
from .orchestrator import RunConfig, clean_trajectory, plan_program, run_trajectory
from .planner import MAX_STEPS, MIN_STEPS, sample_scene
from .scene_graph import COLORS, RELATIONS, SHAPES, parse_scene, print_scene
from .seqcodec import SPECIAL_TOKENS
from .settings import config_digest
from .task_runner import TaskRunner

SUBSETS = ("multiturn", "conflict", "alignment")

# Seed stream ids, one per subset.
MULTITURN_STREAM = 31
CONFLICT_STREAM = 32
ALIGNMENT_STREAM = 33

# Sample indices handed to the pool per round while filling a subset.
BATCH_PER_WORKER = 32
# Scene draws per multi-turn sample before its step count gets clipped.
MAX_PROMPT_REDRAWS = 16


# --- Targets ---
def subset_targets(settings):
    """Record, positive and negative counts per subset after scaling."""
    dataset = settings["dataset"]
    targets = {}
    for subset in SUBSETS:
        total = round(dataset["targets"][subset] * settings["scale"])
        if subset == "multiturn":
            targets[subset] = {"records": total, "positives": None, "negatives": None}
            continue
        negatives_num, total_num = dataset[subset]["negative_ratio"]
        negatives = round(total * negatives_num / total_num)
        targets[subset] = {"records": total, "positives": total - negatives, "negatives": negatives}
    return targets


def _prompt(settings, stream, seed, index):
    rng = np.random.default_rng([seed, stream, index])
    p = settings["dataset"]["prompt"]
    return sample_scene(rng, p["min_objects"], p["max_objects"], p["max_relations"])


def _multiturn_prompt(settings, seed, index):
    """
    A multi-turn prompt and its step count. k is drawn uniformly from 2..5 first and scenes are
    redrawn until one has at least k elements, so small scenes do not pull the image count down.
    """
    rng = np.random.default_rng([seed, MULTITURN_STREAM, index])
    p = settings["dataset"]["prompt"]
    k = int(rng.integers(MIN_STEPS, MAX_STEPS + 1))
    for _ in range(MAX_PROMPT_REDRAWS):
        full = sample_scene(rng, p["min_objects"], p["max_objects"], p["max_relations"])
        if full.element_count() >= k:
            return full, k
    log.debug(f"DATASET: No scene with {k} elements for multi-turn sample {index}; clipping k.")
    return full, max(MIN_STEPS, min(k, full.element_count()))


def _affirmative(status, remaining):
    """Analysis for a positive record: why the step holds, not only that it does."""
    summary = "every stated fact agrees with the prompt"
    if remaining:
        summary += f"; {remaining} fact(s) still to come"
    return {"kind": "none", "status": status, "findings": [], "summary": summary}


# --- Per-sample workers (module level so they pickle) ---
def _multiturn_sample(settings, seed, index):
    try:
        full, k = _multiturn_prompt(settings, seed, index)
        prompt = print_scene(full)
        sample_seed = int(np.random.SeedSequence([seed, MULTITURN_STREAM, index]).generate_state(1)[0])
        inline = settings["dataset"]["multiturn"]["inline_critiques"]
        if inline:
            rate = settings["dataset"]["multiturn"]["fault_rate"]
            cfg = RunConfig(
                sketch_faults=FaultModel.uniform(rate),
                max_refine_rounds=settings["run"]["max_refine_rounds"],
                k_hint=k,
                seed=sample_seed,
            )
            t = run_trajectory(prompt, cfg)
        else:
            augmentation = settings["augmentation"]
            ratio = augmentation["ratio"] if augmentation["enabled"] else 0.0
            t = clean_trajectory(prompt, sample_seed, k_hint=k, augmentation_ratio=ratio)
    except ProcessPainterError as e:
        log.debug(f"DATASET: Multi-turn sample {index} skipped: {e}")
        return []
    if not t.success:
        return []

    steps = []
    for segment in t.segments:
        if segment.kind == "plan":
            steps.append({"ins": segment.ins_text, "des": segment.des_text, "image": None})
        elif segment.kind == "vision":
            steps[-1]["image"] = segment.image.to_list()
    record = {"prompt": prompt, "steps": steps, "final_image": t.final_image.to_list()}
    if inline:
        record["segments"] = [_segment_record(s) for s in t.segments]
    return [record]


def _segment_record(segment):
    if segment.kind == "plan":
        return {"kind": "plan", "ins": segment.ins_text, "des": segment.des_text}
    if segment.kind == "vision":
        return {"kind": "vision", "image": segment.image.to_list()}
    return {"kind": segment.kind, "text": segment.text}


def _conflict_record(prompt, ins, des, verdict, full, source):
    if verdict.critique is None:
        remaining = full.element_count() - _stated_count(des)
        return {
            "prompt": prompt,
            "ins": ins,
            "des": des,
            "label": "positive",
            "analysis": _affirmative(verdict.status, remaining),
            "corrective_ins": "",
            "source": source,
        }
    return {
        "prompt": prompt,
        "ins": ins,
        "des": des,
        "label": "negative",
        "analysis": verdict.critique.to_dict(),
        "corrective_ins": verdict.critique.rendered_text,
        "source": source,
    }


def _stated_count(des):
    return parse_scene(des, complete=False).element_count() if des.strip() else 0


def _conflict_sample(settings, seed, index):
    source = settings["dataset"]["conflict"]["source"]
    try:
        full = _prompt(settings, CONFLICT_STREAM, seed, index)
        prompt = print_scene(full)
        sample_seed = int(np.random.SeedSequence([seed, CONFLICT_STREAM, index]).generate_state(1)[0])
        if source == "self_sampled":
            rate = settings["dataset"]["conflict"]["plan_fault_rate"]
            cfg = RunConfig(plan_faults=FaultModel.uniform(rate), seed=sample_seed, inspect_image=False)
            t = run_trajectory(prompt, cfg)
            plans = [(s.ins_text, s.des_text) for s in t.segments if s.kind == "plan"]
        else:
            plans = _symbolic_plans(full, sample_seed)
    except ProcessPainterError as e:
        log.debug(f"DATASET: Conflict sample {index} skipped: {e}")
        return []
    return [_conflict_record(prompt, ins, des, check_text_conflict(ins, des, full), full, source) for ins, des in plans]


def _symbolic_plans(full, sample_seed):
    """One clean step and the same step with a contradiction written into it."""
    program = plan_program(full, RunConfig(seed=sample_seed))
    rng = np.random.default_rng(sample_seed)
    i = int(rng.integers(len(program.steps)))
    step = program.steps[i]
    before = Canvas([program.base, *program.graphs()][i])
    outcome, labels = inject_fault(step, "plan", [sample_seed, i], FaultModel.uniform(1.0), before, full, single=True)
    plans = [(step.ins_text, step.des_text)]
    if realized_faults(labels):
        plans.append((outcome.step.ins_text, outcome.step.des_text))
    return plans


def _alignment_sample(settings, seed, index):
    try:
        full = _prompt(settings, ALIGNMENT_STREAM, seed, index)
        sample_seed = int(np.random.SeedSequence([seed, ALIGNMENT_STREAM, index]).generate_state(1)[0])
        program = plan_program(full, RunConfig(seed=sample_seed))
        rng = np.random.default_rng(sample_seed)
        i = int(rng.integers(len(program.steps)))
        canvas = Canvas()
        for step in program.steps[:i]:
            canvas = canvas.execute(step.ops)
        step = program.steps[i]
        before = canvas.render()
        reserved = frozenset(full.objects)
        records = []
        for variant in range(3):
            model = FaultModel.clean() if variant == 0 else FaultModel.uniform(1.0)
            seed_i = [sample_seed, i, variant]
            outcome, labels = inject_fault(step, "sketch", seed_i, model, canvas, full, reserved, single=True)
            if variant and not realized_faults(labels):
                continue
            after = canvas.sketch(outcome).render()
            verdict = observe(canvas, after, step, reserved).verdict()
            records.append(
                {
                    "ins": step.ins_text,
                    "image_before": before.to_list(),
                    "image_after": after.to_list(),
                    "label": "positive" if verdict.critique is None else "negative",
                    "analysis": _affirmative(verdict.status, 0)
                    if verdict.critique is None
                    else verdict.critique.to_dict(),
                    "refine_ins": verdict.critique.rendered_text if verdict.critique else "",
                }
            )
    except ProcessPainterError as e:
        log.debug(f"DATASET: Alignment sample {index} skipped: {e}")
        return []
    return records


SAMPLERS = {
    "multiturn": (_multiturn_sample, MULTITURN_STREAM),
    "conflict": (_conflict_sample, CONFLICT_STREAM),
    "alignment": (_alignment_sample, ALIGNMENT_STREAM),
}


# --- Filling ---
def fill_subset(subset, settings, seed, runner, target):
    """
    Collects records in sample-index order until the subset's quotas are met.

    Labelled subsets fill positives and negatives separately; surplus records of a full label are
    dropped. Indices are processed in pool-sized batches but consumed strictly in order, so the
    result does not depend on the worker count.

    Raises:
        TargetInfeasibleError: The quotas are not met within max_attempts_factor * records indices.
    """
    sampler, _ = SAMPLERS[subset]
    func = partial(sampler, settings, seed)
    limit = settings["dataset"]["max_attempts_factor"] * max(target["records"], 1)
    labelled = target["positives"] is not None
    wanted = {"positive": target["positives"], "negative": target["negatives"]} if labelled else None
    have = {"positive": 0, "negative": 0}
    records = []
    batch = BATCH_PER_WORKER * runner.max_workers
    index = 0
    while len(records) < target["records"]:
        if index >= limit:
            raise TargetInfeasibleError(
                f"{subset}: only {len(records)} of {target['records']} records after {index} samples"
            )
        for produced in runner.map(func, range(index, min(index + batch, limit)), desc=subset):
            for record in produced:
                if len(records) >= target["records"]:
                    break
                if labelled:
                    if have[record["label"]] >= wanted[record["label"]]:
                        continue
                    have[record["label"]] += 1
                records.append(record)
        index = min(index + batch, limit)
    log.info(f"DATASET: {subset}: {len(records)} records from {index} samples.")
    return records


# --- Manifest and stats ---
@dataclass
class SubsetStats:
    records: int = 0
    positives: int | None = None
    negatives: int | None = None
    avg_prompt_length: float | None = None
    avg_images: float | None = None
    max_images: int | None = None


@dataclass
class DatasetManifest:
    subsets: dict
    seed: int
    scale: float
    config_digest: str
    config: dict
    code_tables: dict = field(default_factory=dict)
    tags: list = field(default_factory=list)
    version: str = __version__

    def to_dict(self):
        data = asdict(self)
        data["subsets"] = {name: asdict(s) for name, s in self.subsets.items()}
        return data

    @classmethod
    def from_dict(cls, data):
        subsets = {name: SubsetStats(**s) for name, s in data["subsets"].items()}
        return cls(**{**data, "subsets": subsets})


def code_tables():
    return {
        "shapes": list(SHAPES),
        "colors": list(COLORS),
        "relations": list(RELATIONS),
        "shape_codes": dict(SHAPE_CODES),
        "color_codes": dict(COLOR_CODES),
    }


def _images(record):
    if "segments" in record:
        return sum(1 for s in record["segments"] if s["kind"] == "vision")
    return len(record["steps"])


def subset_stats(subset, records):
    """Recomputes every reported field from raw records."""
    stats = SubsetStats(records=len(records))
    if subset != "multiturn":
        stats.positives = sum(1 for r in records if r["label"] == "positive")
        stats.negatives = sum(1 for r in records if r["label"] == "negative")
    prompts = [len(r["prompt"]) for r in records if "prompt" in r]
    if prompts:
        stats.avg_prompt_length = round(sum(prompts) / len(prompts), 4)
    if subset == "multiturn" and records:
        images = [_images(r) for r in records]
        stats.avg_images = round(sum(images) / len(images), 4)
        stats.max_images = max(images)
    return stats


REQUIRED_FIELDS = {
    "multiturn": ("prompt", "steps", "final_image"),
    "conflict": ("prompt", "ins", "des", "label", "analysis", "corrective_ins"),
    "alignment": ("ins", "image_before", "image_after", "label", "analysis", "refine_ins"),
}


def read_records(path, subset):
    """
    Raises:
        CorruptRecordError: A line is not JSON or lacks a required field (index is 0-based).
    """
    records = []
    if not os.path.exists(path):
        return records
    with open(path, encoding="utf-8") as f:
        for index, line in enumerate(f):
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorruptRecordError(path, index, f"invalid JSON: {e}") from e
            if not isinstance(record, dict):
                raise CorruptRecordError(path, index, "record is not an object")
            missing = [name for name in REQUIRED_FIELDS[subset] if name not in record]
            if missing:
                raise CorruptRecordError(path, index, f"missing {', '.join(missing)}")
            if "label" in record and record["label"] not in ("positive", "negative"):
                raise CorruptRecordError(path, index, f"unknown label {record['label']!r}")
            records.append(record)
    return records


def stats(out_dir):
    """Per-subset statistics recomputed from the dataset files in `out_dir`."""
    return {
        subset: subset_stats(subset, read_records(os.path.join(out_dir, DATASET_FILES[subset]), subset))
        for subset in SUBSETS
    }


def load_manifest(out_dir):
    path = os.path.join(out_dir, MANIFEST_FILE)
    try:
        with open(path, encoding="utf-8") as f:
            return DatasetManifest.from_dict(json.load(f))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CorruptRecordError(path, 0, f"unreadable manifest: {e}") from e


def compare_stats(recomputed, manifest):
    """Field-level differences between recomputed stats and a manifest; empty when they agree."""
    mismatches = []
    for subset in SUBSETS:
        got = asdict(recomputed[subset])
        claimed = asdict(manifest.subsets.get(subset, SubsetStats()))
        for name, value in got.items():
            if claimed.get(name) != value:
                mismatches.append(f"{subset}.{name}: manifest {claimed.get(name)!r}, files {value!r}")
    return mismatches


# --- Emission ---
def _write_jsonl(path, records):
    temp_file = path + ".tmp"
    with open(temp_file, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    os.replace(temp_file, path)


def emit_dataset(settings, seed, out_dir, runner=None, subsets=SUBSETS):
    """
    Builds the multi-turn, conflict and alignment subsets and their manifest.

    Returns:
        DatasetManifest: Written to out_dir/manifest.json next to the .jsonl files.

    Raises:
        TargetInfeasibleError: A subset cannot reach its quotas.
    """
    runner = runner or TaskRunner(settings["workers"])
    os.makedirs(out_dir, exist_ok=True)
    targets = subset_targets(settings)
    summary = {}
    for subset in SUBSETS:
        records = fill_subset(subset, settings, seed, runner, targets[subset]) if subset in subsets else []
        _write_jsonl(os.path.join(out_dir, DATASET_FILES[subset]), records)
        summary[subset] = subset_stats(subset, records)

    manifest = DatasetManifest(
        subsets=summary,
        seed=seed,
        scale=settings["scale"],
        config_digest=config_digest(settings),
        config=settings,
        code_tables=code_tables(),
        tags=list(SPECIAL_TOKENS),
    )
    path = os.path.join(out_dir, MANIFEST_FILE)
    with open(path + ".tmp", "w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
    os.replace(path + ".tmp", path)
    log.info(f"DATASET: Wrote {sum(s.records for s in summary.values())} records to {out_dir}.")
    return manifest
