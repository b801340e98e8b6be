# process_painter/settings.py

import copy
import hashlib
import json
import os

# Import the centralized default config path
from . import CONFIG_FILE
from .errors import ConfigError

# --- Settings Configuration (Centralized) ---
# This module owns loading, validating and digesting the toolkit's
# configuration. Flags given on the command line are layered on top by the CLI.

FAULT_KINDS = ("wrong-color", "wrong-shape", "relation-violation", "omission", "duplicate")


def uniform_fault_model(rate):
    """Builds the default-shaped fault table: `rate` split evenly over the five kinds."""
    share = rate / len(FAULT_KINDS)
    model = {"none": 1.0 - rate}
    model.update({kind: share for kind in FAULT_KINDS})
    return model


DEFAULT_SETTINGS = {
    "seed": 0,
    "workers": 1,
    "output_dir": "out",
    # Multiplies the full-size dataset targets below.
    "scale": 0.1,
    "logging": {"level": "INFO", "log_file": ""},
    "faults": {
        "sketch": uniform_fault_model(0.3),
        "plan": uniform_fault_model(0.0),
    },
    "run": {
        "max_refine_rounds": 3,
        "k_hint": None,
        "inspect_text": True,
        "inspect_image": True,
        "inspect_plan_before_sketch": True,
        "emit_clean_inspect": False,
    },
    "augmentation": {
        "enabled": True,
        "ratio": 0.1,
        "max_steps": 5,
    },
    "dataset": {
        "targets": {"multiturn": 32012, "conflict": 15201, "alignment": 15000},
        "prompt": {"min_objects": 2, "max_objects": 5, "max_relations": 3},
        "multiturn": {"inline_critiques": False, "fault_rate": 0.3},
        "conflict": {
            "source": "self_sampled",
            # Negatives over total, kept as a ratio so scaled counts round the same way.
            "negative_ratio": [8296, 15201],
            "plan_fault_rate": 0.5,
        },
        "alignment": {"negative_ratio": [10000, 15000]},
        # Give up on a subset after this many sample indices per requested record.
        "max_attempts_factor": 50,
    },
    "eval": {
        "n": 200,
        "categories": [
            "single-object",
            "two-objects",
            "counting",
            "colors",
            "position",
            "color-attributes",
            "composite",
        ],
        "fault_rates": [0.3],
        "max_refine_rounds": 3,
    },
    "judge": {"url": "", "timeout": 5.0, "retries": 3},
    "flow": {"lambda_ce": 1.0},
}


def deep_update(source, overrides):
    """Recursively update a dictionary."""
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(source.get(key), dict):
            source[key] = deep_update(source.get(key, {}), value)
        else:
            source[key] = value
    return source


def load_settings(path=None):
    """
    Loads settings from a JSON file, layered on top of the defaults.

    Args:
        path (str): Config file path. Falls back to $PROCESS_PAINTER_CONFIG, then to defaults only.

    Returns:
        dict: A fully populated settings dictionary.

    Raises:
        ConfigError: If the file exists but cannot be read or parsed.
    """
    path = path or CONFIG_FILE
    settings = copy.deepcopy(DEFAULT_SETTINGS)
    if not path:
        return settings
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            loaded_settings = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"could not load {path}: {e}") from e
    if not isinstance(loaded_settings, dict):
        raise ConfigError(f"{path}: top level must be an object")
    deep_update(settings, loaded_settings)
    return settings


def _check_probability(name, value):
    if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must be a probability in [0, 1], got {value!r}")


def validate_fault_model(name, model):
    for kind, p in model.items():
        if kind != "none" and kind not in FAULT_KINDS:
            raise ConfigError(f"{name}: unknown fault kind {kind!r}")
        _check_probability(f"{name}.{kind}", p)
    total = sum(model.values())
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"{name}: probabilities must sum to 1, got {total}")


def validate_settings(settings):
    """Raises ConfigError for the first out-of-range value found."""
    for stage in ("sketch", "plan"):
        validate_fault_model(f"faults.{stage}", settings["faults"][stage])
    run = settings["run"]
    if not isinstance(run["max_refine_rounds"], int) or run["max_refine_rounds"] < 0:
        raise ConfigError("run.max_refine_rounds must be an integer >= 0")
    if run["k_hint"] is not None and not 2 <= run["k_hint"] <= 5:
        raise ConfigError("run.k_hint must be between 2 and 5")
    _check_probability("augmentation.ratio", settings["augmentation"]["ratio"])
    if not isinstance(settings["workers"], int) or settings["workers"] < 1:
        raise ConfigError("workers must be an integer >= 1")
    if settings["scale"] < 0:
        raise ConfigError("scale must be >= 0")
    dataset = settings["dataset"]
    for subset, target in dataset["targets"].items():
        if target < 0:
            raise ConfigError(f"dataset.targets.{subset} must be >= 0")
    for subset in ("conflict", "alignment"):
        negatives, total = dataset[subset]["negative_ratio"]
        if total <= 0 or not 0 <= negatives <= total:
            raise ConfigError(f"dataset.{subset}.negative_ratio must satisfy 0 <= neg <= total, total > 0")
    if dataset["conflict"]["source"] not in ("self_sampled", "symbolic"):
        raise ConfigError("dataset.conflict.source must be 'self_sampled' or 'symbolic'")
    _check_probability("dataset.conflict.plan_fault_rate", dataset["conflict"]["plan_fault_rate"])
    _check_probability("dataset.multiturn.fault_rate", dataset["multiturn"]["fault_rate"])
    for rate in settings["eval"]["fault_rates"]:
        _check_probability("eval.fault_rates", rate)
    if settings["flow"]["lambda_ce"] < 0:
        raise ConfigError("flow.lambda_ce must be >= 0")
    return settings


def canonical_json(settings):
    return json.dumps(settings, sort_keys=True, separators=(",", ":"))


def config_digest(settings):
    """Stable sha256 digest of the resolved configuration."""
    return hashlib.sha256(canonical_json(settings).encode("utf-8")).hexdigest()
