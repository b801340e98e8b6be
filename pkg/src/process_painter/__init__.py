# process_painter/__init__.py

import os

# --- Basic Package Setup ---
# Central place for names the whole package shares: version, environment
# variables and the default locations used when no flag overrides them.

__version__ = "0.3.0"

# The environment variable that points at the default JSON config file.
CONFIG_ENV_VAR = "PROCESS_PAINTER_CONFIG"
# Optional log file; when unset, logs only go to stderr.
LOG_FILE_ENV_VAR = "PROCESS_PAINTER_LOG_FILE"

CONFIG_FILE = os.environ.get(CONFIG_ENV_VAR, "")
LOG_FILE = os.environ.get(LOG_FILE_ENV_VAR, "")

# Default output locations, relative to the working directory.
DEFAULT_OUTPUT_DIR = "out"
DATASET_FILES = {
    "multiturn": "multiturn.jsonl",
    "conflict": "conflict.jsonl",
    "alignment": "alignment.jsonl",
}
MANIFEST_FILE = "manifest.json"
