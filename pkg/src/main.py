# main.py

# --- Main application entry point ---
# Runs the process_painter command line; see `python src/main.py --help`.

import sys

from process_painter.cli import main

if __name__ == "__main__":
    sys.exit(main())
