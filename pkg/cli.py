#!/usr/bin/env python3
# crowd_counting_desk/cli.py

"""
Einstiegspunkt:  python cli.py {gen|train|eval|ablate|selftest} [optionen]

Exit-Codes: 0 ok, 2 Konfigurationsfehler, 3 Datenfehler,
1 fehlgeschlagener Selbsttest oder sonstiger Fehler.
"""

import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from utils.errors import exit_code  # noqa: E402

COMMANDS = {
    "gen": "pipe.generate_scenes",
    "train": "pipe.train_counting_model",
    "eval": "pipe.evaluate_counting_model",
    "ablate": "pipe.ablation_sweep",
    "selftest": "pipe.selftest",
}


def guarded(main, argv=None):
    """Führt main(argv) aus und übersetzt Fehler in Exit-Codes."""
    try:
        return int(main(argv) or 0)
    except KeyboardInterrupt:
        print("\n⚠️ Abgebrochen.")
        return 1
    except Exception as exc:
        msg = str(exc)
        print(msg if msg.startswith("❌") else f"❌ {type(exc).__name__}: {msg}", file=sys.stderr)
        return exit_code(exc)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help") or argv[0] not in COMMANDS:
        print(__doc__.strip())
        print("\nBefehle: " + ", ".join(COMMANDS))
        return 0 if argv and argv[0] in ("-h", "--help") else 2

    import importlib
    module = importlib.import_module(COMMANDS[argv[0]])
    return guarded(module.main, argv[1:])


if __name__ == "__main__":
    sys.exit(main())
