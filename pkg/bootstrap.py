# ============================================================
# bootstrap.py – zentrale Projektinitialisierung
# ============================================================

import sys
from pathlib import Path

# Projektwurzel hinzufügen (Ordner, in dem bootstrap.py selbst liegt)
PROJECT_ROOT = Path(__file__).resolve().parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from core.run_config import RunConfig  # noqa: E402
from utils.errors import ConfigError  # noqa: E402
from utils.paths import resolve_path  # noqa: E402
from utils.yaml_loader import load_yaml_config  # noqa: E402

# CLI-Flag → Konfigurationsschlüssel
OVERRIDE_FLAGS = {
    "mask_ratio": ("mask.ratio", float),
    "mask_strategy": ("mask.strategy", str),
    "clm_variant": ("clm.variant", str),
    "dilation": ("clm.dilation", str),
    "alpha": ("loss.alpha", float),
    "beta": ("loss.beta", float),
    "sigma": ("eval.sigma", float),
    "seed": ("seed", int),
    "epochs": ("optim.epochs", int),
    "lr": ("optim.lr", float),
    "batch_size": ("optim.batch_size", int),
    "mpm_layers": ("model.mpm_layers", int),
}


# ------------------------------------------------------------
# Hilfsfunktion: Projektwurzel bestimmen
# ------------------------------------------------------------
def get_project_root():
    return PROJECT_ROOT


# ------------------------------------------------------------
# argparse-Anbindung
# ------------------------------------------------------------
def add_config_arguments(parser):
    parser.add_argument("--config", type=str, default=None,
                        help="Zusätzliche YAML-Datei (nach default/local gemerged)")
    for flag, (key, typ) in OVERRIDE_FLAGS.items():
        parser.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ, default=None,
                            help=f"überschreibt {key}")
    return parser


def overrides_from_args(args):
    out = {}
    for flag, (key, _) in OVERRIDE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if flag == "dilation" and value.isdigit():
            value = int(value)
        out[key] = value
    return out


def apply_overrides(cfg, overrides, verbose=True):
    for key, value in (overrides or {}).items():
        cfg.set(key, value)
        if verbose:
            print(f"   • {key} = {value}")
    return cfg


def project_path(cfg, key):
    """Pfad aus cfg.paths, relativ zur Projektwurzel aufgelöst."""
    if key not in cfg.paths:
        raise ConfigError(f"❌ paths.{key} fehlt in der Konfiguration")
    return resolve_path(cfg.paths[key])


# ------------------------------------------------------------
# HAUPTFUNKTION: Projekt initialisieren
# ------------------------------------------------------------
def init(verbose=True, default_yaml=None, local_yaml=None, config_path=None, overrides=None):
    if verbose:
        print("=========================================")
        print("🔧 BOOTSTRAP: Lade Konfiguration")
        print("=========================================")

    project_root = get_project_root()
    config_dir = project_root / "config"

    default_yaml = default_yaml or (config_dir / "default.yaml")
    local_yaml = local_yaml or (config_dir / "local.yaml")

    if verbose:
        print(f"📁 Projektwurzel: {project_root}")

    if config_path is not None and not Path(config_path).exists():
        raise ConfigError(f"❌ Konfigurationsdatei fehlt: {config_path}")

    data, sources = load_yaml_config(default_yaml, local_yaml, config_path, verbose=verbose)
    cfg = RunConfig.from_dict(data, sources=sources)

    if overrides:
        if verbose:
            print("🔧 CLI-Overrides:")
        apply_overrides(cfg, overrides, verbose=verbose)

    cfg.validate()

    if verbose:
        print("\n✅ BOOTSTRAP abgeschlossen.\n")
    return cfg
