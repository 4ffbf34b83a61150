# crowd_counting_desk/utils/yaml_loader.py

import copy
import re
from pathlib import Path

import yaml

from utils.errors import ConfigError

# --------------------------------------------------------------
# Deep merge
# --------------------------------------------------------------
def deep_merge(base, layer):
    """Neues Dict: `layer` über `base`, Unter-Dicts rekursiv; `base` bleibt unverändert."""
    merged = dict(base)
    for key, val in layer.items():
        old = merged.get(key)
        merged[key] = deep_merge(old, val) if isinstance(old, dict) and isinstance(val, dict) else copy.deepcopy(val)
    return merged

# --------------------------------------------------------------
# Platzhalter ${a.b}
# --------------------------------------------------------------
PLACEHOLDER = re.compile(r"\$\{([\w.]+)\}")


def _get_by_path(d, path):
    cur = d
    for p in path.split("."):
        if not (isinstance(cur, dict) and p in cur):
            return None
        cur = cur[p]
    return cur


def _resolve_once(node, root):
    if isinstance(node, dict):
        return {k: _resolve_once(v, root) for k, v in node.items()}
    if isinstance(node, list):
        return [_resolve_once(v, root) for v in node]
    if isinstance(node, str):
        def sub(match):
            val = _get_by_path(root, match.group(1))
            return match.group(0) if val is None or isinstance(val, (dict, list)) else str(val)
        return PLACEHOLDER.sub(sub, node)
    return node


def resolve_placeholders(cfg, max_passes=10):
    """
    Ersetzt ${a.b} durch den Wert unter a.b, bis sich nichts mehr ändert
    (${paths.data_dir} → "${paths.base_dir}/scenes" → "workdir/scenes").
    Unbekannte Pfade bleiben stehen; Zyklen brechen ab.
    """
    for _ in range(max_passes):
        resolved = _resolve_once(cfg, cfg)
        if resolved == cfg:
            return resolved
        cfg = resolved
    raise ConfigError(f"❌ Platzhalter nach {max_passes} Durchläufen nicht aufgelöst (Zyklus?)")


# --------------------------------------------------------------
# Unbekannte Schlüssel finden
# --------------------------------------------------------------
def find_unknown_keys(cfg, schema, prefix=""):
    """
    Vergleicht ein geladenes Dict mit einem Schema gleicher Form
    (dict von erlaubten Schlüsseln; Blätter beliebig).
    Liefert die gepunkteten Pfade aller Schlüssel, die im Schema fehlen.
    """
    unknown = []
    for k, v in cfg.items():
        full = f"{prefix}.{k}" if prefix else str(k)
        if k not in schema:
            unknown.append(full)
        elif isinstance(v, dict) and isinstance(schema[k], dict):
            unknown.extend(find_unknown_keys(v, schema[k], full))
    return unknown

# --------------------------------------------------------------
# Eine YAML-Datei lesen
# --------------------------------------------------------------
def read_yaml(path):
    path = Path(path)
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"❌ YAML-Fehler in {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"❌ {path}: Top-Level muss ein Mapping sein.")
    return data

# --------------------------------------------------------------
# Load YAMLs, merge, resolve placeholders
# --------------------------------------------------------------
def load_yaml_config(default_path, *extra_paths, verbose=True):
    """
    Lädt default.yaml und merged danach alle existierenden Zusatzdateien
    (local.yaml, --config ...) in der angegebenen Reihenfolge.
    Gibt (cfg, sources) zurück; `sources` ordnet jedem Top-Level-Abschnitt
    die Datei zu, die ihn zuletzt gesetzt hat (für Fehlermeldungen).
    """
    default_path = Path(default_path)

    if verbose:
        print("📄 Lade default.yaml:", default_path)

    cfg = read_yaml(default_path)
    sources = {k: default_path for k in cfg}

    for extra in extra_paths:
        if extra is None:
            continue
        extra = Path(extra)
        if not extra.exists():
            continue
        if verbose:
            print(f"📄 Lade {extra.name}:", extra)
        other = read_yaml(extra)
        cfg = deep_merge(cfg, other)
        sources.update({k: extra for k in other})
        if verbose:
            print("  ✔ YAMLs gemerged.")

    return resolve_placeholders(cfg), sources
