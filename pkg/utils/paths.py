# crowd_counting_desk/utils/paths.py

from pathlib import Path


def get_project_root() -> Path:
    """
    Gibt den Projektordner zurück:
    crowd_counting_desk/
    """
    return Path(__file__).resolve().parents[1]


def resolve_path(path) -> Path:
    """Relative Pfade aus der Konfiguration gelten ab Projektwurzel."""
    path = Path(path).expanduser()
    return path if path.is_absolute() else get_project_root() / path
