# crowd_counting_desk/utils/errors.py

"""
Fehlerklassen des Projekts.

Alle Fehler erben von der Builtin-Klasse, die man an der jeweiligen Stelle
sowieso geworfen hätte (meist ValueError), damit `except ValueError` weiter
greift. Die CLI ordnet sie über `CONFIG_ERRORS` / `DATA_ERRORS` den
Exit-Codes 2 und 3 zu.
"""


class CrowdCountError(Exception):
    """Basisklasse aller Projektfehler."""


# ----------------------------------------------------------------------
# Rechenkern / Modell
# ----------------------------------------------------------------------
class ShapeMismatch(CrowdCountError, ValueError):
    pass


class NonScalarOutput(CrowdCountError, ValueError):
    pass


class NonFiniteValue(CrowdCountError, ValueError):
    pass


class BadSize(CrowdCountError, ValueError):
    pass


# ----------------------------------------------------------------------
# MPM / CLM
# ----------------------------------------------------------------------
class BadRatio(CrowdCountError, ValueError):
    pass


class GridTooSmall(CrowdCountError, ValueError):
    pass


class MissingP5(CrowdCountError, ValueError):
    pass


class PointOutOfBounds(CrowdCountError, ValueError):
    def __init__(self, point, image_h, image_w):
        self.point = tuple(point)
        super().__init__(
            f"❌ Punkt {self.point} liegt nicht in [0,{image_w})×[0,{image_h})"
        )


class NoPositives(CrowdCountError, ValueError):
    pass


class NoNegatives(CrowdCountError, ValueError):
    pass


# ----------------------------------------------------------------------
# Loss / Metriken
# ----------------------------------------------------------------------
class EmptySide(CrowdCountError, ValueError):
    pass


class LengthMismatch(CrowdCountError, ValueError):
    pass


class EmptyInput(CrowdCountError, ValueError):
    pass


# ----------------------------------------------------------------------
# Dateien / Konfiguration
# ----------------------------------------------------------------------
class FormatError(CrowdCountError, ValueError):
    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        if offset is not None:
            where = f" ({path}, Byte {offset})"
        else:
            where = f" ({path})" if path is not None else ""
        super().__init__(f"❌ {message}{where}")


class ManifestMismatch(CrowdCountError, ValueError):
    pass


class ConfigError(CrowdCountError, ValueError):
    pass


class UnknownAxis(CrowdCountError, ValueError):
    pass


CONFIG_ERRORS = (ConfigError, UnknownAxis, BadRatio, GridTooSmall)
DATA_ERRORS = (FormatError, ManifestMismatch, EmptyInput, PointOutOfBounds, OSError)


def exit_code(exc):
    """CLI-Exit-Code: 2 Konfiguration, 3 Daten, 1 alles andere."""
    if isinstance(exc, CONFIG_ERRORS):
        return 2
    if isinstance(exc, DATA_ERRORS):
        return 3
    return 1
