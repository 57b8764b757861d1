"""Exception hierarchy.

Every error carries a short ``category`` string so the command-line entry
point can report a single machine-parsable line.
"""


class MapsError(Exception):
    category = "error"


class ConfigError(MapsError, ValueError):
    category = "config"


class FileFormatError(MapsError, ValueError):
    category = "format"


class TrainingDivergedError(MapsError, RuntimeError):
    category = "divergence"


class ExpertFailureError(MapsError, RuntimeError):
    category = "expert"
