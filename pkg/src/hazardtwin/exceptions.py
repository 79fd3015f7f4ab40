"""Exception hierarchy. Each CLI-facing error carries its process exit code."""


class HazardTwinError(Exception):
    exit_code = 1


class ConfigError(HazardTwinError, ValueError):
    exit_code = 2


class MissingArtifactError(HazardTwinError, FileNotFoundError):
    exit_code = 3


class NumericalError(HazardTwinError, ArithmeticError):
    exit_code = 4
