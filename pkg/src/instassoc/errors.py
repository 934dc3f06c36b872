"""Exception hierarchy shared by every module."""


class InstAssocError(Exception):
    pass


class ArgumentError(InstAssocError, ValueError):
    """Invalid sizes, shapes or values passed to an operation."""


class ConfigError(InstAssocError, ValueError):
    """Invalid configuration: unknown key, bad range, degenerate sampling range."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class NumericalDomainError(InstAssocError, ArithmeticError):
    """A value lies outside the domain of a numeric function (e.g. zero vector in a cosine)."""


class StateError(InstAssocError, RuntimeError):
    pass


class SequencingError(InstAssocError, RuntimeError):
    """Frames were fed to the tracker out of order."""


class FormatError(InstAssocError, ValueError):
    """Malformed interchange file; carries the offending line number."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)


class ConfigSyntaxError(ConfigError):
    pass


class UnknownKeyError(ConfigError):
    pass


class ConfigRangeError(ConfigError):
    pass


class ConfigFileMissing(ConfigError, FileNotFoundError):
    pass
