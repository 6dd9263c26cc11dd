"""Exception types shared across the package."""


class ChauffeurError(Exception):
    pass


class ValidationError(ChauffeurError, ValueError):
    pass


class ParseError(ChauffeurError, ValueError):
    def __init__(self, message, field=None, line=None):
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field = field
        self.line = line


class VersionMismatch(ChauffeurError):
    pass


class GenerationFailed(ChauffeurError):
    pass


class SteppedAfterDone(ChauffeurError, RuntimeError):
    pass


class ShapeMismatch(ChauffeurError, ValueError):
    pass


class DomainError(ChauffeurError, ValueError):
    pass


class EmptySet(ChauffeurError, ValueError):
    pass


class EmptyDataset(ChauffeurError, ValueError):
    pass


class PerplexityTooHigh(ChauffeurError, ValueError):
    pass


class InsufficientScenarios(ChauffeurError, ValueError):
    pass


class MissingInput(ChauffeurError, FileNotFoundError):
    pass
