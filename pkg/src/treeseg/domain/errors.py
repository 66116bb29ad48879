from typing import Iterable, Optional, Sequence


class DomainError(Exception):
    pass


class ShapeMismatchError(DomainError, ValueError):
    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = " vs ".join(str(s) for s in self.shapes)
        message = f"Forme incompatibili per l'operazione '{op}': {rendered}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class GradientError(DomainError):
    pass


class NonFiniteError(DomainError):
    pass


class UnsupportedConfigurationError(DomainError, ValueError):
    pass


class TaxonomyError(DomainError, ValueError):
    def __init__(self, problems: Iterable[str] | str):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("Tassonomia non valida: " + "; ".join(self.problems))


class LossUndefinedError(DomainError):
    pass


class MetricsError(DomainError):
    pass


class SynthesisError(DomainError, ValueError):
    pass


class SplitError(DomainError, ValueError):
    pass


class TrainingDivergedError(DomainError):
    def __init__(self, message: str, parameter: Optional[str] = None):
        self.parameter = parameter
        super().__init__(message)


class ValidationError(DomainError, ValueError):
    """Raccoglie in un'unica eccezione tutti i campi non validi di una configurazione."""

    def __init__(self, problems: Iterable[str]):
        self.problems = list(problems)
        super().__init__(
            "Configurazione non valida:\n  - " + "\n  - ".join(self.problems)
        )
