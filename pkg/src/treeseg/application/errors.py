from typing import Iterable, Optional


class PipelineError(Exception):
    pass


class DataPreparationError(PipelineError):
    pass


class MissingDataError(DataPreparationError):
    pass


class InvalidInputError(PipelineError, ValueError):
    pass


class ConfigValidationError(InvalidInputError):
    """Tutti i campi non validi di una configurazione, riportati insieme."""

    def __init__(self, problems: Iterable[str]):
        self.problems = list(problems)
        super().__init__(
            "Configurazione non valida:\n  - " + "\n  - ".join(self.problems)
        )


class CheckpointMismatchError(PipelineError, ValueError):
    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(message)
