from abc import ABC, abstractmethod
from enum import Enum
from typing import Any, Mapping


class Command(Enum):
    GEN_DATA = "gen-data"
    SPLIT = "split"
    TRAIN = "train"
    EVAL = "eval"
    GRADCHECK = "gradcheck"
    PREDICT = "predict"
    PLOT = "plot"
    COMPARE = "compare"


class IToolkitUseCase(ABC):
    @abstractmethod
    def run(self, command: Command, settings: Mapping[str, Any]) -> Any:
        """
        Esegue il caso d'uso associato al sottocomando, con la configurazione già risolta
        (default, file --config, flag e override --set). Restituisce il risultato del caso d'uso.
        """
        pass
