from abc import ABC, abstractmethod
from typing import Dict


class OnlinePolicy(ABC):
    """Base class for all online serving policies"""

    name: str = "policy"

    def __init__(self):
        self._validate()
        self.reset()

    @abstractmethod
    def _validate(self) -> None:
        """Validate policy-specific parameters"""
        pass

    @abstractmethod
    def reset(self) -> None:
        """Return to the empty-capacity state before a new sample path"""
        pass

    @abstractmethod
    def decide(self, t: int, reward: float, size_units: int, draw: float) -> bool:
        """Serve or reject the realized query t (0-based) given a uniform draw in [0, 1)"""
        pass

    def get_capabilities(self) -> Dict[str, str]:
        return {
            "name": self.name,
            "class": self.__class__.__name__,
            "description": (self.__doc__ or "No description available").strip(),
        }
