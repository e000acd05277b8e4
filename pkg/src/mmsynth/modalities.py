"""MRI modality vocabulary and missing-modality scenarios."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import ConfigError


class Modality(str, Enum):
    """The four MRI contrasts, in canonical channel order."""

    T1 = "T1"
    T1CE = "T1CE"
    T2 = "T2"
    FLAIR = "FLAIR"

    @classmethod
    def canonical(cls) -> tuple["Modality", ...]:
        return (cls.T1, cls.T1CE, cls.T2, cls.FLAIR)

    @classmethod
    def parse(cls, tag: str) -> "Modality":
        try:
            return cls[tag.strip().upper().replace("-", "").replace("_", "")]
        except KeyError:
            valid = ", ".join(m.value for m in cls.canonical())
            raise ConfigError(f"unknown modality {tag!r}; expected one of {valid}") from None

    @property
    def display(self) -> str:
        # report tables spell out contrast-enhanced T1 as "T1-ce"
        return "T1-ce" if self is Modality.T1CE else self.value


@dataclass(frozen=True)
class MissingScenario:
    """One missing-modality situation: the absent target plus the three sources.

    Sources are always the remaining modalities in canonical order, so the
    branch-to-modality assignment is fixed for a given target.
    """

    target: Modality

    @property
    def sources(self) -> tuple[Modality, ...]:
        return tuple(m for m in Modality.canonical() if m is not self.target)

    @property
    def tag(self) -> str:
        return self.target.value


def all_scenarios() -> tuple[MissingScenario, ...]:
    """All four missing-modality scenarios, one per possible target."""
    return tuple(MissingScenario(m) for m in Modality.canonical())
