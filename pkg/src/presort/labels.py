"""Ordered class sets shared by every stage."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

BACKGROUND = "background"
PRIMATE = "primate"

_ALIASES = {
    "bkgd": BACKGROUND,
    "bg": BACKGROUND,
    "noise": BACKGROUND,
    "forest_noise": BACKGROUND,
}


def canonical_label(name: str) -> str:
    """Lower-case, trim and map known aliases (``BKGD`` -> ``background``)."""
    key = "_".join(str(name).strip().lower().split())
    if not key:
        raise ValueError("empty label name")
    return _ALIASES.get(key, key)


@dataclass(frozen=True)
class LabelSpace:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 1:
            raise ValueError("label space needs at least one class")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate class names in {self.names}")

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "LabelSpace":
        """Background first (when present), remaining classes sorted."""
        uniq = sorted({canonical_label(x) for x in labels})
        if BACKGROUND in uniq:
            uniq.remove(BACKGROUND)
            uniq.insert(0, BACKGROUND)
        return cls(tuple(uniq))

    @classmethod
    def binary(cls) -> "LabelSpace":
        return cls((BACKGROUND, PRIMATE))

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name) -> bool:
        return name in self.names

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"label {name!r} not in label space {list(self.names)}") from None

    def indices(self, labels: Sequence[str]) -> list[int]:
        lookup = {n: i for i, n in enumerate(self.names)}
        out = []
        for lab in labels:
            if lab not in lookup:
                raise ValueError(f"label {lab!r} not in label space {list(self.names)}")
            out.append(lookup[lab])
        return out

    @property
    def has_background(self) -> bool:
        return BACKGROUND in self.names
