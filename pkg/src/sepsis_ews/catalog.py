"""Variable catalog: canonical units, plausible ranges, and unit conversions.

The catalog is data, not code. The default catalog shipped under
``data/catalog.json`` covers the 59 dynamic + 4 static consensus variables
plus the four GCS inputs needed by the score engines (marked
``consensus: false``). Users can point the pipeline at their own catalog
file as long as it carries the same structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources


class CatalogError(ValueError):
    """Raised when a catalog file violates its structural invariants."""


@dataclass(frozen=True)
class VariableDef:
    """One catalog entry: canonical unit, plausible range, conversions."""

    name: str
    description: str
    unit: str
    plausible_min: float
    plausible_max: float
    kind: str  # vital | lab | static | treatment
    conversions: dict[str, tuple[float, float]] = field(default_factory=dict)
    consensus: bool = True

    def convert(self, value: float, unit: str) -> float:
        """Convert value from the given unit to the canonical unit (affine a*x + b)."""
        if _norm_unit(unit) == _norm_unit(self.unit):
            return value
        try:
            a, b = self.conversions[_norm_unit(unit)]
        except KeyError:
            raise KeyError(f"no conversion from unit {unit!r} to {self.unit!r} for {self.name}")
        return a * value + b

    def in_range(self, value: float) -> bool:
        return self.plausible_min <= value <= self.plausible_max


def _norm_unit(unit: str) -> str:
    return unit.strip().lower()


class VariableCatalog:
    """Immutable lookup of variable definitions, shared read-only by the pipeline."""

    def __init__(self, entries: dict[str, VariableDef], version: str = "unversioned"):
        self.version = version
        self._entries = dict(entries)
        self._validate()

    def _validate(self) -> None:
        for name, entry in self._entries.items():
            if entry.plausible_min >= entry.plausible_max:
                raise CatalogError(f"{name}: plausible-min must be < plausible-max")
            if entry.kind not in ("vital", "lab", "static", "treatment"):
                raise CatalogError(f"{name}: unknown kind {entry.kind!r}")

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> VariableDef:
        return self._entries[name]

    def __iter__(self):
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def dynamic_names(self) -> list[str]:
        """Consensus measurement variables (vitals + labs), in catalog order."""
        return [v.name for v in self if v.consensus and v.kind in ("vital", "lab")]

    def static_names(self) -> list[str]:
        return [v.name for v in self if v.consensus and v.kind == "static"]

    @classmethod
    def from_dict(cls, payload: dict) -> "VariableCatalog":
        try:
            raw = payload["variables"]
        except KeyError:
            raise CatalogError("catalog file lacks a 'variables' table")
        entries = {}
        for name, spec in raw.items():
            if name in entries:
                raise CatalogError(f"duplicate variable id {name!r}")
            entries[name] = VariableDef(
                name=name,
                description=spec.get("description", ""),
                unit=spec["unit"],
                plausible_min=float(spec["min"]),
                plausible_max=float(spec["max"]),
                kind=spec["kind"],
                conversions={_norm_unit(u): (float(a), float(b)) for u, (a, b) in spec.get("conversions", {}).items()},
                consensus=bool(spec.get("consensus", True)),
            )
        return cls(entries, version=str(payload.get("version", "unversioned")))

    @classmethod
    def from_file(cls, path) -> "VariableCatalog":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@lru_cache(maxsize=1)
def default_catalog() -> VariableCatalog:
    """Load the catalog shipped with the package (cached; immutable after load)."""
    with resources.files("sepsis_ews.data").joinpath("catalog.json").open() as fh:
        return VariableCatalog.from_dict(json.load(fh))


@lru_cache(maxsize=1)
def default_score_definitions() -> dict:
    """Load the clinical score point tables shipped with the package (cached,
    treated as read-only)."""
    with resources.files("sepsis_ews.data").joinpath("score_definitions.json").open() as fh:
        return json.load(fh)
