"""Domain records shared by every stage.

All records are frozen dataclasses so collections built from them can be
shared between worker threads without copying.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

TIMESLOTS = ("07-24", "07-09", "09-18", "18-20", "20-24", "ALL")

# total / male / female / elderly, an age band ("20-60", "60+"), or a
# gender-qualified band ("male:20-60").
_DEMOGRAPHIC_RE = re.compile(
    r"^(?:(total|male|female|elderly)|(?:(?:male|female|total):)?\d{1,3}(?:-\d{1,3}|\+))$"
)

STATION_PREFIX = "station:"
CELL_PREFIX = "cell:"


def is_valid_demographic(label: str) -> bool:
    return bool(_DEMOGRAPHIC_RE.match(label))


def source_kind(source_id: str) -> str:
    """Return ``"cell"`` for ``cell:``-prefixed source ids, else ``"station"``."""
    return "cell" if source_id.startswith(CELL_PREFIX) else "station"


@dataclass(frozen=True)
class StorePoint:
    store_id: int
    lon: float
    lat: float
    category: str
    year: int
    subcategory: str = ""

    def industry(self, level: int = 2) -> str:
        """Industry code at ``level`` (1 = primary group, 2 = subcategory)."""
        if level <= 1 or not self.subcategory:
            return self.category
        return f"{self.category}/{self.subcategory}"


@dataclass(frozen=True)
class WeatherRecord:
    year: int
    month: int
    mean_high_temp_c: float
    max_temp_c: float
    precip_mm: float


@dataclass(frozen=True)
class MobilityCount:
    source_id: str
    lon: float
    lat: float
    year: int
    month: int
    timeslot: str
    demographic: str
    count: float

    @property
    def kind(self) -> str:
        return source_kind(self.source_id)


@dataclass(frozen=True)
class ClusterAttribute:
    cluster_id: int
    green_area_m2: float
    metro_station_ids: tuple[str, ...] = field(default_factory=tuple)
