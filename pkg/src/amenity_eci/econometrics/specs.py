"""Regression specifications for the yearly and monthly models.

Interaction terms are written ``"a:b"``. Column numbering follows the
published tables: the yearly subway model has four nested columns (the
fourth is the main one and is re-run per timeslot), the monthly phone
model has five columns, and the demographic breakdown re-runs the fifth.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..model import TIMESLOTS, is_valid_demographic
from .ols import SE_TYPES

_WEATHER = ("Temperature", "High_Year", "Rain", "Covid_period")

EQ3_COLUMNS = {
    1: _WEATHER + ("Total_Shops",),
    2: _WEATHER + ("Complexity", "High_Year:Complexity", "Total_Shops"),
    3: _WEATHER + ("Complexity", "High_Year:Complexity", "Diversity", "High_Year:Diversity", "Total_Shops"),
    4: _WEATHER + ("Complexity", "High_Year:Complexity", "Diversity", "Total_Shops"),
}

EQ4_COLUMNS = {
    1: ("High_Temp", "High_Complexity", "Near_Metro"),
    2: ("High_Temp", "High_Complexity", "High_Temp:High_Complexity", "Near_Metro", "High_Complexity:Near_Metro"),
    3: ("High_Temp", "High_Complexity", "Low_Diversity", "High_Temp:Low_Diversity", "Near_Metro"),
    4: ("High_Temp", "High_Complexity", "High_Green", "High_Temp:High_Green", "Near_Metro"),
    5: ("High_Complexity", "High_Green", "Near_Metro"),
}

TABLE4_TIMESLOTS = ("07-24", "07-09", "09-18", "18-20", "20-24")
TABLE6_DEMOGRAPHICS = ("total", "male", "female", "60+")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    terms: tuple
    dependent: str = "Y"
    robust_se: str = "HC1"
    timeslot: str | None = None
    demographic: str | None = None
    standalone: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.robust_se not in SE_TYPES:
            raise ValueError(f"robust_se must be one of {SE_TYPES}; got {self.robust_se!r}")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError(f"{self.name}: duplicate terms")
        mains = {t for t in self.terms if ":" not in t}
        for t in self.terms:
            if ":" in t and t not in self.standalone:
                missing = [p for p in t.split(":") if p not in mains]
                if missing:
                    raise ValueError(f"{self.name}: interaction {t!r} lacks main effect(s) {missing}")

    @property
    def main_effects(self) -> tuple:
        return tuple(t for t in self.terms if ":" not in t)

    @property
    def interactions(self) -> tuple:
        return tuple(t for t in self.terms if ":" in t)

    def with_se(self, se_type: str) -> ModelSpec:
        return ModelSpec(self.name, self.terms, self.dependent, se_type, self.timeslot, self.demographic, self.standalone)


def model_eq3(column: int = 4, timeslot: str = "07-24", se_type: str = "HC1") -> ModelSpec:
    """Yearly subway model, ``column`` 1-4, for one timeslot."""
    if column not in EQ3_COLUMNS:
        raise ValueError(f"column must be one of {sorted(EQ3_COLUMNS)}")
    if timeslot not in TIMESLOTS:
        raise ValueError(f"unknown timeslot {timeslot!r}")
    return ModelSpec(f"eq3_col{column}_{timeslot}", EQ3_COLUMNS[column], robust_se=se_type, timeslot=timeslot, demographic="total")


def model_eq4(column: int = 5, demographic: str = "total", se_type: str = "HC1") -> ModelSpec:
    """Monthly phone model, ``column`` 1-5, for one demographic group."""
    if column not in EQ4_COLUMNS:
        raise ValueError(f"column must be one of {sorted(EQ4_COLUMNS)}")
    if not is_valid_demographic(demographic):
        raise ValueError(f"unknown demographic {demographic!r}")
    return ModelSpec(f"eq4_col{column}_{demographic}", EQ4_COLUMNS[column], robust_se=se_type, timeslot="ALL", demographic=demographic)


def table_specs(table: int, se_type: str = "HC1") -> list[ModelSpec]:
    """Specs for each column of a published table (3, 4, 5 or 6)."""
    if table == 3:
        return [model_eq3(c, "07-24", se_type) for c in sorted(EQ3_COLUMNS)]
    if table == 4:
        return [model_eq3(4, ts, se_type) for ts in TABLE4_TIMESLOTS]
    if table == 5:
        return [model_eq4(c, "total", se_type) for c in sorted(EQ4_COLUMNS)]
    if table == 6:
        return [model_eq4(5, d, se_type) for d in TABLE6_DEMOGRAPHICS]
    raise ValueError("table must be 3, 4, 5 or 6")
