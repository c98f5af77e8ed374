"""Exception and warning classes raised across the pipeline."""


class AmenityECIError(Exception):
    """Base class for all package errors."""


# -- ingestion -------------------------------------------------------------


class IngestError(AmenityECIError, ValueError):
    """A file could not be ingested.

    ``errors`` holds every row-level problem found in the file; the exception
    itself describes the first one so callers can match on its type.
    """

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row
        self.errors = [self]

    def with_errors(self, errors):
        self.errors = list(errors)
        if len(self.errors) > 1:
            extra = "; ".join(str(e) for e in self.errors[1:])
            self.args = (f"{self.args[0]} (+{len(self.errors) - 1} more: {extra})",)
        return self


class MissingColumn(IngestError):
    def __init__(self, column):
        super().__init__(f"missing required column {column!r}")
        self.column = column


class CoordinateOutOfRange(IngestError):
    def __init__(self, row, lon=None, lat=None):
        super().__init__(f"row {row}: coordinate out of range (lon={lon}, lat={lat})", row)


class DuplicateId(IngestError):
    def __init__(self, id, row=None):
        super().__init__(f"row {row}: duplicate id {id!r}", row)
        self.id = id


class DuplicatePeriod(IngestError):
    def __init__(self, year, month, row=None):
        super().__init__(f"row {row}: duplicate period {year}-{month:02d}", row)
        self.year = year
        self.month = month


class NegativePrecip(IngestError):
    def __init__(self, row):
        super().__init__(f"row {row}: negative precipitation", row)


class UnknownTimeslot(IngestError):
    def __init__(self, label, row=None):
        super().__init__(f"row {row}: unknown timeslot {label!r}", row)
        self.label = label


class NegativeCount(IngestError):
    def __init__(self, row):
        super().__init__(f"row {row}: negative count", row)


class InvalidValue(IngestError):
    """A field failed to parse or violates a record invariant."""

    def __init__(self, row, reason):
        super().__init__(f"row {row}: {reason}", row)


# -- spatial / clusters ----------------------------------------------------


class EmptyInput(AmenityECIError, ValueError):
    pass


class ParamsMismatch(AmenityECIError, ValueError):
    pass


class NoSeeds(AmenityECIError, ValueError):
    pass


class UnknownClusterId(AmenityECIError, KeyError):
    def __init__(self, cluster_id):
        super().__init__(cluster_id)
        self.cluster_id = cluster_id

    def __str__(self):
        return f"unknown cluster id {self.cluster_id!r}"


# -- complexity ------------------------------------------------------------


class AllPruned(AmenityECIError, ValueError):
    pass


class DegenerateVariance(AmenityECIError, ValueError):
    pass


# -- econometrics ----------------------------------------------------------


class RankDeficient(AmenityECIError, ValueError):
    def __init__(self, columns):
        super().__init__(f"design matrix is rank deficient in columns {list(columns)}")
        self.columns = list(columns)


class InsufficientRows(AmenityECIError, ValueError):
    pass


class MissingWeather(AmenityECIError, KeyError):
    def __init__(self, year, month):
        super().__init__((year, month))
        self.year = year
        self.month = month

    def __str__(self):
        return f"no weather record for {self.year}-{self.month:02d}"


class EmptyPanel(AmenityECIError, ValueError):
    pass


class ZeroVariance(AmenityECIError, ValueError):
    def __init__(self, column):
        super().__init__(f"column {column!r} has zero variance")
        self.column = column


# -- synthetic generator / pipeline ---------------------------------------


class BBoxTooSmall(AmenityECIError, ValueError):
    pass


class MissingUpstream(AmenityECIError, FileNotFoundError):
    def __init__(self, stage, path=None):
        super().__init__(f"missing upstream artifact from stage {stage!r}" + (f": {path}" if path else ""))
        self.stage = stage
        self.path = path


class ConfigError(AmenityECIError, ValueError):
    pass


# -- warnings --------------------------------------------------------------


class NonConverged(UserWarning):
    """Method of reflections hit ``max_iter`` before the ranking stabilised."""


class DataWarning(UserWarning):
    """Recoverable data issue (clamped share, skipped cluster, dropped rows)."""
