"""Exception hierarchy shared across the package.

Three broad families map onto CLI exit codes: validation problems (bad
inputs, bad config), cohort problems (not enough usable data to fit or
evaluate), and I/O problems.
"""


class SnapGapError(Exception):
    """Base class for all package errors."""


class ValidationError(SnapGapError):
    """Bad inputs or configuration. CLI exit code 2."""


class CohortError(SnapGapError):
    """A cohort cannot support the requested fit/evaluation. CLI exit code 3."""


class IoFailure(SnapGapError):
    """Filesystem or stream failure. CLI exit code 4."""


# --- ingest ---------------------------------------------------------------

class MissingColumn(ValidationError):
    pass


class UnreadableStream(IoFailure):
    pass


class EmptyInput(ValidationError):
    pass


class NonNumericZip(ValidationError):
    pass


class LengthOverflow(ValidationError):
    pass


# --- labeling -------------------------------------------------------------

class ZeroPoverty(ValidationError):
    pass


class NoEligibleRows(CohortError):
    pass


class DegenerateDesign(ValidationError):
    pass


# --- models ---------------------------------------------------------------

class SingleClass(CohortError):
    pass


class NonConvergence(SnapGapError):
    pass


class FeatureMismatch(ValidationError):
    pass


class InvalidParams(ValidationError):
    pass


class TooFewPositives(CohortError):
    pass


# --- calibration ----------------------------------------------------------

class InsufficientData(CohortError):
    pass


class DegeneratePrevalence(ValidationError):
    pass


# --- metrics --------------------------------------------------------------

class NoPositives(CohortError):
    pass


# --- pipeline -------------------------------------------------------------

class PeriodsOverlap(ValidationError):
    pass


class InsufficientCohort(CohortError):
    pass


class InvalidSpec(ValidationError):
    pass
