"""Exception hierarchy for montage-lab.

Errors deriving from :class:`InputError` indicate bad input data or
configuration (CLI exit code 2); everything else is an internal failure
(exit code 1).
"""


class MontageLabError(Exception):
    """Base class for all montage-lab errors."""


class InputError(MontageLabError):
    """Invalid input data or configuration supplied by the caller."""


# --- ingest ---------------------------------------------------------------

class MalformedHeader(InputError):
    """EDF header is structurally invalid (bad version, widths, or fields)."""


class InconsistentRecordCount(InputError):
    """EDF file size disagrees with the record count declared in the header."""


class DegenerateScaling(InputError):
    """EDF signal declares digital_min == digital_max; scaling is undefined."""


class RateMismatch(InputError):
    """Retained EDF signals disagree on sampling rate."""


class OverlapError(InputError):
    """Label events overlap in time."""


class NegativeSpanError(InputError):
    """Label event has stop <= start or a negative start time."""


class UnknownClassError(InputError):
    """Label event class is not one of the recognized classes."""


class InvalidConfig(InputError):
    """Configuration values are out of range or inconsistent."""


# --- montage --------------------------------------------------------------

class MissingElectrode(InputError):
    """A required electrode label is not present in the recording."""


class EmptyAverageSet(InputError):
    """The average-reference electrode set resolves to no channels."""


# --- features -------------------------------------------------------------

class TooShort(InputError):
    """Signal is shorter than one analysis window."""


# --- analysis / hmm / evaluation -------------------------------------------

class DimensionMismatch(InputError):
    """Operands disagree on feature or state dimensionality."""


class InsufficientData(InputError):
    """Not enough samples/epochs to carry out the computation."""


class NonFiniteLikelihood(MontageLabError):
    """Model likelihood became NaN/inf; usually a variance-floor problem."""


class EmptyInput(InputError):
    """An operation that requires at least one element received none."""


class SingleClassInput(InputError):
    """A detection-error sweep needs scores from both classes."""


class SplitOverlap(InputError):
    """Train and evaluation sets share a recording or patient."""


class EmptyCorpus(InputError):
    """No feature files or recordings found for a requested class."""
