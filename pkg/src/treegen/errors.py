"""Exception and warning types shared across the package."""


class TreegenError(Exception):
    """Base class for all treegen errors."""


class EmptyTable(TreegenError):
    """Raised when an input table has no rows or no columns."""


class CardinalityOverflow(TreegenError):
    """Raised when a categorical column has more than 256 distinct labels."""


class UnknownCategory(TreegenError):
    """Raised when a label was not seen when the schema was fitted."""


class ZeroModelMass(TreegenError):
    """Raised when a leaf value is requested for a leaf with zero model mass."""


class AcceptanceStall(TreegenError):
    """Raised when rejection sampling has a vanishing expected acceptance rate."""


class MarginalizationBudgetExceeded(TreegenError):
    """Raised when marginalizing over missing features would enumerate too many cells."""


class DomainTooLarge(TreegenError):
    """Raised when exhaustive enumeration of the domain is not feasible."""


class DegenerateTargets(TreegenError):
    """Raised when a metric is undefined for the given targets (e.g. zero variance)."""


class SingleClass(TreegenError):
    """Raised when AUC is requested but only one class is present."""


class ConstantColumnWarning(UserWarning):
    """Emitted when a constant column is dropped during discretizer fitting."""
