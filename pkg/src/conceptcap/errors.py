"""Exception taxonomy shared across the package.

CLI exit codes map onto these groups: usage errors exit 1, data errors
exit 2, numeric errors exit 3.
"""


class ConceptCapError(Exception):
    """Base class for all library errors."""


class DimensionError(ConceptCapError):
    """Shapes or dimensions of operands do not agree."""


class DegenerateVectorError(ConceptCapError):
    """A vector with near-zero norm cannot be normalized."""


class MaskingError(ConceptCapError):
    """An attention mask leaves some query row with no visible key."""


class BoundError(ConceptCapError):
    """An index or count is outside its valid range."""


class VocabularyError(ConceptCapError):
    """A token id or vocabulary construction problem."""


class CapacityError(ConceptCapError):
    """A sequence does not fit the model's maximum length."""


class EmptyInputError(ConceptCapError):
    """An operation received an empty collection it cannot handle."""


class NumericError(ConceptCapError):
    """A non-finite value surfaced where finite math was required."""


class DataError(ConceptCapError):
    """Malformed files, configs, or inconsistent persisted state."""


class UsageError(ConceptCapError):
    """Bad command-line arguments or unusable option combinations."""
