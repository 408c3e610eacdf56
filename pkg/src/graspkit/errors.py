"""Exception hierarchy.

Every error raised on purpose by graspkit derives from :class:`GraspkitError`.
The CLI maps :class:`DataError` subclasses to exit code 2 and
:class:`NumericError` subclasses to exit code 3.
"""


class GraspkitError(Exception):
    pass


class DataError(GraspkitError, ValueError):
    """Malformed, inconsistent or out-of-vocabulary input."""


class NumericError(GraspkitError, ArithmeticError):
    """A computation is undefined for the given values or failed to converge."""


# hand geometry
class DegenerateFinger(NumericError):
    def __init__(self, finger):
        self.finger = finger
        super().__init__(f"degenerate finger {finger.name}: tip coincides with base")


class DegeneratePhalanx(NumericError):
    def __init__(self, finger):
        self.finger = finger
        super().__init__(f"degenerate phalanx on finger {finger.name}")


# tensors and maps
class DimensionMismatch(DataError):
    pass


class ZeroMass(NumericError):
    pass


class EmptyInput(DataError):
    pass


class ZeroPrototype(NumericError):
    pass


class AllEmpty(NumericError):
    pass


# learning
class ZeroEmbedding(NumericError):
    pass


class LabelOutOfRange(DataError):
    pass


class DataInconsistency(DataError):
    pass


# kinematics
class JointLimit(NumericError):
    pass


class NonPositiveDepth(NumericError):
    pass


class InvalidRotation(NumericError):
    pass


class NoContact(NumericError):
    pass


# metrics
class EmptyFixations(NumericError):
    pass


class MissingPair(DataError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"missing pair for {name!r}")


# dataset / files
class ParseError(DataError):
    pass


class VocabularyError(DataError):
    pass


class UnknownPair(DataError):
    pass


class UnknownTask(DataError):
    pass


class DegeneratePolygon(DataError):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class DimLimit(DataError):
    pass
