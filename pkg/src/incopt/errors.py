"""Exception hierarchy.

Everything raised on bad input derives from ``DataError`` so the CLI can map it
to exit code 2 with a single line on stderr.
"""


class IncoptError(Exception):
    pass


class DataError(IncoptError, ValueError):
    pass


class InvalidConfigError(DataError):
    pass


# graph_store
class GraphError(DataError):
    pass


class DanglingEndpointError(GraphError):
    pass


class DimMismatchError(GraphError):
    pass


class NonFiniteError(DataError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class SelfLoopError(GraphError):
    pass


class OutOfRangeError(DataError, IndexError):
    pass


# model / trainer
class ShapeMismatchError(DataError):
    pass


class NegativeTreatmentError(DataError):
    pass


class EmptyBatchError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class CheckpointError(DataError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CorruptFileError(CheckpointError):
    pass


# allocator
class InfeasibleBudgetError(DataError):
    pass


class TooLargeError(DataError):
    pass


class NonIntegerCostsError(DataError):
    pass


# evaluator
class LengthMismatchError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class BadTreatmentPairError(DataError):
    pass


class SetMismatchError(DataError):
    pass
