"""
Lab Errors
Exception hierarchy shared by the loaders, learners and the experiment manager.
"""

from typing import Optional


class LabError(Exception):
    """Base class for every error raised by the lab."""


class IdxFormatError(LabError, ValueError):
    """IDX header does not carry the expected magic number or dimensions."""


class TruncatedFileError(LabError, ValueError):
    """IDX payload is shorter than its header announces."""


class CountMismatchError(LabError, ValueError):
    """Image and label files disagree on the number of items."""


class SubsetError(LabError, ValueError):
    """Invalid subset request (fraction out of range or empty result)."""


class DimensionMismatchError(LabError, ValueError):
    """Vectors or weights do not share the same dimension."""


class EmptyInputError(LabError, ValueError):
    """An operation received an empty grid, dataset or sample set."""


class UnlabeledGridError(LabError):
    """No neuron carries a label, so nothing can be classified."""


class ShapeMismatchError(LabError, ValueError):
    """Tensor shapes are incompatible with a layer."""


class NonFiniteError(LabError, ArithmeticError):
    """A loss or gradient became NaN or infinite."""


class ContainerError(LabError):
    """A checkpoint or feature dump is unreadable, of the wrong kind or version."""


class StageError(LabError):
    """
    Wraps a failure inside an experiment with the name of the stage that failed.

    Attributes:
        stage (str): Pipeline stage (e.g. "extract", "som_train", "labeling")
        cause (Exception): Original exception
    """

    def __init__(self, stage: str, cause: Optional[BaseException] = None):
        self.stage = stage
        self.cause = cause
        detail = f"{type(cause).__name__}: {cause}" if cause is not None else "failed"
        super().__init__(f"stage '{stage}' failed - {detail}")
