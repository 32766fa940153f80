"""Exception hierarchy shared by every stage of the pipeline."""


class CrowdMRFError(Exception):
    """Base class for all errors raised by crowdmrf."""


class DimensionError(CrowdMRFError, ValueError):
    """Image is smaller than the requested patch along some axis."""

    def __init__(self, axis, size, patch_size):
        self.axis = axis
        self.size = size
        self.patch_size = patch_size
        super().__init__(
            f"image {axis} {size} is smaller than patch size {patch_size}")


class StrideError(CrowdMRFError, ValueError):
    """Stride is zero, negative, larger than the patch, or unsupported."""


class FormatError(CrowdMRFError, ValueError):
    """A file does not follow its expected binary or text layout.

    ``offset`` is the byte offset (binary formats) and ``line`` the 1-based
    line number (text formats) where parsing failed, when known.
    """

    def __init__(self, message, offset=None, line=None):
        self.offset = offset
        self.line = line
        where = []
        if offset is not None:
            where.append(f"byte {offset}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} (at {', '.join(where)})"
        super().__init__(message)


class UnsupportedFormatError(FormatError):
    """Recognised but unsupported variant, e.g. a colour PPM."""


class ShapeMismatchError(CrowdMRFError, ValueError):
    """Array sizes disagree with the grid or the model they are used with."""


class TrainingDivergedError(CrowdMRFError, ArithmeticError):
    """The training loss became NaN or infinite."""

    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        super().__init__(
            f"non-finite training loss {value!r} at epoch {epoch}, batch {batch}")


class MessagePassingError(CrowdMRFError, ArithmeticError):
    """A belief-propagation message became NaN or infinite."""

    def __init__(self, round_, edge):
        self.round = round_
        self.edge = edge
        super().__init__(
            f"non-finite message at round {round_} on edge {edge[0]}->{edge[1]}")
