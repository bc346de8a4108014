class DataError(Exception):
    """Bad or missing input data: file formats, vocabulary ranges, OOV words."""


class NumericError(Exception):
    """Numerical failure: a forward op produced NaN/Inf, or training hit a
    non-finite loss or gradient."""
