"""Exception hierarchy.

Every exception carries a machine readable ``kind`` and the process exit code
the command line front end maps it to.
"""

from __future__ import annotations


class BWFError(Exception):
    kind = "error"
    exit_code = 4

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        return {"kind": self.kind, "message": str(self), **self.details}


class DataError(BWFError):
    exit_code = 2


class ParseError(DataError):
    kind = "ParseError"


class AsymmetricResponse(DataError):
    kind = "AsymmetricResponse"


class MissingCell(DataError):
    kind = "MissingCell"


class DimensionMismatch(DataError):
    kind = "DimensionMismatch"


class OddDimension(DataError):
    kind = "OddDimension"


class RankDeficientSurrogate(DataError):
    kind = "RankDeficientSurrogate"


class NotPositiveDefinite(BWFError):
    kind = "NotPositiveDefinite"


class NumericalBreakdown(BWFError):
    kind = "NumericalBreakdown"


class SingularCovariance(BWFError):
    kind = "SingularCovariance"


class SingularOperator(BWFError):
    kind = "SingularOperator"


class NonConvergence(BWFError):
    kind = "NonConvergence"
    exit_code = 3
