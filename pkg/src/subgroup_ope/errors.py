"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class SubgroupOPEError(Exception):
    """Base class for all errors raised by this package."""


class SupportViolation(SubgroupOPEError, ValueError):
    """A behavior probability is zero where the evaluation policy needs support."""


class MixedWidth(SubgroupOPEError, ValueError):
    """Trajectories in one dataset have different feature counts."""


class ParseError(SubgroupOPEError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(SubgroupOPEError, ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        if field is not None:
            prefix += f"field '{field}': "
        super().__init__(prefix + message)


class EmptyDataset(SubgroupOPEError, ValueError):
    pass


class EmptyGroup(SubgroupOPEError, ValueError):
    pass


class DegenerateWeights(SubgroupOPEError, ValueError):
    """Every importance weight in a group is zero."""


class TooFewSamples(SubgroupOPEError, ValueError):
    pass


class NotNormalized(SubgroupOPEError, ValueError):
    pass


class InadmissibleGroup(SubgroupOPEError, ValueError):
    def __init__(self, group, reason: str):
        self.group = group
        self.reason = reason
        super().__init__(f"group {group!r} is inadmissible: {reason}")


class ZeroDenominator(SubgroupOPEError, ZeroDivisionError):
    pass


class InadmissibleRoot(SubgroupOPEError, ValueError):
    pass


class DimensionMismatch(SubgroupOPEError, ValueError):
    pass


class EmptyLeaf(SubgroupOPEError, ValueError):
    def __init__(self, leaves):
        self.leaves = list(leaves)
        super().__init__(f"no estimation records in leaf/leaves {self.leaves}")


class MissingTruth(SubgroupOPEError, KeyError):
    def __init__(self, leaf):
        self.leaf = leaf
        super().__init__(f"no ground-truth group effect for leaf {leaf}")

    def __str__(self) -> str:
        return self.args[0]


class NotDeterministic(SubgroupOPEError, ValueError):
    pass


class InvalidDelta(SubgroupOPEError, ValueError):
    pass


class ZeroMassGroup(SubgroupOPEError, ValueError):
    pass
