"""Exception types raised across the reconstruction pipeline."""


class Lod2Error(Exception):
    """Base class for all pipeline errors."""

    stage = "unknown"


class DegenerateInput(Lod2Error):
    stage = "geom_core"


class NoPlanesFound(Lod2Error):
    stage = "plane_detect"


class EmptySoup(Lod2Error):
    stage = "kinetic2d"


class InvalidPartition(Lod2Error):
    stage = "kinetic2d"

    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}" if detail else invariant)


class NonConvergence(Lod2Error):
    stage = "labeling"


class InconsistentClass(Lod2Error):
    stage = "regularize2d"


class RegularizationRollback(Lod2Error):
    stage = "regularize2d"


class MissingPlane(Lod2Error):
    stage = "extrude3d"


class RankDeficient(Lod2Error):
    stage = "extrude3d"


class AssemblyFailure(Lod2Error):
    stage = "extrude3d"

    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}" if detail else invariant)


class ZeroArea(Lod2Error):
    stage = "metrics"


class ParseError(Lod2Error):
    stage = "pipeline_io"

    def __init__(self, message, line=None, byte=None):
        self.line = line
        self.byte = byte
        where = []
        if line is not None:
            where.append(f"line {line}")
        if byte is not None:
            where.append(f"byte {byte}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class UnsupportedFormat(Lod2Error):
    stage = "pipeline_io"


class Timeout(Lod2Error):
    stage = "pipeline_io"
