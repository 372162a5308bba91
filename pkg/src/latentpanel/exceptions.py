class LatentPanelError(ValueError):
    """Base class for contract violations raised by this package."""

    code = "contract_violation"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class PanelError(LatentPanelError):
    code = "invalid_panel"


class SpecError(LatentPanelError):
    code = "invalid_spec"


class QuadratureError(LatentPanelError):
    code = "quadrature"


class NeighborError(LatentPanelError):
    code = "neighbors"


class InsufficientOverlap(NeighborError):
    code = "insufficient_overlap"


class EstimationError(LatentPanelError):
    code = "estimation"


class OverlapFailure(EstimationError):
    """Some cells could not be imputed; ``cells`` lists them as (unit, time)."""

    code = "overlap_failure"

    def __init__(self, message, cells=()):
        super().__init__(message)
        self.cells = [tuple(int(v) for v in c) for c in cells]

    def to_dict(self):
        out = super().to_dict()
        out["cells"] = [list(c) for c in self.cells]
        return out
