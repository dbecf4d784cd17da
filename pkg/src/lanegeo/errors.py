"""Exception and warning types raised across the package."""


class LaneGeoError(ValueError):
    """Base class for domain errors."""


class DegenerateHeight(LaneGeoError):
    """The ray through the camera center is parallel to the ground (h == Z)."""


class BehindCamera(LaneGeoError):
    """A ground point maps to a non-positive homogeneous depth."""


class DegenerateInverse(LaneGeoError):
    """An image point at or above the horizon has no ground back-projection."""


class InsufficientSupport(LaneGeoError):
    """Fewer than two sample positions fall inside a lane's Y range."""


class RankDeficient(LaneGeoError):
    """The Vandermonde system is numerically singular."""


class TooManyGroundTruth(LaneGeoError):
    """More real lanes than prediction slots."""


class DivergedSolve(LaneGeoError):
    """The solver objective became NaN or infinite."""


class DegenerateInit(LaneGeoError):
    """The flat-world bootstrap hit a degenerate projection."""


class RetryExhausted(LaneGeoError):
    """Scene sampling kept producing degenerate projections."""


class NonDifferentiablePoint(UserWarning):
    """An absolute-value residual sits on its kink; sign(0) = 0 was used."""


class NonUniqueAssociation(UserWarning):
    """The optimal lane association is not unique."""
