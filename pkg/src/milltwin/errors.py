"""Shared error taxonomy, mapped to HTTP status codes by the API layer."""


class TwinError(Exception):
    """Base class for domain errors."""


class NotFound(TwinError):
    """Referenced entity does not exist (HTTP 404)."""


class Conflict(TwinError):
    """Request conflicts with current state (HTTP 409)."""


class Invalid(TwinError):
    """Input fails validation (HTTP 422)."""


class SegmentationFailed(Invalid):
    """Automatic phase segmentation could not find enough steps."""
