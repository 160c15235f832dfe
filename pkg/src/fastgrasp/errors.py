"""Exception types raised across the pipeline."""


class GraspError(Exception):
    """Base class for all package errors."""


class ParseError(GraspError):
    pass


class EmptyMesh(GraspError):
    pass


class EmptyRegion(GraspError):
    """No cloud point lies between the jaws."""


class OneSidedContact(GraspError):
    """One half of the closing region is empty, so the jaws cannot pinch."""


class NoGraspsFound(GraspError):
    pass


class DegenerateContacts(GraspError):
    pass


class BenchTimeout(GraspError):
    pass


class ValidationError(GraspError):
    pass


class ConfigError(GraspError):
    pass
