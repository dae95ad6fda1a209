"""Exception hierarchy shared by all srgseg modules.

Each class carries an ``exit_code`` used by the command-line front end.
"""


class SrgError(Exception):
    exit_code = 1


class IoFailure(SrgError, OSError):
    exit_code = 2


class UnsupportedFormat(SrgError, ValueError):
    exit_code = 3


class CorruptHeader(SrgError, ValueError):
    exit_code = 3


class NonFiniteData(SrgError, ValueError):
    exit_code = 3


class InvalidSpec(SrgError, ValueError):
    exit_code = 3


class GeometryMismatch(SrgError, ValueError):
    exit_code = 4


class IndexOutOfRange(SrgError, IndexError):
    exit_code = 4


class MissingLabel(SrgError, ValueError):
    exit_code = 4


class InconsistentLabelMaps(SrgError, ValueError):
    exit_code = 4


class EmptyVolume(SrgError, ValueError):
    exit_code = 4


class EmptyVertex(SrgError, ValueError):
    exit_code = 4


class AssignmentLengthMismatch(SrgError, ValueError):
    exit_code = 4


class InstanceTooLarge(SrgError, ValueError):
    exit_code = 5
