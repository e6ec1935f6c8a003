"""Exception hierarchy shared by every xfbd module."""


class XfbdError(Exception):
    """Base class for all toolkit errors."""


class MalformedWkt(XfbdError):
    pass


class UnsupportedGeometry(XfbdError):
    pass


class DimensionMismatch(XfbdError):
    pass


class EmptyPolygon(XfbdError):
    pass


class RegionTouchesBorder(XfbdError):
    pass


class SceneMismatch(XfbdError):
    pass


class MissingFile(XfbdError):
    pass


class BadJson(XfbdError):
    pass


class MissingSecondaryPre(XfbdError):
    pass


class NotACandidate(XfbdError):
    """Requested building cannot be blended (wrong class, excluded, too small or on the border)."""


class UnpairedFile(XfbdError):
    def __init__(self, stems):
        self.stems = sorted(stems)
        super().__init__("no prediction for: " + ", ".join(self.stems))
