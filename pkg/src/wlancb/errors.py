"""Exception types shared by the engines."""


class WlancbError(Exception):
    """Base class for all library errors."""


class PrimaryBusy(WlancbError):
    """A channel decision was requested while the primary channel is busy."""


class NonPositiveDistance(WlancbError, ValueError):
    pass


class InvalidWidth(WlancbError, ValueError):
    pass


class InvalidAggregation(WlancbError, ValueError):
    pass


class WlanActive(WlancbError):
    pass


class StateExplosion(WlancbError):
    pass


class NoLink(WlancbError):
    """No MCS is decodable on a link at the requested width."""


class SingularSystem(WlancbError):
    pass


class NoConvergence(WlancbError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InvalidScenario(WlancbError, ValueError):
    pass


class PackingFailure(WlancbError):
    pass


class ParseError(WlancbError, ValueError):
    def __init__(self, message, field=None, line=None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.field = field
        self.line = line


class SchemaVersionMismatch(ParseError):
    pass


class ZeroLoad(WlancbError, ValueError):
    pass


class MissingMetrics(WlancbError):
    pass
