class FedCondError(Exception):
    pass


class ConfigError(FedCondError, ValueError):
    """Bad configuration: unknown key, wrong type, out-of-range value, shape mismatch."""


class InvalidInputError(FedCondError, ValueError):
    pass


class ParseError(FedCondError, ValueError):
    pass


class ProtocolError(FedCondError):
    """An update that does not fit the server's model."""
