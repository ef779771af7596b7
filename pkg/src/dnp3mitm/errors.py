"""Exception roots shared across the package."""


class CodecError(ValueError):
    """Base class for every DNP3 encode/decode failure."""


class SimulationError(RuntimeError):
    """Base class for failures raised by the network simulator."""
