"""Exception hierarchy shared by all fedsim modules."""


class FedsimError(Exception):
    """Base class for all errors raised by fedsim."""


class ParameterError(FedsimError, ValueError):
    """Invalid argument, configuration value, or precondition violation."""


class DataFormatError(FedsimError, ValueError):
    """Malformed on-disk data (dataset CSV, partition CSV, params file)."""


class PartitionInfeasibleError(FedsimError, RuntimeError):
    """Partition synthesis cannot proceed (e.g. every class pool exhausted)."""


class NumericError(FedsimError, ArithmeticError):
    """Non-finite value encountered where the contract requires finiteness."""


class ProtocolError(FedsimError, RuntimeError):
    """Federated protocol violated (e.g. aggregating an empty update list)."""
