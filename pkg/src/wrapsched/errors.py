"""Exception hierarchy shared by every module in the package."""


class WrapschedError(Exception):
    """Base class for all package errors."""


class ValidationError(WrapschedError):
    """Malformed input: bad schema, broken invariant, invalid argument."""


class CyclicGraphError(ValidationError):
    """Layer graph contains a cycle and cannot be serialized."""


class InvalidConfigurationError(ValidationError):
    """Configuration four-tuple violates a structural invariant."""


class UnroutableBranchError(ValidationError):
    """Relay annotation has no downstream consumer inside the chain."""


class SchemaError(ValidationError):
    """JSON document does not match the expected schema/version."""


class NoFeasibleMicrobatchError(WrapschedError):
    """Even a microbatch of one does not fit in device memory."""


class InsufficientSamplesError(ValidationError):
    """Fewer than two distinct-microbatch samples for a (layer, pass)."""


class ProfileRangeError(WrapschedError):
    """Cost model evaluated above its fitted microbatch range."""


class MissingProfileError(WrapschedError):
    """No cost model for the requested (layer, pass)."""


class LayerTooLargeError(WrapschedError):
    """A single layer's memory at the requested microbatch exceeds capacity."""


class UnpackableError(WrapschedError):
    """No capacity-feasible packing exists, even with singleton packs."""


class NoFeasibleConfigurationError(WrapschedError):
    """Every candidate configuration in a search was infeasible."""


class DeadlockError(WrapschedError):
    """Simulation stalled with pending work: the task graph is inconsistent."""


class CapacityViolationError(ValidationError):
    """A pack exceeds the per-GPU memory budget of the scheduling problem."""


class NonIntegralTargetError(WrapschedError):
    """Target makespan formula does not divide evenly for this instance."""


class TooLargeError(WrapschedError):
    """Instance exceeds the exhaustive enumeration limits."""


class NonUniformModelError(ValidationError):
    """Closed-form swap analysis requires identical per-layer sizes."""
