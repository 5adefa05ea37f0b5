"""Exception types shared across the package."""


class KinematicsError(Exception):
    """Base class for kinematic failures."""


class Unreachable(KinematicsError):
    def __init__(self, chain, distance=None):
        self.chain = chain
        self.distance = distance
        msg = f"coupling point of chain {chain} outside its reachable annulus"
        if distance is not None:
            msg += f" (distance {distance:.6g} m)"
        super().__init__(msg)


class SingularChain(KinematicsError):
    def __init__(self, chain, det):
        self.chain = chain
        self.det = det
        super().__init__(f"chain {chain} is stretched or folded (|det| = {abs(det):.3g})")


class PlatformSingular(KinematicsError):
    def __init__(self, det):
        self.det = det
        super().__init__(f"platform (type II) singularity (|det| = {abs(det):.3g})")


class NoConvergence(KinematicsError):
    def __init__(self, iterations, residual=None):
        self.iterations = iterations
        self.residual = residual
        msg = f"forward kinematics did not converge in {iterations} iterations"
        if residual is not None:
            msg += f" (residual {residual:.3g} rad)"
        super().__init__(msg)


class WorkingModeMismatch(KinematicsError):
    pass


class NotSPD(ValueError):
    pass


class InsufficientExcitation(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` is the dotted key path."""

    def __init__(self, field, message, line=None):
        self.field = field
        self.message = message
        self.line = line
        where = field if line is None else f"{field} (line {line})"
        super().__init__(f"{where}: {message}")
