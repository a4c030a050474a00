"""Exception hierarchy shared across the package."""


class SoftswimError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(SoftswimError):
    """Invalid or inconsistent configuration / input files."""


class MeshingError(SoftswimError):
    """Mesh generation failed (degenerate profile, inverted elements, ...)."""


class DegenerateGeometryError(SoftswimError):
    """Geometric quantity is undefined (coincident points, zero fiber, ...)."""


class InvertedElementError(SoftswimError):
    """An element reached det(F) <= 0 where the material model is undefined."""

    def __init__(self, element: int, det_f: float, step_index: int | None = None):
        self.element = element
        self.det_f = det_f
        self.step_index = step_index
        where = f" at step {step_index}" if step_index is not None else ""
        super().__init__(
            f"element {element} inverted (det F = {det_f:.3e}){where}"
        )


class ConvergenceError(SoftswimError):
    """Newton solve did not reach the residual tolerance."""

    def __init__(self, residual: float, tol: float, iterations: int,
                 step_index: int | None = None):
        self.residual = residual
        self.tol = tol
        self.iterations = iterations
        self.step_index = step_index
        where = f" at step {step_index}" if step_index is not None else ""
        super().__init__(
            f"Newton solve stalled{where}: residual {residual:.3e} > tol "
            f"{tol:.3e} after {iterations} iterations"
        )


class SingularSystemError(SoftswimError):
    """A step Hessian could not be factorized or solved."""

    def __init__(self, message: str, condition_estimate: float | None = None):
        self.condition_estimate = condition_estimate
        if condition_estimate is not None:
            message = f"{message} (condition estimate {condition_estimate:.3e})"
        super().__init__(message)
