"""Exception and warning types raised across the package."""

from __future__ import annotations


class MeshflowError(Exception):
    """Base class for all package errors."""


class DegenerateElement(MeshflowError):
    def __init__(self, element: int, det: float, floor: float | None = None):
        self.element = int(element)
        self.det = float(det)
        self.floor = floor
        msg = f"element {element} is degenerate (det={det:.3e}"
        if floor is not None:
            msg += f", floor={floor:.3e}"
        super().__init__(msg + ")")


class FoldedElement(MeshflowError):
    """An element whose orientation flipped, or whose energy is undefined for r < 0."""

    def __init__(self, elements, message: str | None = None):
        self.elements = [int(e) for e in elements]
        head = self.elements[:5]
        more = "" if len(self.elements) <= 5 else f" (+{len(self.elements) - 5} more)"
        super().__init__(message or f"folded element(s) {head}{more}")


class UnresolvedVertex(MeshflowError):
    def __init__(self, vertex: int, point):
        self.vertex = int(vertex)
        super().__init__(f"boundary vertex {vertex} at {list(point)} matches no constraint")


class PointOutside(MeshflowError):
    def __init__(self, point, element: int, bary):
        self.point = point
        self.element = int(element)
        self.bary = bary
        super().__init__(
            f"point {list(point)} outside mesh (closest element {element}, "
            f"min barycentric {min(bary):.3e})"
        )


class MinStepReached(MeshflowError):
    def __init__(self, t: float, dt: float, elements=()):
        self.t = t
        self.dt = dt
        self.elements = [int(e) for e in elements]
        super().__init__(
            f"step size {dt:.3e} fell below minimum at t={t:.6g}; "
            f"offending elements {self.elements[:5]}"
        )


class MaxStepsExceeded(MeshflowError):
    def __init__(self, steps: int, t: float):
        self.steps = steps
        self.t = t
        super().__init__(f"exceeded {steps} steps at t={t:.6g}")


class ParseError(MeshflowError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class IndexOutOfRange(MeshflowError):
    pass


class NonSPDCallback(UserWarning):
    """A metric callback returned tensors that needed eigenvalue flooring."""


class InsufficientStencil(UserWarning):
    """Hessian recovery had a rank-deficient least-squares system at some vertex."""
