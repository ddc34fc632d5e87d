"""Exception hierarchy shared by the pricing, quantization and CLI layers."""

from __future__ import annotations


class HestonError(Exception):
    """Base class for every error raised by this package."""


class InvalidRectangle(HestonError, ValueError):
    pass


class EmptyCell(HestonError):
    """A Voronoi cell carries (numerically) zero probability mass."""

    def __init__(self, index: int, mass: float):
        super().__init__(f"cell {index} has probability mass {mass:.3e}")
        self.index = index
        self.mass = mass


class NoConvergence(HestonError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"fixed point not reached after {iterations} iterations "
            f"(last residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


class IntegrationFailure(HestonError):
    pass


class NodeComputationFailure(HestonError):
    pass


class OutOfBounds(HestonError, ValueError):
    """Option price violates the no-arbitrage bounds of its kind."""


class ModelPriceFailure(HestonError):
    pass


class NoImprovement(HestonError):
    pass


class FellerViolation(HestonError, ValueError):
    pass


class DateMismatch(HestonError, ValueError):
    pass


class ConfigError(HestonError):
    pass


class TreeBuildError(HestonError):
    """Wraps a failure during tree construction with its location."""

    def __init__(self, step: int, component: str, cause: Exception):
        super().__init__(f"step {step}, {component} layer: {cause}")
        self.step = step
        self.component = component
        self.cause = cause
