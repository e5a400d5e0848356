"""Stepsize schedules: constants and 1/t decays."""

from dataclasses import dataclass

from .errors import BadParameter


@dataclass(frozen=True)
class Constant:
    value: float

    def __post_init__(self):
        if self.value <= 0:
            raise BadParameter(f"stepsize must be positive, got {self.value}")

    def __call__(self, t: int) -> float:
        return self.value


@dataclass(frozen=True)
class Harmonic:
    """base / (1 + t / tau), an O(1/t) decay with a warmup horizon tau."""

    base: float
    tau: float = 20.0

    def __post_init__(self):
        if self.base <= 0 or self.tau <= 0:
            raise BadParameter("Harmonic schedule needs positive base and tau")

    def __call__(self, t: int) -> float:
        return self.base / (1.0 + t / self.tau)


def as_schedule(value):
    """Coerce a float to a Constant schedule; pass callables through."""
    if callable(value):
        return value
    return Constant(float(value))
