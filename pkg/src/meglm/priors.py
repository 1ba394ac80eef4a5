"""Prior specifications for latent coefficients and hyperparameters.

Three kinds are supported: Gaussian (mean, precision), Gamma (shape, rate)
and a fixed constant. Gaussians are parameterized by precision throughout;
precision 0 encodes an improper flat prior, whose log density contributes
nothing. Gamma priors are used for precision parameters and require strictly
positive shape and rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

from .errors import SpecError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianPrior:
    mean: float = 0.0
    precision: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.mean):
            raise SpecError("Gaussian prior mean must be finite")
        if not (self.precision >= 0.0) or not math.isfinite(self.precision):
            raise SpecError(
                "Gaussian prior precision must be finite and >= 0, got %r"
                % (self.precision,)
            )

    def log_density(self, value: float) -> float:
        if self.precision == 0.0:
            return 0.0
        r = value - self.mean
        return 0.5 * (math.log(self.precision) - LOG_2PI) - 0.5 * self.precision * r * r


@dataclass(frozen=True)
class GammaPrior:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0.0 and math.isfinite(self.shape)):
            raise SpecError("Gamma prior shape must be > 0, got %r" % (self.shape,))
        if not (self.rate > 0.0 and math.isfinite(self.rate)):
            raise SpecError("Gamma prior rate must be > 0, got %r" % (self.rate,))

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def log_density(self, value: float) -> float:
        if value <= 0.0:
            return -math.inf
        a, b = self.shape, self.rate
        return (
            a * math.log(b)
            - math.lgamma(a)
            + (a - 1.0) * math.log(value)
            - b * value
        )


@dataclass(frozen=True)
class FixedValue:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise SpecError("Fixed value must be finite")

    def log_density(self, value: float) -> float:
        # A point mass carries no density to accumulate; evaluation at any
        # other value is a caller bug and is treated as such.
        if value != self.value:
            raise SpecError(
                "fixed parameter evaluated away from its value (%r != %r)"
                % (value, self.value)
            )
        return 0.0


Prior = Union[GaussianPrior, GammaPrior, FixedValue]
