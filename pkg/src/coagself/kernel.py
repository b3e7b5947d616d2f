"""Homogeneity-zero coagulation kernels close to the constant kernel.

A kernel carries its closeness certificate ``(epsilon, alpha)``: with
``W = K - 2`` it promises ``-epsilon <= W(x, y)`` and
``W(x, y) <= epsilon * ((x/y)**alpha + (y/x)**alpha)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import KernelDomainError

__all__ = [
    "CoagulationKernel",
    "ValidationReport",
    "make_constant",
    "make_power",
    "make_brownian",
    "from_spec",
    "validate",
]

VALIDATION_TOL = 1e-9
DEFAULT_SEED = 20130417


@dataclass(frozen=True)
class CoagulationKernel:
    """Rate kernel ``K(x, y)`` plus its ``(epsilon, alpha)`` certificate.

    ``evaluate`` must accept broadcastable numpy arrays and be pure.
    """

    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    epsilon: float
    alpha: float
    label: str

    def __call__(self, x, y):
        return self.evaluate(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def perturbation(self, x, y):
        """``W(x, y) = K(x, y) - 2``."""
        return self(x, y) - 2.0

    def ratio_profile(self, log_ratio):
        """``K(1, exp(d))`` -- by homogeneity this determines the whole kernel."""
        d = np.asarray(log_ratio, dtype=float)
        return self.evaluate(np.ones_like(d), np.exp(d))

    def envelope(self, x, y):
        r = np.asarray(x, dtype=float) / np.asarray(y, dtype=float)
        return self.epsilon * (r**self.alpha + r ** (-self.alpha))


def _constant(x, y):
    return np.full(np.broadcast(x, y).shape, 2.0)


def make_constant() -> CoagulationKernel:
    return CoagulationKernel(_constant, 0.0, 0.0, "constant")


def make_power(eps: float, alpha: float) -> CoagulationKernel:
    """Saturating family ``K = 2 + eps*((x/y)**alpha + (y/x)**alpha)``."""
    eps = float(eps)
    alpha = float(alpha)
    if not eps >= 0.0:
        raise KernelDomainError(f"eps must be >= 0, got {eps}")
    if not 0.0 <= alpha < 1.0:
        raise KernelDomainError(f"alpha must lie in [0, 1), got {alpha}")
    if eps == 0.0:
        return CoagulationKernel(_constant, 0.0, alpha, f"power:{eps!r}:{alpha!r}")

    def evaluate(x, y):
        r = x / y
        return 2.0 + eps * (r**alpha + r ** (-alpha))

    return CoagulationKernel(evaluate, eps, alpha, f"power:{eps!r}:{alpha!r}")


def make_brownian() -> CoagulationKernel:
    """Smoluchowski's kernel ``(x^{1/3} + y^{1/3})(x^{-1/3} + y^{-1/3})``."""

    def evaluate(x, y):
        a = np.cbrt(x)
        b = np.cbrt(y)
        return (a + b) * (1.0 / a + 1.0 / b)

    return CoagulationKernel(evaluate, 1.0, 1.0 / 3.0, "brownian")


def from_spec(spec: str) -> CoagulationKernel:
    """Parse ``constant``, ``brownian`` or ``power:<eps>:<alpha>``."""
    spec = spec.strip()
    if spec == "constant":
        return make_constant()
    if spec == "brownian":
        return make_brownian()
    parts = spec.split(":")
    if parts[0] == "power" and len(parts) == 3:
        try:
            eps, alpha = float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise KernelDomainError(f"bad kernel spec {spec!r}") from exc
        return make_power(eps, alpha)
    raise KernelDomainError(f"unknown kernel spec {spec!r}")


@dataclass(frozen=True)
class ValidationReport:
    """Largest sampled violation of each kernel assumption."""

    samples: int
    symmetry: float
    homogeneity: float
    lower_bound: float
    upper_envelope: float
    derivative_constant: float

    @property
    def passed(self) -> bool:
        worst = max(self.symmetry, self.homogeneity, self.lower_bound, self.upper_envelope)
        return worst <= VALIDATION_TOL and np.isfinite(self.derivative_constant)

    def as_dict(self) -> dict:
        return {
            "samples": self.samples,
            "symmetry": self.symmetry,
            "homogeneity": self.homogeneity,
            "lower_bound": self.lower_bound,
            "upper_envelope": self.upper_envelope,
            "derivative_constant": self.derivative_constant,
            "passed": self.passed,
        }


def validate(k: CoagulationKernel, samples: int = 1000, seed: int = DEFAULT_SEED) -> ValidationReport:
    """Sample the kernel assumptions on log-uniform points of ``[1e-6, 1e6]^2``.

    Violations are scaled by ``max(1, K)`` so they are comparable across
    kernels with large ratios; the derivative constant is the smallest ``C``
    consistent with ``|dK/dx| <= C*eps/x * envelope`` on the samples.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    x = 10.0 ** rng.uniform(-6.0, 6.0, samples)
    y = 10.0 ** rng.uniform(-6.0, 6.0, samples)
    lam = 10.0 ** rng.uniform(-3.0, 3.0, samples)

    kxy = k(x, y)
    scale = np.maximum(1.0, np.abs(kxy))
    symmetry = float(np.max(np.abs(kxy - k(y, x)) / scale))
    homogeneity = float(np.max(np.abs(k(lam * x, lam * y) - kxy) / scale))
    w = kxy - 2.0
    lower = float(np.max(np.maximum(0.0, -k.epsilon - w) / scale))
    upper = float(np.max(np.maximum(0.0, w - k.envelope(x, y)) / scale))

    h = x * 1e-5
    dkdx = (k(x + h, y) - k(x - h, y)) / (2.0 * h)
    lhs = np.abs(dkdx) * x
    # central-difference noise on a flat kernel is ~1e-11 relative
    lhs = np.where(lhs <= 1e-9 * scale, 0.0, lhs)
    env = k.envelope(x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lhs == 0.0, 0.0, lhs / env)
    derivative = float(np.max(ratio))
    return ValidationReport(samples, symmetry, homogeneity, lower, upper, derivative)
