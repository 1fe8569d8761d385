"""Market primitives: coefficients, finite-atom jump measure, strategies.

The economy is a single risky asset with deterministic rates r0(s) < r(s),
volatility sigma(s), and a compound-Poisson jump component given by a finite
list of atoms (jump mark e_i with intensity nu_i) whose effect on the asset
enters through a per-atom size coefficient phi_i(s) >= -1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientFn
from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class LevyAtom:
    """One atom of the jump measure: mark, intensity, size coefficient."""

    size: float
    intensity: float
    phi: CoefficientFn


@dataclass(frozen=True)
class LevyAtomMeasure:
    """Finite-activity jump measure as a tuple of weighted atoms."""

    atoms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))

    def __len__(self):
        return len(self.atoms)

    @property
    def intensities(self) -> np.ndarray:
        return np.array([a.intensity for a in self.atoms], dtype=float)

    @property
    def total_intensity(self) -> float:
        return float(sum(a.intensity for a in self.atoms))

    def phi_values(self, s) -> np.ndarray:
        """Vector of phi_i(s) over atoms (empty array when no atoms)."""
        return np.array([a.phi(s) for a in self.atoms], dtype=float)

    def phi2_nu(self, s) -> float:
        """Sum over atoms of phi_i(s)^2 * nu_i."""
        return float(sum(a.phi(s) ** 2 * a.intensity for a in self.atoms))

    @classmethod
    def from_list(cls, entries, horizon: float) -> "LevyAtomMeasure":
        """Build from [(size, intensity, coefficient-or-samples), ...]."""
        atoms = []
        for size, intensity, coeff in entries:
            if isinstance(coeff, CoefficientFn):
                phi = coeff
            else:
                phi = CoefficientFn.from_samples(coeff, horizon)
            atoms.append(LevyAtom(float(size), float(intensity), phi))
        return cls(tuple(atoms))


@dataclass(frozen=True)
class MarketParams:
    """The full model data of the mean-variance economy.

    Construction validates the standing assumptions (r > r0, ellipticity,
    nonnegative intensities, limited liability) and raises ValidationError
    on violation. Pass ``strict=False`` to build an invalid instance for
    inspection with :func:`validate`.
    """

    r0: CoefficientFn
    r: CoefficientFn
    sigma: CoefficientFn
    jumps: LevyAtomMeasure
    T: float
    mu: float
    x0: float
    ellipticity_eps: float = 1e-10
    strict: bool = True

    def __post_init__(self):
        if self.strict:
            report = validate(self)
            if report:
                raise ValidationError("; ".join(report))

    def check_time(self, s) -> None:
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < -1e-12) or np.any(s_arr > self.T + 1e-12):
            raise DomainError(f"time {s!r} outside [0, {self.T}]")


def _sample_times(params: MarketParams, n: int = 513) -> np.ndarray:
    """Union of the coefficient grids and a uniform refinement."""
    pieces = [np.linspace(0.0, params.T, n), params.r0.times, params.r.times,
              params.sigma.times]
    pieces += [a.phi.times for a in params.jumps.atoms]
    return np.unique(np.concatenate(pieces))


def validate(params: MarketParams) -> list:
    """Report-style invariant check; empty list means valid."""
    report = []
    if not (params.T > 0):
        report.append("horizon T must be positive")
        return report
    if params.mu < 0:
        report.append("risk-aversion weight mu must be >= 0")
    times = _sample_times(params)
    rho = params.r(times) - params.r0(times)
    if np.any(rho <= 0):
        report.append("excess return violated: r(s) <= r0(s) at some s")
    for i, atom in enumerate(params.jumps.atoms):
        if atom.intensity < 0:
            report.append(f"atom {i}: negative intensity")
        if np.any(atom.phi(times) < -1.0 - 1e-12):
            report.append(f"atom {i}: phi(s,e) < -1 (limited liability)")
    sig2 = params.sigma(times) ** 2
    jump2 = np.zeros_like(times)
    for atom in params.jumps.atoms:
        jump2 += atom.phi(times) ** 2 * atom.intensity
    if np.any(sig2 + jump2 < params.ellipticity_eps):
        report.append("ellipticity violated: sigma^2 + sum phi^2 nu below eps")
    return report


def excess_return(params: MarketParams, s):
    """rho(s) = r(s) - r0(s); strictly positive for valid params."""
    params.check_time(s)
    return params.r(s) - params.r0(s)


def sigma_tot_sq(params: MarketParams, s):
    """sigma(s)^2 + sum_i phi_i(s)^2 nu_i (the strategy denominator)."""
    params.check_time(s)
    s_arr = np.asarray(s, dtype=float)
    out = params.sigma(s_arr) ** 2
    for atom in params.jumps.atoms:
        out = out + atom.phi(s_arr) ** 2 * atom.intensity
    return float(out) if np.isscalar(s) or s_arr.ndim == 0 else out


def kappa(params: MarketParams, s):
    """kappa(s) = rho(s) / (sigma(s)^2 + sum phi^2 nu)."""
    return excess_return(params, s) / sigma_tot_sq(params, s)


@dataclass(frozen=True)
class LinearStrategy:
    """Feedback rule u = phi^s(z) = alpha(s) * z."""

    alpha: CoefficientFn

    def control(self, s, z):
        return self.alpha(s) * np.asarray(z, dtype=float)

    def scaled(self, factor: float) -> "LinearStrategy":
        return LinearStrategy(CoefficientFn(self.alpha.times,
                                            self.alpha.values * factor))

    @classmethod
    def zero(cls, horizon: float) -> "LinearStrategy":
        return cls(CoefficientFn.constant(0.0, horizon))


@dataclass(frozen=True)
class ConstantControl:
    """Open-loop constant control u(s, z) = value; used by MC sanity checks."""

    value: float

    def control(self, s, z):
        return np.full_like(np.asarray(z, dtype=float), self.value)
