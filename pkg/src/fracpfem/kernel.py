"""Interaction kernels for fractional-order and finite-horizon nonlocal operators.

A kernel is C * psi(|x-y|/delta) / |x-y|^(d+sp), where psi is the horizon
profile (identically 1 for the pure fractional case, a cutoff or exponential
damping for finite-horizon variants) and C is either the fractional
normalizing constant or 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FAMILIES = ("pure_fractional", "truncated", "tempered", "custom")

# integer codes shared with the compiled/numpy sweep backends
FAMILY_CODES = {"pure_fractional": 0, "truncated": 1, "tempered": 2, "custom": 3}


def normalizing_constant(d, s, p):
    """Normalizing constant C(d, s, p) of the fractional (s, p)-energy.

    For p = 2 it reduces to the classical constant of the integral
    fractional Laplacian, 2^(2s) s Gamma(s + d/2) / (pi^(d/2) Gamma(1-s)).
    """
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if p <= 1.0:
        raise ValueError(f"p must exceed 1, got {p}")
    num = s * (1.0 - s) * p * math.gamma(0.5 * (p * s + d)) * 2.0 ** (2.0 * s - 2.0)
    den = (
        math.pi ** (0.5 * (d - 1.0))
        * math.gamma(0.5 * ((p - 2.0) * s + 3.0))
        * math.gamma(2.0 - s)
    )
    return num / den


@dataclass(frozen=True)
class KernelSpec:
    """Kernel parameters: dimension, differentiability s, integrability p,
    horizon family and scale, and whether the fractional normalizing
    constant multiplies the kernel.

    Attributes:
        d: spatial dimension (1 or 2).
        s: fractional order, in (0, 1).
        p: integrability exponent, > 1.
        family: one of FAMILIES.
        delta: horizon scale; ignored by the pure fractional family.
        normalized: multiply by C(d, s, p) if True, by 1 otherwise.
        psi_table: (rho_grid, values) for the custom family; linear
            interpolation on [0, rho_grid[-1]], zero beyond.
    """

    d: int
    s: float
    p: float
    family: str = "pure_fractional"
    delta: float = 1.0
    normalized: bool = True
    psi_table: tuple = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if self.p <= 1.0:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if self.family != "pure_fractional" and self.delta <= 0.0:
            raise ValueError(f"horizon delta must be positive, got {self.delta}")
        if self.family == "custom":
            if self.psi_table is None:
                raise ValueError("custom family needs a psi_table")
            grid, vals = (np.asarray(a, dtype=float) for a in self.psi_table)
            if grid.ndim != 1 or grid.shape != vals.shape or grid.size < 2:
                raise ValueError("psi_table must be two equal-length 1d arrays")
            if grid[0] != 0.0 or np.any(np.diff(grid) <= 0.0):
                raise ValueError("psi_table grid must increase from 0")
            if np.any(vals < 0.0):
                raise ValueError("psi_table values must be non-negative")
            # non-degeneracy near 0: sampled lower bound must stay positive
            probes = np.linspace(0.0, 0.1 * grid[-1], 33)
            if np.min(np.interp(probes, grid, vals)) <= 0.0:
                raise ValueError("psi must be bounded below by a positive "
                                 "constant near 0")
            object.__setattr__(self, "psi_table", (grid, vals))

    @property
    def constant(self):
        """Kernel prefactor: C(d, s, p) when normalized, else 1."""
        return normalizing_constant(self.d, self.s, self.p) if self.normalized else 1.0

    @property
    def exponent(self):
        """Singularity exponent d + s*p."""
        return self.d + self.s * self.p

    def psi(self, rho):
        """Horizon profile psi evaluated at rho = |x-y| / delta."""
        rho = np.asarray(rho, dtype=float)
        if self.family == "pure_fractional":
            out = np.ones_like(rho)
        elif self.family == "truncated":
            out = np.where(rho <= 1.0, 1.0, 0.0)
        elif self.family == "tempered":
            out = np.exp(-rho)
        else:
            grid, vals = self.psi_table
            out = np.where(rho <= grid[-1], np.interp(rho, grid, vals), 0.0)
        return out if out.ndim else float(out)

    def family_code(self):
        return FAMILY_CODES[self.family]


def kernel_eval(spec, x, y):
    """Pointwise kernel value C psi(|x-y|/delta) |x-y|^(-d-sp).

    x, y: arrays of shape (..., d) or scalars in 1d. Coincident points
    raise ValueError (the kernel is singular on the diagonal).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.d == 1 and (x.ndim == 0 or x.shape[-1:] != (1,)):
        r = np.abs(x - y)
    else:
        r = np.sqrt(np.sum((x - y) ** 2, axis=-1))
    if np.any(r == 0.0):
        raise ValueError("kernel evaluated at coincident points")
    out = spec.constant * spec.psi(r / spec.delta) * r ** (-spec.exponent)
    return out if np.ndim(out) else float(out)


class GFunction:
    """Density G of the nonlocal energy and its derivatives in the
    difference-quotient variable rho = (u(x) - u(y)) / |x-y|^s.

    g       : (c/2p) psi |rho|^p
    g_rho   : (c/2)  psi |rho|^(p-2) rho
    g_tilde : (c/2)  psi |rho|^(p-2)
    """

    def __init__(self, spec):
        self.spec = spec

    def _psi_at(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.spec.d == 1 and (x.ndim == 0 or x.shape[-1:] != (1,)):
            r = np.abs(x - y)
        else:
            r = np.sqrt(np.sum((x - y) ** 2, axis=-1))
        return self.spec.psi(r / self.spec.delta)

    def g(self, rho, x, y):
        c = self.spec.constant
        p = self.spec.p
        val = (0.5 * c / p) * self._psi_at(x, y) * np.abs(rho) ** p
        return float(val) if np.ndim(val) == 0 else val

    def g_rho(self, rho, x, y):
        c = self.spec.constant
        p = self.spec.p
        rho = np.asarray(rho, dtype=float)
        # |rho|^(p-2) rho -> 0 as rho -> 0 for p > 1; avoid 0**negative
        mag = np.where(rho == 0.0, 0.0, np.abs(np.where(rho == 0.0, 1.0, rho)) ** (p - 1.0))
        val = 0.5 * c * self._psi_at(x, y) * mag * np.sign(rho)
        return float(val) if np.ndim(val) == 0 else val

    def g_tilde(self, rho, x, y):
        c = self.spec.constant
        p = self.spec.p
        rho = np.asarray(rho, dtype=float)
        mag = np.abs(rho) ** (p - 2.0)
        val = 0.5 * c * self._psi_at(x, y) * mag
        return float(val) if np.ndim(val) == 0 else val


def g_rho(spec, rho, x, y):
    """Derivative of the energy density in rho at the pair (x, y)."""
    return GFunction(spec).g_rho(rho, x, y)
