"""Constitutive relations: open-circuit potentials, kinetics, effective transport
and electrolyte property correlations.

Everything here is a pure function of its arguments. The solver uses the
``*_unchecked`` OCP evaluators, which extrapolate linearly outside the
admissible window instead of raising, so that Newton iterates wandering past
the window edge stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

FARADAY = 96485.33
R_GAS = 8.314

NMC622_COEFFS = (-204.3, -166.6, -172.4, 167.3, 272.2, -158.1, 221.4, -331.6, 200.1, 38.07)
LFP_PLATEAU = 3.413
LFP_AMPLITUDE = 0.001


class DomainError(ValueError):
    """Stoichiometry outside the range an OCP curve is defined on."""


class ConfigurationError(ValueError):
    """Physically inconsistent parameters."""


class StateError(ValueError):
    """State variable outside its physical range."""


@dataclass(frozen=True)
class KineticsContext:
    T: float = 293.15
    F: float = FARADAY
    R_gas: float = R_GAS

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigurationError(f"temperature must be positive, got {self.T}")

    @property
    def thermal_voltage(self) -> float:
        return self.R_gas * self.T / self.F


@dataclass(frozen=True)
class OcpCurve:
    """Open-circuit potential as a function of stoichiometry.

    ``variant`` is one of ``"nmc622-rational"``, ``"lfp-plateau"`` or
    ``"tabulated"``. For the tabulated variant ``coefficients`` holds the
    stoichiometry grid followed by the voltages (equal halves).
    """

    variant: str
    coefficients: tuple[float, ...]
    window: tuple[float, float]

    def __post_init__(self):
        lo, hi = self.window
        if not lo < hi:
            raise ConfigurationError(f"empty OCP window {self.window}")
        if self.variant == "nmc622-rational":
            if len(self.coefficients) != 10:
                raise ConfigurationError("nmc622-rational needs exactly 10 coefficients")
        elif self.variant == "lfp-plateau":
            if len(self.coefficients) != 2:
                raise ConfigurationError("lfp-plateau needs (plateau, amplitude)")
        elif self.variant == "tabulated":
            n = len(self.coefficients)
            if n < 4 or n % 2:
                raise ConfigurationError("tabulated OCP needs matching x and U columns")
            xs = np.asarray(self.coefficients[: n // 2])
            if np.any(np.diff(xs) <= 0):
                raise ConfigurationError("tabulated OCP stoichiometry must be strictly increasing")
        else:
            raise ConfigurationError(f"unknown OCP variant {self.variant!r}")

    @classmethod
    def tabulated(cls, x: Sequence[float], u: Sequence[float]) -> "OcpCurve":
        x = tuple(float(v) for v in x)
        return cls("tabulated", x + tuple(float(v) for v in u), (x[0], x[-1]))

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        lo, hi = self.window
        bad = (x_arr < lo) | (x_arr > hi) | ~np.isfinite(x_arr)
        if np.any(bad):
            first = x_arr[bad].flat[0] if x_arr.ndim else float(x_arr)
            raise DomainError(f"stoichiometry {first!r} outside OCP window [{lo}, {hi}]")
        u, _ = self.value_and_slope(x_arr)
        return float(u) if np.ndim(x) == 0 else u

    def value_and_slope(self, x):
        """Return ``(U, dU/dx)`` with linear extrapolation outside the window."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.window
        xc = np.clip(x, lo, hi)
        u, du = _ocp_raw(self.variant, self.coefficients, xc)
        return u + du * (x - xc), du


def _ocp_raw(variant, coeffs, x):
    if variant == "nmc622-rational":
        p1, p2, p3, p4, p5, q1, q2, q3, q4, q5 = coeffs
        num = (((p1 * x + p2) * x + p3) * x + p4) * x + p5
        dnum = ((4 * p1 * x + 3 * p2) * x + 2 * p3) * x + p4
        den = ((((x + q1) * x + q2) * x + q3) * x + q4) * x + q5
        dden = (((5 * x + 4 * q1) * x + 3 * q2) * x + 2 * q3) * x + q4
        return num / den, (dnum * den - num * dden) / den**2
    if variant == "lfp-plateau":
        plateau, amp = coeffs
        u = plateau + amp * (1.0 / x + 1.0 / (x - 1.0))
        du = -amp * (1.0 / x**2 + 1.0 / (x - 1.0) ** 2)
        return u, du
    n = len(coeffs) // 2
    xs = np.asarray(coeffs[:n])
    us = np.asarray(coeffs[n:])
    k = np.clip(np.searchsorted(xs, x) - 1, 0, n - 2)
    slope = (us[k + 1] - us[k]) / (xs[k + 1] - xs[k])
    return us[k] + slope * (x - xs[k]), slope


NMC622_OCP = OcpCurve("nmc622-rational", NMC622_COEFFS, (0.27, 0.922))
# Strictly inside (0, 1) because the hyperbolic terms are singular at both ends.
LFP_OCP = OcpCurve("lfp-plateau", (LFP_PLATEAU, LFP_AMPLITUDE), (1e-6, 1.0 - 1e-6))


def ocp_nmc622(x):
    """NMC622 open-circuit potential (V) from a 4/5 rational fit.

    Raises :class:`DomainError` for stoichiometries outside ``[0.27, 0.922]``;
    the fit has a pole just above 0.9238.
    """
    return NMC622_OCP(x)


def ocp_lfp(y):
    """LFP open-circuit potential (V): flat plateau with hyperbolic end walls."""
    y_arr = np.asarray(y, dtype=float)
    if np.any((y_arr <= 0.0) | (y_arr >= 1.0)) or not np.all(np.isfinite(y_arr)):
        raise DomainError(f"LFP stoichiometry must lie strictly in (0, 1), got {y!r}")
    u = LFP_PLATEAU + LFP_AMPLITUDE * (1.0 / y_arr + 1.0 / (y_arr - 1.0))
    return float(u) if np.ndim(y) == 0 else u


@dataclass(frozen=True)
class ChemistrySpec:
    name: str
    c_s_max: float
    D_s: float
    k_rate: float
    R_p: float
    ocp: OcpCurve
    # Share of the non-electrolyte volume that stores exchangeable lithium.
    # None means the textbook 1 - eps_e - eps_cbd.
    capacity_share: float | None = None
    density: float = 4700.0  # kg/m^3, active material

    def __post_init__(self):
        for name in ("c_s_max", "D_s", "k_rate", "R_p"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{self.name}: {name} must be positive")
        if self.capacity_share is not None and not 0 < self.capacity_share <= 1:
            raise ConfigurationError(f"{self.name}: capacity_share must lie in (0, 1]")

    def ocp_value(self, stoich):
        return self.ocp.value_and_slope(stoich)[0]


def specific_surface_area(eps_e: float, eps_cbd: float, R_p: float) -> float:
    """Active surface per electrode volume, ``3 * eps_solid / R_p`` (1/m)."""
    solid = 1.0 - eps_e - eps_cbd
    if not solid > 0 or eps_e < 0 or eps_cbd < 0:
        raise ConfigurationError(
            f"non-physical volume fractions eps_e={eps_e}, eps_cbd={eps_cbd} (solid fraction {solid:.4g})"
        )
    if not R_p > 0:
        raise ConfigurationError(f"particle radius must be positive, got {R_p}")
    return 3.0 * solid / R_p


def effective_transport(bulk_value, eps, b):
    """Bruggeman correction ``bulk * eps**b``."""
    if not 0 < eps <= 1:
        raise ConfigurationError(f"porosity must lie in (0, 1], got {eps}")
    if b < 1:
        raise ConfigurationError(f"Bruggeman exponent must be >= 1, got {b}")
    return bulk_value * eps**b


def exchange_current_density(k, c_e, c_surf, c_s_max, ctx: KineticsContext = KineticsContext()):
    """``F k sqrt(c_e c_surf (c_max - c_surf))`` in A/m^2."""
    c_e = np.asarray(c_e, dtype=float)
    c_surf = np.asarray(c_surf, dtype=float)
    if np.any(c_surf > c_s_max):
        raise StateError(f"surface concentration exceeds c_s_max={c_s_max} (over-lithiation)")
    if np.any(c_e < 0) or np.any(c_surf < 0):
        raise StateError("concentrations must be non-negative")
    j0 = ctx.F * k * np.sqrt(c_e * c_surf * (c_s_max - c_surf))
    return float(j0) if j0.ndim == 0 else j0


_LOG_MAX = float(np.log(np.finfo(float).max))


def sinh_guarded(x):
    """sinh that cannot overflow.

    Beyond |x| > 30 the value is ``sign(x) * exp(|x| - ln 2)`` with the
    exponent capped at the log of the largest finite double.
    """
    x = np.asarray(x, dtype=float)
    big = np.abs(x) > 30.0
    out = np.atleast_1d(np.sinh(np.where(big, 0.0, x)))
    if np.any(big):
        xb = np.atleast_1d(x)[np.atleast_1d(big)]
        out[np.atleast_1d(big)] = np.sign(xb) * np.exp(np.minimum(np.abs(xb) - np.log(2.0), _LOG_MAX))
    return out.reshape(x.shape)


def butler_volmer(J0, eta, ctx: KineticsContext = KineticsContext()):
    """Symmetric Butler-Volmer current density ``2 J0 sinh(F eta / 2RT)``.

    Large arguments are evaluated as ``J0 exp(|x|)`` in log space so the
    product with ``J0`` saturates at the largest double instead of overflowing.
    """
    J0, x = np.broadcast_arrays(np.asarray(J0, dtype=float),
                                np.asarray(eta, dtype=float) / (2.0 * ctx.thermal_voltage))
    if np.any(J0 < 0):
        raise ValueError("exchange current density must be non-negative")
    big = (np.abs(x) > 30.0) & (J0 > 0)
    j = np.atleast_1d(2.0 * J0 * sinh_guarded(np.where(big, 0.0, x)))
    if np.any(big):
        b = np.atleast_1d(big)
        xb, jb = np.atleast_1d(x)[b], np.atleast_1d(J0)[b]
        j[b] = np.sign(xb) * np.exp(np.minimum(np.log(jb) + np.abs(xb), _LOG_MAX))
    j = j.reshape(x.shape)
    return float(j) if j.ndim == 0 else j


# --- electrolyte correlations (LiPF6 in carbonates, c in mol/m^3) ----------

def valoen_reimers_diffusivity(c, T):
    cm = np.asarray(c, dtype=float) / 1000.0
    return 1e-4 * 10.0 ** (-4.43 - 54.0 / (T - 229.0 - 5.0 * cm) - 0.22 * cm)


def valoen_reimers_conductivity(c, T):
    cm = np.asarray(c, dtype=float) / 1000.0
    poly = (
        -10.5 + 0.074 * T - 6.96e-5 * T**2
        + cm * (0.668 - 0.0178 * T + 2.8e-5 * T**2)
        + cm**2 * (0.494 - 8.86e-4 * T)
    )
    return 0.1 * cm * poly**2


def valoen_reimers_activity(c, T, t_plus=0.37):
    """Thermodynamic factor ``1 + dln f / dln c`` for a constant transference number."""
    cm = np.asarray(c, dtype=float) / 1000.0
    return (0.601 - 0.24 * np.sqrt(cm) + 0.982 * (1.0 - 0.0052 * (T - 294.0)) * cm**1.5) / (1.0 - t_plus)


def unit_activity(c, T):
    return np.ones_like(np.asarray(c, dtype=float))


@dataclass(frozen=True)
class ElectrolyteSpec:
    c_e0: float = 1000.0
    t_plus: float = 0.37
    D_e_bulk: Callable = valoen_reimers_diffusivity
    kappa_e_bulk: Callable = valoen_reimers_conductivity
    activity: Callable | None = None
    name: str = "valoen-reimers"
    # multipliers on the correlations, for calibrating against another solver
    D_scale: float = 1.0
    kappa_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.t_plus < 1:
            raise ConfigurationError(f"transference number must lie in (0, 1), got {self.t_plus}")
        if not self.c_e0 > 0:
            raise ConfigurationError("initial electrolyte concentration must be positive")
        if not (self.D_scale > 0 and self.kappa_scale > 0):
            raise ConfigurationError("correlation scale factors must be positive")

    def activity_factor(self, c, T):
        if self.activity is None:
            return valoen_reimers_activity(c, T, self.t_plus)
        return self.activity(c, T)

    def properties(self, c, T):
        return (self.D_scale * self.D_e_bulk(c, T), self.kappa_scale * self.kappa_e_bulk(c, T),
                self.activity_factor(c, T))

    def properties_with_slopes(self, c, T):
        """Values and d/dc of (D, kappa, activity) by central differences."""
        c = np.asarray(c, dtype=float)
        h = 1e-6 * np.maximum(c, 1.0)
        lo = self.properties(c - h, T)
        hi = self.properties(c + h, T)
        mid = self.properties(c, T)
        return mid, tuple((b - a) / (2 * h) for a, b in zip(lo, hi))


def electrolyte_properties(c_e, T, spec: ElectrolyteSpec):
    """Bulk ``(D_e, kappa_e, activity_factor)`` at concentration ``c_e``.

    Non-positive concentrations raise :class:`StateError`; the solver uses
    this as its depletion signal.
    """
    c = np.asarray(c_e, dtype=float)
    if np.any(c <= 0):
        raise StateError(f"electrolyte depleted: c_e={c_e!r}")
    D, kappa, act = spec.properties(c, T)
    if c.ndim == 0:
        return float(D), float(kappa), float(act)
    return D, kappa, act
