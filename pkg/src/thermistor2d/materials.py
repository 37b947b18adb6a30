"""Resistivity and thermal-conductivity models with hypothesis validators.

Every resistivity model exposes rho(s) for temperatures s > 0 and stays
strictly positive there; conductivity sigma is always the exact reciprocal.
The validator checks, on a sampled range [r, s_max], that rho fits a
two-sided power-law envelope C1 + C2*s^p <= rho(s) <= C3 + C4*s^p and that
kappa stays bounded between positive constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.interpolate import PchipInterpolator

LORENTZ_NUMBER = 2.44e-8  # W Ohm / K^2


class MaterialError(ValueError):
    """Raised for invalid model parameters or out-of-domain evaluation."""


def _as_positive_temperature(s) -> np.ndarray:
    arr = np.asarray(s, dtype=float)
    if arr.size == 0 or not np.all(arr > 0.0):
        raise MaterialError("temperature must be positive")
    return arr


def _scalarize(arr: np.ndarray, like) -> Union[float, np.ndarray]:
    return float(arr) if np.isscalar(like) or np.ndim(like) == 0 else arr


# ---------------------------------------------------------------------------
# Bloch-Gruneisen integral
# ---------------------------------------------------------------------------

def _bg_integrand(s: np.ndarray, n: float) -> np.ndarray:
    """s^n / ((e^s - 1)(1 - e^-s)), extended by its limit at s = 0."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    zero = s == 0.0
    out[zero] = 1.0 if n == 2 else 0.0
    sz = s[~zero]
    out[~zero] = sz**n * np.exp(-sz) / np.expm1(-sz) ** 2
    return out


def _adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                      tol: float, max_depth: int = 48) -> float:
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        err = left + right - whole
        if abs(err) <= 15.0 * tol:
            return left + right + err / 15.0
        if depth <= 0:
            raise MaterialError(
                f"quadrature did not converge on [{a}, {b}]: "
                f"achieved tolerance {abs(err) / 15.0:.3e}, requested {tol:.3e}")
        return (recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))

    return recurse(a, b, fa, fm, fb, whole, tol, max_depth)


def bg_integral(x, n: float, tol: float = 1e-10):
    """Integral of the Bloch-Gruneisen kernel from 0 to x, adaptively to tol.

    Accepts a scalar or an array of upper limits; an array is integrated once
    over consecutive segments and accumulated, so repeated values are cheap.
    """
    if n < 2:
        raise MaterialError(f"kernel exponent must be >= 2, got {n}")
    xs = np.asarray(x, dtype=float)
    if not np.all(xs > 0.0):
        raise MaterialError("upper limit must be positive")

    def f(s: float) -> float:
        return float(_bg_integrand(np.array([s]), n)[0])

    if xs.ndim == 0:
        return _adaptive_simpson(f, 0.0, float(xs), tol)

    uniq, inverse = np.unique(xs.ravel(), return_inverse=True)
    edges = np.concatenate(([0.0], uniq))
    seg_tol = tol / len(uniq)
    segs = [_adaptive_simpson(f, edges[k], edges[k + 1], seg_tol)
            for k in range(len(uniq))]
    cum = np.cumsum(segs)
    return cum[inverse].reshape(xs.shape)


# ---------------------------------------------------------------------------
# resistivity models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerLawResistivity:
    """rho(s) = a + b * s^p with a, b, p > 0."""

    a: float
    b: float
    p: float

    def __post_init__(self) -> None:
        if not (self.a > 0 and self.b > 0 and self.p > 0):
            raise MaterialError(
                f"power law needs a, b, p > 0, got a={self.a} b={self.b} p={self.p}")

    def rho(self, s):
        arr = _as_positive_temperature(s)
        return _scalarize(self.a + self.b * arr**self.p, s)

    def envelope_exponent_hint(self) -> float:
        return self.p


@dataclass(frozen=True)
class SemiconductorResistivity:
    """rho(s) = sigma0 * exp(q / s) * s with sigma0, q > 0."""

    sigma0: float
    q: float

    def __post_init__(self) -> None:
        if not (self.sigma0 > 0 and self.q > 0):
            raise MaterialError(
                f"semiconductor needs sigma0, q > 0, got {self.sigma0}, {self.q}")

    def rho(self, s):
        arr = _as_positive_temperature(s)
        return _scalarize(self.sigma0 * np.exp(self.q / arr) * arr, s)


@dataclass(frozen=True)
class BlochGruneisenResistivity:
    """rho(s) = rho0 + A * (s/theta)^n * bg_integral(theta/s, n)."""

    rho0: float
    A: float
    theta: float
    n: float

    def __post_init__(self) -> None:
        if not (self.rho0 >= 0 and self.A > 0 and self.theta > 0 and self.n >= 2):
            raise MaterialError(
                "Bloch-Gruneisen needs rho0 >= 0, A > 0, theta > 0, n >= 2")

    def rho(self, s):
        arr = _as_positive_temperature(s)
        val = self.rho0 + self.A * (arr / self.theta) ** self.n \
            * bg_integral(self.theta / arr, self.n)
        return _scalarize(np.asarray(val), s)


ResistivityModel = Union[PowerLawResistivity, SemiconductorResistivity,
                         BlochGruneisenResistivity]


# ---------------------------------------------------------------------------
# thermal conductivity models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantKappa:
    kappa0: float

    def __post_init__(self) -> None:
        if not self.kappa0 > 0:
            raise MaterialError(f"kappa0 must be positive, got {self.kappa0}")

    def kappa(self, s, sigma_fn=None):
        arr = _as_positive_temperature(s)
        return _scalarize(np.full_like(arr, self.kappa0), s)


@dataclass(frozen=True)
class WiedemannFranz:
    """kappa(s) = L * s * sigma(s), tied to the paired resistivity model."""

    L: float = LORENTZ_NUMBER

    def __post_init__(self) -> None:
        if not self.L > 0:
            raise MaterialError(f"Lorentz constant must be positive, got {self.L}")

    def kappa(self, s, sigma_fn=None):
        if sigma_fn is None:
            raise MaterialError("Wiedemann-Franz conductivity needs a resistivity model")
        arr = _as_positive_temperature(s)
        return _scalarize(self.L * arr * np.asarray(sigma_fn(arr)), s)


class SmoothBoundedKappa:
    """Monotone-cubic interpolation of a user table, flat beyond its ends."""

    def __init__(self, s_table, kappa_table):
        s_arr = np.asarray(s_table, dtype=float)
        k_arr = np.asarray(kappa_table, dtype=float)
        if s_arr.ndim != 1 or s_arr.size < 2 or s_arr.shape != k_arr.shape:
            raise MaterialError("conductivity table needs matching 1-d arrays, length >= 2")
        if np.any(np.diff(s_arr) <= 0):
            raise MaterialError("table temperatures must be strictly increasing")
        if not np.all(s_arr > 0) or not np.all(k_arr > 0):
            raise MaterialError("table entries must be positive")
        self.s_table = s_arr
        self.kappa_table = k_arr
        self._interp = PchipInterpolator(s_arr, k_arr, extrapolate=False)

    def __eq__(self, other):
        return (isinstance(other, SmoothBoundedKappa)
                and np.array_equal(self.s_table, other.s_table)
                and np.array_equal(self.kappa_table, other.kappa_table))

    def kappa(self, s, sigma_fn=None):
        arr = _as_positive_temperature(s)
        clipped = np.clip(arr, self.s_table[0], self.s_table[-1])
        return _scalarize(np.asarray(self._interp(clipped)), s)


ConductivityModel = Union[ConstantKappa, WiedemannFranz, SmoothBoundedKappa]


# ---------------------------------------------------------------------------
# paired material
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaterialPair:
    resistivity: ResistivityModel
    conductivity: ConductivityModel

    def rho(self, s):
        return self.resistivity.rho(s)

    def sigma(self, s):
        return 1.0 / self.resistivity.rho(s)

    def kappa(self, s):
        return self.conductivity.kappa(s, sigma_fn=self.sigma)


def sigma_upper_bound(model: ResistivityModel, r: float, s_max: float | None = None,
                      samples: int = 4096) -> float:
    """Sampled sup of sigma = 1/rho over [r, s_max] (default s_max = 1e6 r)."""
    if not r > 0:
        raise MaterialError(f"lower temperature bound must be positive, got {r}")
    if s_max is None:
        s_max = 1e6 * r
    grid = np.geomspace(r, s_max, samples)
    return float(np.max(1.0 / np.asarray(model.rho(grid))))


# ---------------------------------------------------------------------------
# hypothesis validation
# ---------------------------------------------------------------------------

_TREND_SLOPE_LIMIT = 0.05


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    h1_ok: bool
    h2_ok: bool
    p: float
    c1: float
    c2: float
    c3: float
    c4: float
    slack: float
    kappa_min: float
    kappa_max: float
    witness_s: float | None
    messages: tuple[str, ...]


def validate_H1_H2(pair: MaterialPair, r: float, s_max: float,
                   samples: int = 512) -> ValidityReport:
    """Check the boundedness and power-law envelope hypotheses on [r, s_max].

    The envelope exponent p comes from the model when it carries one (power
    law), otherwise from a log-log fit over the top decade of the sampled
    range. Constants are the extreme ratios rho / (1 + s^p); slack is their
    spread, so a perfect power-law model reports slack 1.
    """
    if not (0 < r < s_max):
        raise MaterialError(f"need 0 < r < s_max, got r={r}, s_max={s_max}")
    s = np.geomspace(r, s_max, samples)
    messages: list[str] = []
    witness: float | None = None

    rho = np.asarray(pair.rho(s))
    h2_ok = True
    if np.any(~np.isfinite(rho)) or np.any(rho <= 0):
        bad = np.where(~np.isfinite(rho) | (rho <= 0))[0][0]
        witness = float(s[bad])
        messages.append(f"resistivity not positive-finite at s={witness:g}")
        h2_ok = False
        p = float("nan")
        c_lo = c_hi = slack = float("nan")
    else:
        hint = getattr(pair.resistivity, "envelope_exponent_hint", None)
        if hint is not None:
            p = float(hint())
        else:
            top = s >= s_max / 10.0
            p = float(np.polyfit(np.log(s[top]), np.log(rho[top]), 1)[0])
        if p <= 0:
            messages.append(f"fitted envelope exponent p={p:g} is not positive")
            h2_ok = False
            c_lo = c_hi = slack = float("nan")
        else:
            ratio = rho / (1.0 + s**p)
            c_lo = float(ratio.min())
            c_hi = float(ratio.max())
            slack = c_hi / c_lo

    kappa = np.asarray(pair.kappa(s))
    h1_ok = True
    if np.any(~np.isfinite(kappa)) or np.any(kappa <= 0):
        bad = np.where(~np.isfinite(kappa) | (kappa <= 0))[0][0]
        if witness is None:
            witness = float(s[bad])
        messages.append(f"conductivity not positive at s={s[bad]:g}")
        h1_ok = False
        kappa_min = float(np.nanmin(kappa))
        kappa_max = float(np.nanmax(kappa))
    else:
        kappa_min = float(kappa.min())
        kappa_max = float(kappa.max())
        top = s >= s_max / 10.0
        trend = float(np.polyfit(np.log(s[top]), np.log(kappa[top]), 1)[0])
        if abs(trend) > _TREND_SLOPE_LIMIT:
            h1_ok = False
            messages.append(
                f"conductivity trend d(log kappa)/d(log s) = {trend:.3f} over the top "
                f"decade; bounds keep drifting, boundedness hypothesis rejected")

    return ValidityReport(
        valid=h1_ok and h2_ok,
        h1_ok=h1_ok, h2_ok=h2_ok, p=p,
        c1=c_lo, c2=c_lo, c3=c_hi, c4=c_hi, slack=slack,
        kappa_min=kappa_min, kappa_max=kappa_max,
        witness_s=witness, messages=tuple(messages))
