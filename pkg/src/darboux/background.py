"""Background potentials: Jost solutions, closed kernels, and reference
profiles.

A background bundles everything the transformation needs to know about the
seed potential ``q(x, t)``:

* ``jost(x, t, k)`` — the solution of ``-psi'' + q psi = k^2 psi`` with
  ``psi ~ e^{i k x}`` as ``x -> +inf`` (and its x-derivative);
* ``jost_scaled(x, t, s)`` — the rescaled real pair ``m = psi(is) e^{s x}``,
  ``n = psi'(is) e^{s x}`` that stays O(1) on the decaying side;
* ``jost_scaled_full`` — additionally the spectral derivatives
  ``dm/ds, dn/ds`` used by the kernel's coincidence limit;
* ``kernel_reduced`` — a closed form for the reduced integral kernel when
  one exists (``None`` otherwise);
* ``decay_edge(t)`` — an x beyond which the potential is numerically free
  (``|m - 1| <= ~1e-13``), used by quadrature cutoffs;
* ``norming_measure()`` — the spectral measure the background itself
  corresponds to over the zero seed.

The module also carries closed-form reference data: the plane-wave Jost
solution, the reflection coefficient and norming density of the unit step
potential, and sech^2 / determinant N-soliton profiles used as oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measure import SpectralMeasure, make_ac_part

_REL_SPECTRAL_FD = 1e-5
_TAIL_UNDERFLOW = 350.0  # e^{-2*350} underflows; beyond this phases give 0


class Background:
    """Interface for seed potentials of the transformation."""

    def potential(self, x, t):
        raise NotImplementedError

    def jost(self, x, t, k):
        raise NotImplementedError

    def jost_dx(self, x, t, k):
        raise NotImplementedError

    def jost_scaled(self, x: float, t: float, s: np.ndarray):
        raise NotImplementedError

    def jost_scaled_full(self, x: float, t: float, s: np.ndarray):
        """Default: spectral derivatives by central differences on
        ``jost_scaled``; override when exact derivatives are available."""
        s = np.asarray(s, dtype=float)
        m, n = self.jost_scaled(x, t, s)
        ds = _REL_SPECTRAL_FD * s
        mp_, np_ = self.jost_scaled(x, t, s + ds)
        mm_, nm_ = self.jost_scaled(x, t, s - ds)
        dm = (mp_ - mm_) / (2.0 * ds)
        dn = (np_ - nm_) / (2.0 * ds)
        return m, n, dm, dn

    def jost_scaled_full2(self, x: float, t: float, s: np.ndarray):
        """Like ``jost_scaled_full`` plus second spectral derivatives
        ``(m, n, dm, dn, d2m, d2n)``.  Needed only for coincidence limits
        of kernel derivatives; default differences the first derivatives."""
        s = np.asarray(s, dtype=float)
        m, n, dm, dn = self.jost_scaled_full(x, t, s)
        ds = _REL_SPECTRAL_FD * s
        _, _, dmp, dnp = self.jost_scaled_full(x, t, s + ds)
        _, _, dmm, dnm = self.jost_scaled_full(x, t, s - ds)
        d2m = (dmp - dmm) / (2.0 * ds)
        d2n = (dnp - dnm) / (2.0 * ds)
        return m, n, dm, dn, d2m, d2n

    def kernel_reduced(self, x, t, alpha, s):
        """Closed form of the reduced kernel, or ``None`` when the generic
        Wronskian evaluation must be used."""
        return None

    def decay_edge(self, t: float) -> float:
        raise NotImplementedError

    def norming_measure(self) -> SpectralMeasure:
        raise NotImplementedError


def zero_jost(x, k):
    """Free Jost solution ``e^{i k x}``."""
    return np.exp(1j * np.asarray(k) * np.asarray(x))


class ZeroBackground(Background):
    """The zero seed: plane-wave Jost solutions and a closed kernel."""

    def potential(self, x, t):
        return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0

    def jost(self, x, t, k):
        return np.exp(1j * k * x)

    def jost_dx(self, x, t, k):
        return 1j * k * np.exp(1j * k * x)

    def jost_scaled(self, x, t, s):
        s = np.asarray(s, dtype=float)
        return np.ones_like(s), -s

    def jost_scaled_full(self, x, t, s):
        s = np.asarray(s, dtype=float)
        return np.ones_like(s), -s, np.zeros_like(s), -np.ones_like(s)

    def jost_scaled_full2(self, x, t, s):
        s = np.asarray(s, dtype=float)
        zero = np.zeros_like(s)
        return np.ones_like(s), -s, zero, -np.ones_like(s), zero, zero

    def kernel_reduced(self, x, t, alpha, s):
        return 1.0 / (np.asarray(alpha, dtype=float) + np.asarray(s, dtype=float))

    def decay_edge(self, t):
        return -math.inf

    def norming_measure(self):
        return SpectralMeasure(atoms=(), ac_parts=())


# ---------------------------------------------------------------------------
# unit-step scattering data
# ---------------------------------------------------------------------------

def pure_step_reflection(h: float, k):
    """Reflection coefficient of the step ``q = -h^2`` on the left half line:
    ``R(k) = -h^2 / (|k| + sqrt(k^2 + h^2))^2``; total reflection at k = 0."""
    if h <= 0.0:
        raise ValueError("step height h must be positive")
    kk = np.abs(np.asarray(k, dtype=float))
    r = -((h / (kk + np.sqrt(kk * kk + h * h))) ** 2)
    return float(r) if np.ndim(k) == 0 else r


def pure_step_norming_density(h: float, k):
    """Norming density ``(2k / (pi h^2)) sqrt(h^2 - k^2)`` on ``0 <= k <= h``."""
    if h <= 0.0:
        raise ValueError("step height h must be positive")
    karr = np.asarray(k, dtype=float)
    if np.any(karr < 0.0) or np.any(karr > h):
        raise ValueError(f"norming density is supported on [0, {h}]")
    val = (2.0 * karr / (math.pi * h * h)) * np.sqrt(
        np.maximum(h * h - karr * karr, 0.0)
    )
    return float(val) if np.ndim(k) == 0 else val


@dataclass(frozen=True)
class PureStepData:
    """Closed scattering data of the attractive step of height ``h``."""

    h: float

    def __post_init__(self):
        if not (self.h > 0.0 and math.isfinite(self.h)):
            raise ValueError("step height h must be positive and finite")

    def reflection(self, k):
        return pure_step_reflection(self.h, k)

    def norming_density(self, k):
        return pure_step_norming_density(self.h, k)

    def norming_measure(self) -> SpectralMeasure:
        return SpectralMeasure(
            atoms=(),
            ac_parts=(make_ac_part("purestep", 0.0, self.h, params={"h": self.h}),),
        )


# ---------------------------------------------------------------------------
# soliton reference profiles
# ---------------------------------------------------------------------------

def one_soliton_reference(kappa: float, weight: float, x, t):
    """Closed one-soliton profile ``-2 kappa^2 sech^2(kappa x - 4 kappa^3 t
    - delta)`` with phase offset ``delta = ln(weight / (2 kappa)) / 2``."""
    if not (kappa > 0.0 and math.isfinite(kappa)):
        raise ValueError("kappa must be positive and finite")
    if not (weight > 0.0 and math.isfinite(weight)):
        raise ValueError("weight must be positive and finite")
    delta = 0.5 * math.log(weight / (2.0 * kappa))
    phase = kappa * np.asarray(x, dtype=float) - 4.0 * kappa**3 * t - delta
    z = np.exp(-2.0 * np.abs(phase))  # underflows to 0 in the far tails
    q = -2.0 * kappa * kappa * 4.0 * z / (1.0 + z) ** 2
    return float(q) if np.ndim(x) == 0 else q


def _nsoliton_point(kappas, log_half_weights, x, t, method):
    # log-amplitudes l_m with a_m = e^{l_m}; the Cayley-type determinant is
    # det(I + G), G_mn = a_m a_n / (k_m + k_n).  Evaluated in the flipped
    # arrangement det(G + D^{-2}) * prod(a^2) so huge amplitudes never
    # exponentiate: nodes with negligible amplitude are dropped, saturated
    # nodes get an exactly-zero diagonal shift.
    l = log_half_weights + 4.0 * kappas**3 * t - kappas * x
    keep = l > -_TAIL_UNDERFLOW
    if not np.any(keep):
        return 0.0
    kk = kappas[keep]
    lk = l[keep]
    core = 1.0 / (kk[:, None] + kk[None, :])
    dinv = np.exp(-2.0 * np.clip(lk, None, _TAIL_UNDERFLOW))
    if method == "analytic":
        b = core + np.diag(dinv)
        zeta = np.linalg.solve(b, np.ones_like(kk))
        p = float(np.sum(zeta))
        q_ = float(np.sum(-kk * zeta))
        return 2.0 * p * p + 4.0 * q_
    # five-point second difference of log|det|; sum(2 l) is linear in x and
    # drops out, so only the flipped core is differenced
    h = 5e-3
    vals = []
    for i in (-2, -1, 0, 1, 2):
        li = lk - kk * i * h  # log-amplitudes shifted to x + i*h
        bi = core + np.diag(np.exp(-2.0 * np.clip(li, None, _TAIL_UNDERFLOW)))
        sign, logabs = np.linalg.slogdet(bi)
        if sign <= 0.0:
            raise ArithmeticError("reference determinant lost positivity")
        vals.append(logabs)
    return -2.0 * (
        -vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]
    ) / (12.0 * h * h)


def nsoliton_reference(kappas, weights, x, t, method: str = "analytic"):
    """N-soliton profile over the zero seed from rates ``kappas`` and
    norming weights ``weights``, via the determinant representation.

    ``method="analytic"`` uses the closed curvature of ``log det``;
    ``method="fd"`` second-differences ``log det`` directly (independent
    route for cross-validation).
    """
    kappas = np.asarray(kappas, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if kappas.shape != weights.shape or kappas.ndim != 1 or len(kappas) == 0:
        raise ValueError("kappas and weights must be equal-length 1-d sequences")
    if np.any(kappas <= 0.0) or np.any(weights <= 0.0):
        raise ValueError("kappas and weights must be positive")
    if method not in ("analytic", "fd"):
        raise ValueError(f"unknown method {method!r}")
    log_half_weights = 0.5 * np.log(weights)
    t = float(t)
    if np.ndim(x) == 0:
        return _nsoliton_point(kappas, log_half_weights, float(x), t, method)
    xarr = np.asarray(x, dtype=float)
    out = np.empty(xarr.shape, dtype=float)
    flat = xarr.reshape(-1)
    res = out.reshape(-1)
    for i, xi in enumerate(flat):
        res[i] = _nsoliton_point(kappas, log_half_weights, float(xi), t, method)
    return out
