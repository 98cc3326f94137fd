"""Closed-form backgrounds used as independent oracles in tests.

``ClosedOneSoliton`` implements the background protocol with hand-derived
formulas for the potential, scaled Jost pair, spectral derivatives, and
complex-argument Jost solutions of a single bound state (kappa, c^2) added to
the zero background.  It never touches the production kernel machinery, so
tests comparing against it cross two independent code paths.
"""
from __future__ import annotations

import math

import numpy as np

from darboux import measure


class ClosedOneSoliton:
    """Potential -2 kappa^2 sech^2(kappa x - 4 kappa^3 t - delta), built from
    the closed solution of the rank-one kernel system."""

    def __init__(self, kappa: float = 1.0, weight: float = 2.0):
        assert weight > 0
        self.kappa = float(kappa)
        self.weight = float(weight)

    # -- helpers ------------------------------------------------------------
    def _zeta(self, x: float, t: float) -> float:
        # zeta = 2 kappa / (1 + (2 kappa / c^2) exp(2 kappa x - 8 kappa^3 t))
        k, w = self.kappa, self.weight
        expo = 2.0 * k * x - 8.0 * k**3 * t
        if expo > 700.0:
            return 0.0
        return 2.0 * k / (1.0 + (2.0 * k / w) * math.exp(expo))

    # -- background protocol -------------------------------------------------
    def potential(self, x: float, t: float) -> float:
        # 2 z (z - 2 kappa) arranged cancellation-free: with
        # g = (2 kappa / w) e^{2 kappa x - 8 kappa^3 t} it equals
        # -8 kappa^2 g / (1 + g)^2
        k, w = self.kappa, self.weight
        expo = 2.0 * k * x - 8.0 * k**3 * t
        if abs(expo) > 700.0:
            return 0.0
        g = (2.0 * k / w) * math.exp(expo)
        return -8.0 * k * k * g / (1.0 + g) ** 2

    def jost_scaled(self, x: float, t: float, s: np.ndarray):
        s = np.asarray(s, dtype=float)
        k = self.kappa
        z = self._zeta(x, t)
        eta = z * (z - k)
        m = 1.0 - z / (s + k)
        n = -s + z - eta / (s + k)
        return m, n

    def jost_scaled_full(self, x: float, t: float, s: np.ndarray):
        s = np.asarray(s, dtype=float)
        k = self.kappa
        z = self._zeta(x, t)
        eta = z * (z - k)
        m = 1.0 - z / (s + k)
        n = -s + z - eta / (s + k)
        dm = z / (s + k) ** 2
        dn = -1.0 + eta / (s + k) ** 2
        return m, n, dm, dn

    def jost_scaled_full2(self, x: float, t: float, s: np.ndarray):
        s = np.asarray(s, dtype=float)
        k = self.kappa
        z = self._zeta(x, t)
        eta = z * (z - k)
        m, n, dm, dn = self.jost_scaled_full(x, t, s)
        d2m = -2.0 * z / (s + k) ** 3
        d2n = -2.0 * eta / (s + k) ** 3
        return m, n, dm, dn, d2m, d2n

    def jost(self, x: float, t: float, k: complex) -> complex:
        z = self._zeta(x, t)
        return np.exp(1j * k * x) * (1.0 - z / (self.kappa - 1j * k))

    def jost_dx(self, x: float, t: float, k: complex) -> complex:
        z = self._zeta(x, t)
        eta = z * (z - self.kappa)
        return np.exp(1j * k * x) * (1j * k + z - eta / (self.kappa - 1j * k))

    def kernel_reduced(self, x, t, alpha, s):
        return None  # force the generic kernel branches

    def decay_edge(self, t: float) -> float:
        k, w = self.kappa, self.weight
        return (max(8.0 * k**3 * t, 0.0) + math.log(max(w, 1.0) * 1e13 / (2 * k))) / (
            2.0 * k
        ) + 2.0

    def norming_measure(self) -> measure.SpectralMeasure:
        return measure.SpectralMeasure(
            atoms=(measure.Atom(self.kappa, self.weight),), ac_parts=()
        )
