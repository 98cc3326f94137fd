"""Signed spectral measures on the positive half-line.

A measure is a finite collection of atoms ``w * delta_{kappa}`` (``kappa > 0``,
``w`` signed) plus absolutely continuous parts given by named densities on
intervals ``[a, b]``.  Measures evolve in time by the factor ``exp(8 s^3 t)``,
discretize to Gauss-type node/weight lists, and are checked for admissibility
against a background measure: the combined measure must be nonnegative and the
perturbation must have a finite inverse first moment.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad

from .errors import EvolutionOverflowError

EXP_LIMIT = 700.0  # ln(double max) minus headroom
ATOM_KAPPA_WARN = 50.0  # atoms above this make exp(8 kappa^3 t) explosive
_AC_SAMPLES = 1024  # nonnegativity sampling resolution per interval
_ATOM_MATCH_RTOL = 1e-9  # atoms at the same point up to this relative gap merge


# ---------------------------------------------------------------------------
# density catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _DensitySpec:
    fn: Callable[[np.ndarray, dict], np.ndarray]
    support: Callable[[dict], tuple[float, float]]
    # location of a sqrt-type vanishing edge (upper endpoint), or None
    sqrt_edge: Callable[[dict], float | None]


def _semicircle_fn(s: np.ndarray, params: dict) -> np.ndarray:
    return 2.0 * s * np.sqrt(np.clip(1.0 - s * s, 0.0, None))


def _purestep_fn(k: np.ndarray, params: dict) -> np.ndarray:
    h = float(params["h"])
    return (2.0 * k / (math.pi * h * h)) * np.sqrt(np.clip(h * h - k * k, 0.0, None))


def _uniform_fn(s: np.ndarray, params: dict) -> np.ndarray:
    c = float(params.get("c", 1.0))
    return np.full_like(np.asarray(s, dtype=float), c)


DENSITIES: dict[str, _DensitySpec] = {
    # 2 s sqrt(1 - s^2) on [0, 1]: reflectionless-step norming density
    "semicircle_2s": _DensitySpec(
        fn=_semicircle_fn,
        support=lambda p: (0.0, 1.0),
        sqrt_edge=lambda p: 1.0,
    ),
    # (2k / (pi h^2)) sqrt(h^2 - k^2) on [0, h]: norming density of the
    # pure step of depth h^2
    "purestep": _DensitySpec(
        fn=_purestep_fn,
        support=lambda p: (0.0, float(p["h"])),
        sqrt_edge=lambda p: float(p["h"]),
    ),
    # constant c on [a, b]
    "uniform": _DensitySpec(
        fn=_uniform_fn,
        support=lambda p: (0.0, math.inf),
        sqrt_edge=lambda p: None,
    ),
}


# ---------------------------------------------------------------------------
# measure types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    """Point mass ``weight * delta_{kappa}`` at ``kappa > 0``."""

    kappa: float
    weight: float


@dataclass(frozen=True)
class AcPart:
    """Absolutely continuous part ``scale * f_name(s) * exp(8 s^3 t_factor)``
    on ``[a, b]``."""

    a: float
    b: float
    name: str
    params: tuple = ()  # sorted (key, value) pairs; dicts are not hashable
    scale: float = 1.0
    t_factor: float = 0.0

    def _params_dict(self) -> dict:
        return dict(self.params)

    def density_values(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = self.scale * DENSITIES[self.name].fn(s, self._params_dict())
        if self.t_factor != 0.0:
            expo = 8.0 * s**3 * self.t_factor
            out = out * np.exp(np.minimum(expo, EXP_LIMIT))
        return out

    def has_sqrt_edge_at_b(self) -> bool:
        edge = DENSITIES[self.name].sqrt_edge(self._params_dict())
        return edge is not None and abs(self.b - edge) <= 1e-12 * max(1.0, edge)


def make_ac_part(
    name: str,
    a: float | None = None,
    b: float | None = None,
    scale: float = 1.0,
    params: dict | None = None,
) -> AcPart:
    """Build a catalog density part, optionally restricted to ``[a, b]``."""
    if name not in DENSITIES:
        raise ValueError(f"unknown density {name!r}; available: {sorted(DENSITIES)}")
    params = dict(params or {})
    lo, hi = DENSITIES[name].support(params)
    a = lo if a is None else float(a)
    b = hi if b is None else float(b)
    if not (0.0 <= a < b):
        raise ValueError(f"need 0 <= a < b, got a={a!r}, b={b!r}")
    if a < lo - 1e-12 or b > hi + 1e-12:
        raise ValueError(
            f"[{a!r}, {b!r}] exceeds the support [{lo!r}, {hi!r}] of {name!r}"
        )
    if not math.isfinite(b):
        raise ValueError(f"density {name!r} needs an explicit finite b")
    return AcPart(a=a, b=b, name=name, params=tuple(sorted(params.items())),
                  scale=float(scale))


@dataclass(frozen=True)
class SpectralMeasure:
    """Signed measure: atoms plus absolutely continuous parts."""

    atoms: tuple[Atom, ...] = ()
    ac_parts: tuple[AcPart, ...] = ()

    def __post_init__(self):
        for atom in self.atoms:
            if not (atom.kappa > 0.0 and math.isfinite(atom.kappa)):
                raise ValueError(f"atom location must be positive, got {atom.kappa!r}")
            if not math.isfinite(atom.weight):
                raise ValueError(f"atom weight must be finite, got {atom.weight!r}")
            if atom.kappa > ATOM_KAPPA_WARN:
                warnings.warn(
                    f"atom at kappa={atom.kappa!r} exceeds {ATOM_KAPPA_WARN}; "
                    "time evolution factors may overflow for modest t",
                    UserWarning,
                    stacklevel=2,
                )

    @property
    def is_empty(self) -> bool:
        return not self.atoms and not self.ac_parts

    def support_max(self) -> float:
        vals = [a.kappa for a in self.atoms] + [p.b for p in self.ac_parts]
        return max(vals) if vals else 0.0

    def support_min(self) -> float:
        vals = [a.kappa for a in self.atoms] + [p.a for p in self.ac_parts]
        return min(vals) if vals else math.inf


@dataclass(frozen=True)
class DiscretizedMeasure:
    """Node/weight discretization of a :class:`SpectralMeasure`.

    ``nodes`` are strictly increasing and positive; ``weights`` are signed and
    carry the quadrature rule factors (atoms contribute their weight exactly).
    """

    nodes: np.ndarray
    weights: np.ndarray
    scheme: str = "auto"
    n_per_component: int = 0
    parent: SpectralMeasure | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.nodes)


def combine(a: SpectralMeasure, b: SpectralMeasure) -> SpectralMeasure:
    """Formal sum of two measures (no algebraic merging of parts)."""
    return SpectralMeasure(atoms=a.atoms + b.atoms, ac_parts=a.ac_parts + b.ac_parts)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def evolve(sigma: SpectralMeasure, t: float) -> SpectralMeasure:
    """Time evolution: weights scale by ``exp(8 kappa^3 t)``, densities by
    ``exp(8 s^3 t)`` pointwise.

    Raises :class:`EvolutionOverflowError` when the factor at the top of the
    support exceeds double range (growth direction only; underflow is allowed
    and flushes to zero).
    """
    t = float(t)
    s_max = sigma.support_max()
    if 8.0 * s_max**3 * t > EXP_LIMIT:
        raise EvolutionOverflowError(s_max, t)
    atoms = tuple(
        Atom(a.kappa, a.weight * math.exp(8.0 * a.kappa**3 * t))
        for a in sigma.atoms
    )
    parts = tuple(replace(p, t_factor=p.t_factor + t) for p in sigma.ac_parts)
    return SpectralMeasure(atoms=atoms, ac_parts=parts)


def negate(sigma: SpectralMeasure | DiscretizedMeasure):
    """Flip the sign of the measure (atoms and densities)."""
    if isinstance(sigma, DiscretizedMeasure):
        parent = negate(sigma.parent) if sigma.parent is not None else None
        return DiscretizedMeasure(
            nodes=sigma.nodes,
            weights=-sigma.weights,
            scheme=sigma.scheme,
            n_per_component=sigma.n_per_component,
            parent=parent,
        )
    atoms = tuple(Atom(a.kappa, -a.weight) for a in sigma.atoms)
    parts = tuple(replace(p, scale=-p.scale) for p in sigma.ac_parts)
    return SpectralMeasure(atoms=atoms, ac_parts=parts)


@lru_cache(maxsize=64)
def _leggauss_cached(n: int) -> tuple[np.ndarray, np.ndarray]:
    return leggauss(n)


def _part_rule(part: AcPart, n: int, scheme: str) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes/weights for one ac part (weights include the density)."""
    if scheme == "auto":
        scheme = "sin" if part.has_sqrt_edge_at_b() else "legendre"
    xi, om = _leggauss_cached(n)
    if scheme == "legendre":
        s = part.a + (part.b - part.a) * 0.5 * (xi + 1.0)
        rw = om * 0.5 * (part.b - part.a)
    elif scheme == "sin":
        # s = a + (b-a) sin(theta), theta in [0, pi/2]: absorbs a sqrt edge
        # at b into an analytic integrand, restoring spectral accuracy.
        theta = (xi + 1.0) * (math.pi / 4.0)
        s = part.a + (part.b - part.a) * np.sin(theta)
        rw = om * (math.pi / 4.0) * (part.b - part.a) * np.cos(theta)
    else:
        raise ValueError(f"unknown quadrature scheme {scheme!r}")
    return s, rw * part.density_values(s)


def discretize(
    sigma: SpectralMeasure, n_per_component: int, scheme: str = "auto"
) -> DiscretizedMeasure:
    """Discretize: atoms pass through exactly; each ac part gets an
    ``n_per_component``-point rule ("legendre", "sin", or "auto")."""
    if n_per_component < 1 and sigma.ac_parts:
        raise ValueError("n_per_component must be >= 1")
    nodes = [np.array([a.kappa for a in sigma.atoms], dtype=float)]
    weights = [np.array([a.weight for a in sigma.atoms], dtype=float)]
    for part in sigma.ac_parts:
        s, w = _part_rule(part, n_per_component, scheme)
        nodes.append(s)
        weights.append(w)
    all_nodes = np.concatenate(nodes)
    all_weights = np.concatenate(weights)
    order = np.argsort(all_nodes, kind="stable")
    all_nodes = all_nodes[order]
    all_weights = all_weights[order]
    # merge exact duplicates so nodes are strictly increasing
    if len(all_nodes) > 1 and np.any(np.diff(all_nodes) == 0.0):
        uniq, inv = np.unique(all_nodes, return_inverse=True)
        merged = np.zeros_like(uniq)
        np.add.at(merged, inv, all_weights)
        all_nodes, all_weights = uniq, merged
    return DiscretizedMeasure(
        nodes=all_nodes,
        weights=all_weights,
        scheme=scheme,
        n_per_component=n_per_component,
        parent=sigma,
    )


# ---------------------------------------------------------------------------
# admissibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    inverse_moment: float  # int |d sigma|(s) / s, +inf when divergent
    combined_atom_min: float  # most negative combined atom group sum
    combined_density_min: float  # most negative sampled combined density
    violations: tuple[str, ...]

    def summary(self) -> str:
        if self.admissible:
            return "admissible"
        return "; ".join(self.violations)


def _grouped_atom_sums(atoms: list[Atom]) -> list[tuple[float, float]]:
    """Sum weights of atoms at coinciding locations (relative tol 1e-9)."""
    groups: list[tuple[float, float]] = []
    for atom in sorted(atoms, key=lambda a: a.kappa):
        if groups and abs(atom.kappa - groups[-1][0]) <= _ATOM_MATCH_RTOL * max(
            atom.kappa, groups[-1][0]
        ):
            k, w = groups[-1]
            groups[-1] = (k, w + atom.weight)
        else:
            groups.append((atom.kappa, atom.weight))
    return groups


def _inverse_moment_of_part(part: AcPart) -> float:
    """``int_a^b |f(s)| / s ds``; +inf when the density does not vanish at 0."""
    def integrand(s):
        return abs(float(part.density_values(np.array([s]))[0])) / s

    a, b = part.a, part.b
    if a <= 0.0:
        # probe the vanishing rate f ~ c s^p near zero: divergent iff p <= 0
        probes = np.array([b * 1e-4, b * 1e-7])
        f = np.abs(part.density_values(probes))
        if f[1] > 0.0:
            p = math.log(f[0] / f[1]) / math.log(probes[0] / probes[1])
            if p <= 1e-3:
                return math.inf
        elif f[0] > 0.0:
            return math.inf
        a = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val, _ = quad(integrand, max(a, 0.0), b, limit=200, points=None)
    return abs(val)


def _merged_intervals(parts: list[AcPart]) -> list[tuple[float, float]]:
    ivs = sorted((p.a, p.b) for p in parts)
    merged: list[tuple[float, float]] = []
    for a, b in ivs:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return merged


def check_admissible(
    rho: SpectralMeasure, sigma: SpectralMeasure
) -> AdmissibilityReport:
    """Admissibility of the perturbation ``sigma`` against the background
    measure ``rho``: finite ``int |d sigma|/s`` and ``rho + sigma >= 0``.

    Nonnegativity is checked exactly on atom groups and by dense sampling
    (1024 points per merged support interval) on the combined density.
    """
    violations: list[str] = []

    # inverse first moment of |sigma|
    inv = sum(abs(a.weight) / a.kappa for a in sigma.atoms)
    for part in sigma.ac_parts:
        inv += _inverse_moment_of_part(part)
        if math.isinf(inv):
            break
    if math.isinf(inv):
        violations.append("inverse moment int |d sigma|/s diverges")

    # combined atom nonnegativity
    combined_atoms = list(rho.atoms) + list(sigma.atoms)
    atom_min = 0.0
    if combined_atoms:
        scale = max(abs(a.weight) for a in combined_atoms)
        for kappa, wsum in _grouped_atom_sums(combined_atoms):
            atom_min = min(atom_min, wsum)
            if wsum < -1e-12 * max(scale, 1.0):
                violations.append(
                    f"combined atom weight {wsum!r} < 0 at kappa={kappa!r}"
                )

    # combined density nonnegativity
    parts = list(rho.ac_parts) + list(sigma.ac_parts)
    dens_min = 0.0
    if parts:
        for a, b in _merged_intervals(parts):
            s = np.linspace(a, b, _AC_SAMPLES)
            total = np.zeros_like(s)
            for p in parts:
                mask = (s >= p.a) & (s <= p.b)
                total[mask] += p.density_values(s[mask])
            lo = float(total.min())
            dens_min = min(dens_min, lo)
            scale = float(np.abs(total).max())
            if lo < -1e-10 * max(scale, 1.0):
                violations.append(
                    f"combined density dips to {lo!r} on [{a!r}, {b!r}]"
                )

    return AdmissibilityReport(
        admissible=not violations,
        inverse_moment=inv,
        combined_atom_min=atom_min,
        combined_density_min=dens_min,
        violations=tuple(violations),
    )


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def to_json(sigma: SpectralMeasure) -> str:
    """Canonical JSON form (sorted keys, compact separators): byte-identical
    under a parse/serialize round trip."""
    doc: dict = {
        "atoms": [{"kappa": a.kappa, "weight": a.weight} for a in sigma.atoms],
        "ac": [],
    }
    for p in sigma.ac_parts:
        entry: dict = {"a": p.a, "b": p.b, "density": p.name}
        if p.params:
            entry["params"] = dict(p.params)
        if p.scale != 1.0:
            entry["scale"] = p.scale
        if p.t_factor != 0.0:
            entry["t_factor"] = p.t_factor
        doc["ac"].append(entry)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def from_json(text: str | dict) -> SpectralMeasure:
    doc = json.loads(text) if isinstance(text, str) else text
    atoms = tuple(
        Atom(float(a["kappa"]), float(a["weight"])) for a in doc.get("atoms", [])
    )
    parts = []
    for entry in doc.get("ac", []):
        part = make_ac_part(
            entry["density"],
            a=entry.get("a"),
            b=entry.get("b"),
            scale=float(entry.get("scale", 1.0)),
            params=entry.get("params"),
        )
        if entry.get("t_factor"):
            part = replace(part, t_factor=float(entry["t_factor"]))
        parts.append(part)
    return SpectralMeasure(atoms=atoms, ac_parts=tuple(parts))
