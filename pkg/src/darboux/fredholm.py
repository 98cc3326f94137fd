"""Kernel assembly and symmetric solvers for the transformation's
Fredholm systems.

The operator has entries ``K(alpha, s; x, t) = int_x^inf psi(z, i alpha)
psi(z, i s) dz`` built from Jost solutions of a background.  Everything is
computed in the rescaled variables ``m(x, s) = psi(x, is) e^{s x}`` and
``n(x, s) = psi'(x, is) e^{s x}``, for which the reduced kernel ``Khat =
K e^{(alpha+s) x}`` stays O(1):

* off the diagonal a divided-difference arrangement of the Wronskian
  identity ``Khat = (n(alpha) Dm - m(alpha) Dn) / (alpha + s)`` with
  ``Dm = (m(s) - m(alpha))/(s - alpha)``, algebraically identical to
  ``(n(alpha) m(s) - m(alpha) n(s))/(s^2 - alpha^2)`` but stable for
  arbitrarily close arguments;
* on (and extremely near) the diagonal the spectral-derivative limit
  ``Khat(s, s) = (n d_s m - m d_s n) / (2 s)``, which is the exact
  coincidence limit of the same identity;
* a panel Gauss-Legendre quadrature of the defining integral with an
  analytic exponential tail, selectable for cross-validation.

Discretized systems are solved in one of two algebraically equivalent
symmetric forms.  With ``D = diag(exp(log_weff / 2))``, ``S = diag(signs)``
and ``M = D Khat D``:

* standard: ``(M + S) v = D m`` (equivalent to ``(I + M S) z = D m``);
* flipped: ``(Khat + S D^{-2}) zeta = m`` where ``zeta_j = w_eff_j Y_j``.

The flipped form never exponentiates ``+log_weff``, so it stays
representable when the effective weights ``w exp(8 s^3 t - 2 s x)`` are
astronomically large (deep negative x); the solver switches forms on a
weight-magnitude threshold.  ``log det (I + K W)`` differs from the
factorized ``log |det B|`` by ``sum(log_weff)``, which is exactly linear in
x and therefore drops out of second x-derivatives.
"""
from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import lapack

from .errors import (
    EvolutionOverflowError,
    MixedSignWeightsError,
    NearSingularWarning,
    NonPositiveDeterminantError,
    SingularSystemError,
)

# relative gap below which a pair of spectral arguments counts as
# near-diagonal and is routed to the coincidence-limit branch
DELTA_DIAG_REL = 1e-3
# inside the near-diagonal region the divided difference is still exact;
# only below this relative gap is the midpoint spectral-derivative used
_DD_LIMIT_REL = 1e-6
EXP_LIMIT = 700.0
LOG_FORM_SWITCH = math.log(1e8)  # max effective log-weight for standard form
MAX_DENSE = 2000  # dense solver size cap
COND_WARN = 1e12
COND_RAISE = 1e14

_QUAD_PANEL_ORDER = 16
_QUAD_MAX_PANELS = 4000
_QUAD_EFOLDS = 40.0  # integrate the e^{-(alpha+s)u} envelope this far

_counts_lock = threading.Lock()
_branch_counts = {"closed": 0, "wronskian": 0, "diagonal": 0, "quadrature": 0}


def branch_counts() -> dict[str, int]:
    """Snapshot of how many kernel evaluations each branch has served."""
    with _counts_lock:
        return dict(_branch_counts)


def reset_branch_counts() -> None:
    with _counts_lock:
        for k in _branch_counts:
            _branch_counts[k] = 0


def _count(branch: str, n: int = 1) -> None:
    with _counts_lock:
        _branch_counts[branch] += n


@lru_cache(maxsize=64)
def _leggauss_cached(n: int) -> tuple[np.ndarray, np.ndarray]:
    return leggauss(n)


# ---------------------------------------------------------------------------
# symmetric factorization wrapper
# ---------------------------------------------------------------------------

@dataclass
class SymmetricFactor:
    """Cholesky or Bunch-Kaufman LDL^T factorization of a symmetric matrix
    with determinant sign, log |det|, and a 1-norm rcond estimate."""

    method: str  # "cholesky" | "ldl"
    sign: float  # +1, -1, or 0 (numerically singular)
    logabsdet: float
    rcond: float
    n: int
    _solve: Callable[[np.ndarray], np.ndarray] | None

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._solve is None:
            raise np.linalg.LinAlgError("matrix is singular; no solve available")
        return self._solve(np.asarray(b, dtype=float))


def _ldl_det(ldu: np.ndarray, ipiv: np.ndarray) -> tuple[float, float]:
    """Determinant sign and log |det| from the sytrf block-diagonal factor."""
    n = ldu.shape[0]
    sign, logabs = 1.0, 0.0
    i = 0
    while i < n:
        if ipiv[i] >= 0:
            d = ldu[i, i]
            if d == 0.0:
                return 0.0, -math.inf
            sign *= math.copysign(1.0, d)
            logabs += math.log(abs(d))
            i += 1
        else:
            d11, d22, d21 = ldu[i, i], ldu[i + 1, i + 1], ldu[i + 1, i]
            det2 = d11 * d22 - d21 * d21
            if det2 == 0.0:
                return 0.0, -math.inf
            sign *= math.copysign(1.0, det2)
            logabs += math.log(abs(det2))
            i += 2
    return sign, logabs


def factor_symmetric(a: np.ndarray, try_cholesky: bool = True) -> SymmetricFactor:
    """Factor a symmetric matrix: Cholesky when positive definite, else
    Bunch-Kaufman LDL^T.  Singular input yields ``sign == 0`` (no solve)."""
    a = np.ascontiguousarray(a, dtype=float)
    n = a.shape[0]
    anorm = float(np.linalg.norm(a, 1)) if n else 0.0
    if try_cholesky:
        c, info = lapack.dpotrf(a, lower=1)
        if info == 0:
            diag = np.diagonal(c)
            logabs = 2.0 * float(np.sum(np.log(diag)))
            rcond, _ = lapack.dpocon(c, anorm, uplo="L")
            return SymmetricFactor(
                method="cholesky",
                sign=1.0,
                logabsdet=logabs,
                rcond=float(rcond),
                n=n,
                _solve=lambda b: lapack.dpotrs(c, b, lower=1)[0],
            )
    ldu, ipiv, info = lapack.dsytrf(a, lower=1)
    if info > 0:
        return SymmetricFactor(
            method="ldl", sign=0.0, logabsdet=-math.inf, rcond=0.0, n=n, _solve=None
        )
    sign, logabs = _ldl_det(ldu, ipiv)
    rcond, _ = lapack.dsycon(ldu, ipiv, anorm, lower=1)
    solve = (
        None
        if sign == 0.0
        else (lambda b: lapack.dsytrs(ldu, ipiv, b, lower=1)[0])
    )
    return SymmetricFactor(
        method="ldl",
        sign=sign,
        logabsdet=logabs,
        rcond=float(rcond),
        n=n,
        _solve=solve,
    )


# ---------------------------------------------------------------------------
# kernel entries
# ---------------------------------------------------------------------------

def _dd_wronskian(bg, alpha: float, s: float, x: float, t: float) -> float:
    m, n = bg.jost_scaled(x, t, np.array([alpha, s]))
    return float(
        (n[0] * (m[1] - m[0]) - m[0] * (n[1] - n[0])) / ((s - alpha) * (s + alpha))
    )


def _diag_limit(bg, mu: float, x: float, t: float) -> float:
    m, n, dm, dn = bg.jost_scaled_full(x, t, np.array([mu]))
    return float((n[0] * dm[0] - m[0] * dn[0]) / (2.0 * mu))


def _kernel_quadrature(bg, alpha: float, s: float, x: float, t: float) -> float:
    """Panel Gauss-Legendre quadrature of int_0^inf m(x+u, alpha) m(x+u, s)
    e^{-(alpha+s)u} du with the analytic free tail beyond the background's
    decay edge (where |m - 1| <= 1e-12 by construction)."""
    rate = alpha + s
    edge = bg.decay_edge(t)
    upper = max(0.0, edge - x)
    upper = min(upper, _QUAD_EFOLDS / rate)
    pair = np.array([alpha, s])
    xi, om = _leggauss_cached(_QUAD_PANEL_ORDER)
    acc = 0.0
    if upper > 0.0:
        npan = min(int(math.ceil(upper / min(1.0, 3.0 / rate))), _QUAD_MAX_PANELS)
        width = upper / npan
        for p in range(npan):
            u = (p + 0.5 * (xi + 1.0)) * width
            for uj, wj in zip(u, om):
                m, _ = bg.jost_scaled(x + uj, t, pair)
                acc += 0.5 * width * wj * m[0] * m[1] * math.exp(-rate * uj)
    m_end, _ = bg.jost_scaled(x + upper, t, pair)
    tail = m_end[0] * m_end[1] * math.exp(-rate * upper) / rate
    return float(acc + tail)


def kernel_entry_reduced(
    bg, alpha: float, s: float, x: float, t: float, branch: str = "auto"
) -> float:
    """Reduced kernel ``Khat(alpha, s; x, t) = K e^{(alpha+s) x}``.

    ``branch`` selects the evaluation route: "auto" (closed form when the
    background has one, else Wronskian / coincidence-limit by the
    near-diagonal rule), or forced "closed", "wronskian", "diagonal",
    "quadrature".
    """
    alpha, s, x, t = float(alpha), float(s), float(x), float(t)
    if alpha <= 0.0 or s <= 0.0:
        raise ValueError("spectral arguments must be positive")
    scale = max(alpha, s)
    gap = abs(alpha - s)
    if branch == "auto":
        closed = bg.kernel_reduced(x, t, alpha, s)
        if closed is not None:
            _count("closed")
            return float(closed)
        branch = "diagonal" if gap <= DELTA_DIAG_REL * scale else "wronskian"
    if branch == "closed":
        closed = bg.kernel_reduced(x, t, alpha, s)
        if closed is None:
            raise ValueError("background has no closed-form kernel")
        _count("closed")
        return float(closed)
    if branch == "wronskian":
        if alpha == s:
            raise ValueError("wronskian branch is undefined at alpha == s")
        _count("wronskian")
        return _dd_wronskian(bg, alpha, s, x, t)
    if branch == "diagonal":
        _count("diagonal")
        if gap > _DD_LIMIT_REL * scale:
            return _dd_wronskian(bg, alpha, s, x, t)
        return _diag_limit(bg, 0.5 * (alpha + s), x, t)
    if branch == "quadrature":
        _count("quadrature")
        return _kernel_quadrature(bg, alpha, s, x, t)
    raise ValueError(f"unknown branch {branch!r}")


def kernel_entry(
    bg, alpha: float, s: float, x: float, t: float, branch: str = "auto"
) -> float:
    """Unreduced kernel entry ``K(alpha, s; x, t)``."""
    expo = -(alpha + s) * x
    if expo > EXP_LIMIT:
        raise OverflowError(
            "unreduced kernel overflows double range at this x; "
            "use kernel_entry_reduced"
        )
    return kernel_entry_reduced(bg, alpha, s, x, t, branch=branch) * math.exp(expo)


def khat_matrix_generic(bg, nodes: np.ndarray, x: float, t: float) -> np.ndarray:
    """Reduced kernel matrix over one node set via the divided-difference
    Wronskian identity (off-diagonal) and the coincidence limit (diagonal)."""
    m, n, dm, dn = bg.jost_scaled_full(x, t, nodes)
    ds = nodes[None, :] - nodes[:, None]
    sm = nodes[None, :] + nodes[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        num = n[:, None] * (m[None, :] - m[:, None]) - m[:, None] * (
            n[None, :] - n[:, None]
        )
        khat = num / (ds * sm)
    diag = (n * dm - m * dn) / (2.0 * nodes)
    khat[np.diag_indices_from(khat)] = diag
    return 0.5 * (khat + khat.T)


def khat_cross(
    bg, query: np.ndarray, nodes: np.ndarray, x: float, t: float
) -> np.ndarray:
    """Reduced kernel rows ``Khat(query_i, node_j; x, t)`` between two
    positive spectral argument sets over one background.

    Pairs closer than the divided-difference limit (including exact
    coincidences, which occur when evaluating a transformed field at its
    own spectral nodes) take the coincidence-limit value at the pair
    midpoint.
    """
    query = np.asarray(query, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    mq, nq = bg.jost_scaled(x, t, query)
    mn_, nn_ = bg.jost_scaled(x, t, nodes)
    q = query[:, None]
    s = nodes[None, :]
    ds = s - q
    with np.errstate(divide="ignore", invalid="ignore"):
        num = nq[:, None] * (mn_[None, :] - mq[:, None]) - mq[:, None] * (
            nn_[None, :] - nq[:, None]
        )
        out = num / (ds * (s + q))
    tiny = np.abs(ds) <= _DD_LIMIT_REL * np.maximum(q, s)
    if np.any(tiny):
        qi, sj = np.nonzero(tiny)
        mu = 0.5 * (query[qi] + nodes[sj])
        m_mu, n_mu, dm_mu, dn_mu = bg.jost_scaled_full(x, t, mu)
        out[qi, sj] = (n_mu * dm_mu - m_mu * dn_mu) / (2.0 * mu)
    return out


def khat_cross_full(
    bg, query: np.ndarray, nodes: np.ndarray, x: float, t: float
) -> tuple[np.ndarray, np.ndarray]:
    """Reduced kernel rows ``Khat(query_i, node_j)`` together with their
    derivatives in the first (query) argument, both in closed form.

    The derivative uses an exact second-divided-difference rearrangement
    that stays stable for close arguments; coincident pairs take the
    diagonal limit ``d/ds Khat(s, s) / 2``, which needs the background's
    second spectral derivatives.
    """
    query = np.asarray(query, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    mq, nq, dmq, dnq = bg.jost_scaled_full(x, t, query)
    mn_, nn_ = bg.jost_scaled(x, t, nodes)
    q = query[:, None]
    s = nodes[None, :]
    dlt = s - q
    ssum = s + q
    d_m = mn_[None, :] - mq[:, None]
    d_n = nn_[None, :] - nq[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ut = (nq[:, None] * d_m - mq[:, None] * d_n) / dlt
        cross = ut / ssum
        # d/dq of the divided-difference numerator: the quadratic Taylor
        # remainders r_m, r_n keep every term finite as dlt -> 0
        r_m = d_m - dmq[:, None] * dlt
        r_n = d_n - dnq[:, None] * dlt
        dut = (dnq[:, None] * d_m - dmq[:, None] * d_n) / dlt + (
            nq[:, None] * r_m - mq[:, None] * r_n
        ) / dlt**2
        crossd = dut / ssum - ut / ssum**2
    tiny = np.abs(dlt) <= _DD_LIMIT_REL * np.maximum(q, s)
    if np.any(tiny):
        qi, sj = np.nonzero(tiny)
        mu = 0.5 * (query[qi] + nodes[sj])
        m2, n2, dm2, dn2, d2m, d2n = bg.jost_scaled_full2(x, t, mu)
        kd = (n2 * dm2 - m2 * dn2) / (2.0 * mu)
        d1 = (n2 * d2m - m2 * d2n) / (2.0 * mu) - kd / mu
        cross[qi, sj] = kd
        crossd[qi, sj] = 0.5 * d1
    return cross, crossd


# ---------------------------------------------------------------------------
# assembled systems
# ---------------------------------------------------------------------------

@dataclass
class KernelSystem:
    """Discretized second-kind system at one (x, t)."""

    x: float
    t: float
    nodes: np.ndarray
    signs: np.ndarray  # sign of the (mode-adjusted) raw weights
    log_wabs: np.ndarray  # log |w_j| + 8 s_j^3 t
    log_weff: np.ndarray  # log_wabs - 2 s_j x
    khat: np.ndarray  # reduced kernel matrix
    m: np.ndarray  # scaled Jost values at the nodes
    n: np.ndarray  # scaled Jost derivative values at the nodes
    form: str  # "standard" | "flipped"
    matrix: np.ndarray  # factorized symmetric matrix B
    part_norm: float  # max 1-norm of the two summands of B
    n_near_diagonal: int
    background: object = field(repr=False, default=None)
    _factor: SymmetricFactor | None = field(default=None, repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.nodes)

    def factorization(self) -> SymmetricFactor:
        if self._factor is None:
            # Cholesky is the fast path; it succeeds exactly when B is
            # positive definite (all-positive weights in either form).
            self._factor = factor_symmetric(self.matrix)
        return self._factor

    def cond_estimate(self) -> float:
        fac = self.factorization()
        if fac.sign == 0.0 or fac.rcond == 0.0:
            return math.inf
        bnorm = float(np.linalg.norm(self.matrix, 1))
        if bnorm == 0.0:
            return math.inf
        # ||B^{-1}|| measured against the scale of B's summands: detects
        # cancellation-driven singularities of det(I + K W)
        return self.part_norm / (fac.rcond * bnorm)


def assemble(bg, dm, x: float, t: float, mode: str = "add", form: str | None = None) -> KernelSystem:
    """Build the discretized system for the measure ``dm`` at ``(x, t)``.

    Time evolution ``w -> w exp(8 s^3 t)`` is applied here (pass the
    unevolved weights).  ``mode="remove"`` negates the measure.  ``form``
    overrides the standard/flipped switch (tests and finite-difference
    stencils need a pinned form).
    """
    if mode not in ("add", "remove"):
        raise ValueError(f"mode must be 'add' or 'remove', got {mode!r}")
    x, t = float(x), float(t)
    nodes = np.asarray(dm.nodes, dtype=float)
    w = np.asarray(dm.weights, dtype=float)
    if mode == "remove":
        w = -w
    keep = w != 0.0
    nodes, w = nodes[keep], w[keep]
    if len(nodes) == 0:
        raise ValueError("measure discretization has no nonzero weights")
    if len(nodes) > MAX_DENSE:
        raise ValueError(
            f"dense solver is capped at {MAX_DENSE} nodes, got {len(nodes)}"
        )
    if np.any(nodes <= 0.0) or np.any(np.diff(nodes) <= 0.0):
        raise ValueError("nodes must be strictly increasing and positive")
    s_max = float(nodes[-1])
    if 8.0 * s_max**3 * t > EXP_LIMIT:
        raise EvolutionOverflowError(s_max, t)

    signs = np.sign(w)
    log_wabs = np.log(np.abs(w)) + 8.0 * nodes**3 * t
    log_weff = log_wabs - 2.0 * nodes * x

    closed = bg.kernel_reduced(x, t, nodes[:, None], nodes[None, :])
    if closed is not None:
        khat = np.asarray(closed, dtype=float)
        m, n = bg.jost_scaled(x, t, nodes)
        _count("closed", len(nodes) ** 2)
    else:
        khat = khat_matrix_generic(bg, nodes, x, t)
        _count("wronskian", len(nodes) * (len(nodes) - 1))
        _count("diagonal", len(nodes))
        m, n, _, _ = bg.jost_scaled_full(x, t, nodes)

    gap = np.abs(nodes[:, None] - nodes[None, :])
    scale = np.maximum(nodes[:, None], nodes[None, :])
    n_near = int((np.count_nonzero(gap <= DELTA_DIAG_REL * scale) - len(nodes)) // 2)

    if form is None:
        # the standard form is viable as long as D Khat D stays bounded;
        # judge by the scaled entries, not the raw weights — for removal
        # systems the kernel itself decays at the weights' rate far left,
        # so the standard form stays O(1) there while flipped degrades
        with np.errstate(divide="ignore"):
            log_scaled = np.log(np.abs(khat)) + 0.5 * (
                log_weff[:, None] + log_weff[None, :]
            )
        form = (
            "flipped"
            if float(np.max(log_scaled)) > LOG_FORM_SWITCH
            else "standard"
        )
    if form == "standard":
        if 0.5 * float(np.max(log_weff)) > EXP_LIMIT - 10.0:
            raise ValueError(
                "standard form overflows at this x; use form='flipped'"
            )
        d = np.exp(0.5 * log_weff)
        mmat = d[:, None] * khat * d[None, :]
        matrix = mmat + np.diag(signs)
        part_norm = max(float(np.linalg.norm(mmat, 1)), 1.0)
    elif form == "flipped":
        if float(np.min(log_weff)) < -EXP_LIMIT:
            raise ValueError(
                "flipped form overflows at this x; use form='standard'"
            )
        dinv = signs * np.exp(-log_weff)
        matrix = khat + np.diag(dinv)
        part_norm = max(
            float(np.linalg.norm(khat, 1)), float(np.max(np.abs(dinv)))
        )
    else:
        raise ValueError(f"unknown form {form!r}")

    return KernelSystem(
        x=x,
        t=t,
        nodes=nodes,
        signs=signs,
        log_wabs=log_wabs,
        log_weff=log_weff,
        khat=khat,
        m=np.asarray(m, dtype=float),
        n=np.asarray(n, dtype=float),
        form=form,
        matrix=matrix,
        part_norm=part_norm,
        n_near_diagonal=n_near,
        background=bg,
    )


@dataclass
class SolveResult:
    """Solution of one kernel system.

    ``y`` solves the unrescaled second-kind equation (entries can overflow
    far to the left; ``unrescaled_valid`` flags that).  ``y_scaled`` is
    ``y_j e^{s_j x}`` and ``zeta_j = w_eff_j y_scaled_j`` is the bounded
    weighted solution.  ``P = m . zeta`` and ``Q = n . zeta`` are the two
    moments entering the transformed potential ``q_bg + 2 P^2 + 4 Q``.
    """

    x: float
    t: float
    nodes: np.ndarray
    y: np.ndarray
    y_scaled: np.ndarray
    zeta: np.ndarray
    P: float
    Q: float
    rcond: float
    cond_estimate: float
    logabsdet: float
    det_sign: int
    form: str
    unrescaled_valid: bool
    _ks: KernelSystem = field(repr=False, default=None)

    @property
    def system(self) -> KernelSystem:
        return self._ks

    def solve_mlike(self, g: np.ndarray) -> np.ndarray:
        """Weighted solution ``xi = W_eff (I + Khat W_eff)^{-1} g`` for an
        extra right-hand side in the position of the scaled Jost vector."""
        ks = self._ks
        fac = ks.factorization()
        g = np.asarray(g, dtype=float)
        if ks.form == "flipped":
            return fac.solve(g)
        d = np.exp(0.5 * ks.log_weff)
        return d * fac.solve(d * g)


def _det_from_factor(ks: KernelSystem) -> tuple[int, float]:
    fac = ks.factorization()
    sign_prod = float(np.prod(ks.signs))
    sign = fac.sign * sign_prod
    if fac.sign == 0.0:
        return 0, -math.inf
    logabs = fac.logabsdet
    if ks.form == "flipped":
        logabs += float(np.sum(ks.log_weff))
    return int(sign), logabs


def solve(ks: KernelSystem) -> SolveResult:
    """Solve the system; raises :class:`SingularSystemError` when the
    condition estimate exceeds 1e14 (or the factorization is exactly
    singular) and warns :class:`NearSingularWarning` above 1e12."""
    fac = ks.factorization()
    cond = ks.cond_estimate()
    if fac.sign == 0.0 or not math.isfinite(cond) or cond > COND_RAISE:
        raise SingularSystemError(ks.x, ks.t, cond)
    if cond > COND_WARN:
        warnings.warn(
            NearSingularWarning(
                f"kernel system at x={ks.x!r}, t={ks.t!r} has condition "
                f"estimate {cond:.3e}"
            ),
            stacklevel=2,
        )
    if ks.form == "flipped":
        zeta = fac.solve(ks.m)
        y_scaled = zeta * ks.signs * np.exp(-ks.log_weff)
    else:
        v = fac.solve(np.exp(0.5 * ks.log_weff) * ks.m)
        zeta = np.exp(0.5 * ks.log_weff) * v
        y_scaled = ks.signs * v * np.exp(-0.5 * ks.log_weff)
    P = float(ks.m @ zeta)
    Q = float(ks.n @ zeta)
    expo = -ks.nodes * ks.x
    valid = bool(np.max(np.abs(expo)) < EXP_LIMIT)
    with np.errstate(over="ignore"):
        y = y_scaled * np.exp(np.minimum(expo, EXP_LIMIT))
    det_sign, logabs = _det_from_factor(ks)
    return SolveResult(
        x=ks.x,
        t=ks.t,
        nodes=ks.nodes,
        y=y,
        y_scaled=y_scaled,
        zeta=zeta,
        P=P,
        Q=Q,
        rcond=fac.rcond,
        cond_estimate=cond,
        logabsdet=logabs,
        det_sign=det_sign,
        form=ks.form,
        unrescaled_valid=valid,
        _ks=ks,
    )


def signed_log_det(ks: KernelSystem) -> tuple[int, float]:
    """(sign, log |det|) of ``I + K W_t`` without positivity requirements."""
    return _det_from_factor(ks)


def log_det(ks: KernelSystem) -> float:
    """``log det(I + K W_t)``; raises
    :class:`NonPositiveDeterminantError` unless the determinant is positive."""
    sign, logabs = _det_from_factor(ks)
    if sign <= 0:
        raise NonPositiveDeterminantError(ks.x, ks.t, sign)
    return logabs


def d2_logdet(system, a: np.ndarray | None = None, a_dx: np.ndarray | None = None) -> float:
    """Second x-derivative of ``log det`` in closed form.

    For a plain symmetric matrix ``A`` whose x-derivative is the rank-one
    ``dA = -a a^T`` (and ``da = diag-free a_dx``), the value is ``-(a,
    (I+A)^{-1} a)^2 - 2 (a_dx, (I+A)^{-1} a)``.  For a
    :class:`KernelSystem` with single-signed weights the canonical vectors
    give ``-(P^2) - 2 Q``; mixed signs raise
    :class:`MixedSignWeightsError` (use :func:`d2_logdet_fd`).
    """
    if isinstance(system, np.ndarray):
        if a is None or a_dx is None:
            raise ValueError("matrix form needs explicit a and a_dx vectors")
        b = np.eye(system.shape[0]) + system
        fac = factor_symmetric(b)
        if fac.sign <= 0.0:
            raise NonPositiveDeterminantError(math.nan, math.nan, int(fac.sign))
        v = fac.solve(np.asarray(a, dtype=float))
        p = float(np.asarray(a) @ v)
        qq = float(np.asarray(a_dx) @ v)
        return -(p * p) - 2.0 * qq
    ks: KernelSystem = system
    if np.any(ks.signs > 0) and np.any(ks.signs < 0):
        raise MixedSignWeightsError(
            "closed-form log-det curvature needs single-signed weights; "
            "use d2_logdet_fd"
        )
    if a is None and a_dx is None:
        sol = solve(ks)
        return -(sol.P**2) - 2.0 * sol.Q
    if a is None or a_dx is None:
        raise ValueError("pass both a and a_dx or neither")
    fac = ks.factorization()
    if ks.form == "flipped":
        g = np.asarray(a, dtype=float) * np.exp(-0.5 * ks.log_weff)
        g_dx = np.asarray(a_dx, dtype=float) * np.exp(-0.5 * ks.log_weff)
        v = fac.solve(g)
        p = float(g @ v)
        qq = float(g_dx @ v)
    else:
        v = fac.solve(np.asarray(a, dtype=float))
        p = float(np.asarray(a) @ v)
        qq = float(np.asarray(a_dx) @ v)
    return -(p * p) - 2.0 * qq


def d2_logdet_fd(
    bg, dm, x: float, t: float, mode: str = "add", h: float = 1e-3
) -> float:
    """Five-point finite difference of ``log |det(I + K W_t)|`` in x.

    Works for mixed-sign weights.  The five stencil systems share the form
    chosen at the center; in the flipped form only the factorized core is
    differenced because ``sum(log_weff)`` is exactly linear in x.
    """
    center = assemble(bg, dm, x, t, mode=mode)
    form = center.form
    vals = []
    ref_sign = None
    for i in (-2, -1, 0, 1, 2):
        ks = center if i == 0 else assemble(bg, dm, x + i * h, t, mode=mode, form=form)
        fac = ks.factorization()
        if fac.sign == 0.0:
            raise SingularSystemError(ks.x, ks.t, math.inf)
        if ref_sign is None:
            ref_sign = fac.sign
        elif fac.sign != ref_sign:
            raise NonPositiveDeterminantError(ks.x, ks.t, int(fac.sign))
        vals.append(fac.logabsdet)
    return (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (
        12.0 * h * h
    )
