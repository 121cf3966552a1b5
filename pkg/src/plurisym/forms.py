"""Pointwise exterior algebra of (p,q)-forms on C^n with a Hermitian metric.

Conventions
-----------
A (p,q)-form is stored through its coefficients on the strictly increasing
basis ``dz^I ^ dzbar^J`` (``|I| = p``, ``|J| = q``, both ascending), giving
``C(n,p) * C(n,q)`` independent complex coefficients.  Coefficient arrays
carry the two basis axes first and any number of trailing sample axes (empty
for a single point, the grid for a field), so every operation here broadcasts
over points.

The metric pairing is fixed once:

* ``<dz^i, dz^j> = ginv[j, i]`` where ``ginv`` is the matrix inverse of
  ``g[i, j] = g_{i jbar}`` (no factor-2 convention),
* inner products of wedge monomials are Gram determinants of those pairings,
* the volume form is ``dV = omega^n / n!`` for the fundamental form
  ``omega = sqrt(-1) * g_{i jbar} dz^i ^ dzbar^j``,
* the Hodge star is complex linear and defined by
  ``a ^ star(conj(b)) = <a, b> dV`` for all a, b of equal bidegree.

With these choices the canonical top coefficient of dV at the identity metric
is ``(sqrt(-1))^n * (-1)^(n(n-1)/2)`` (see ``flat_volume_coefficient``), and
``star(omega^(n-2) ^ beta) = -(n-2)! * metric_trace(beta)`` holds for every
(2,1)-form beta, which is the identity the whole codifferential bookkeeping
leans on.  Degenerate bidegrees (negative, or beyond n) have zero basis
dimension and propagate silently as empty forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations, permutations
from typing import Optional, Tuple

import numpy as np

from .errors import PositivityLostError

__all__ = [
    "Form",
    "HermitianMetric",
    "multi_indices",
    "wedge",
    "conjugate",
    "form_power",
    "inner_product",
    "hodge_star",
    "metric_trace",
    "fundamental_form",
    "volume_form",
    "metric_of_form",
    "flat_volume_coefficient",
    "flat_metric",
]


# ======================================================================
# multi-index combinatorics
# ======================================================================

@lru_cache(maxsize=None)
def multi_indices(n: int, p: int) -> Tuple[Tuple[int, ...], ...]:
    """All strictly increasing p-tuples drawn from 0..n-1 (empty if p is out of range)."""
    if p < 0 or p > n:
        return ()
    return tuple(combinations(range(n), p))


@lru_cache(maxsize=None)
def _index_of(n: int, p: int):
    return {idx: k for k, idx in enumerate(multi_indices(n, p))}


def _basis_dim(n: int, p: int) -> int:
    return math.comb(n, p) if 0 <= p <= n else 0


def _merge_sign(a: Tuple[int, ...], b: Tuple[int, ...]):
    """Sign of sorting the concatenation a+b, or None if the tuples overlap."""
    if set(a) & set(b):
        return None, None
    inversions = sum(1 for x in a for y in b if x > y)
    merged = tuple(sorted(a + b))
    return merged, -1 if inversions % 2 else 1


@lru_cache(maxsize=None)
def _perm_signs(p: int):
    return tuple((perm, _perm_parity(perm)) for perm in permutations(range(p)))


def _perm_parity(perm) -> int:
    sign = 1
    seen = [False] * len(perm)
    for start in range(len(perm)):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def flat_volume_coefficient(n: int) -> complex:
    """Canonical top coefficient of dV at the identity metric.

    dV = omega^n / n! expands to this multiple of dz^(1..n) ^ dzbar^(1..n)
    when g is the identity; integration divides it back out so the flat torus
    has unit volume.
    """
    return (1j ** n) * ((-1) ** (n * (n - 1) // 2))


# ======================================================================
# forms
# ======================================================================

@dataclass(eq=False, repr=False)
class Form:
    """A (p,q)-form; ``coeffs`` has shape (C(n,p), C(n,q), *payload)."""

    n: int
    p: int
    q: int
    coeffs: np.ndarray

    __array_ufunc__ = None  # keep numpy from hijacking arithmetic with ndarrays

    def __repr__(self):
        return f"Form(n={self.n}, bidegree=({self.p},{self.q}), payload={self.payload})"

    def __post_init__(self):
        expected = (_basis_dim(self.n, self.p), _basis_dim(self.n, self.q))
        if self.coeffs.shape[:2] != expected:
            raise ValueError(
                f"coefficient block {self.coeffs.shape[:2]} does not match "
                f"bidegree ({self.p},{self.q}) in dimension {self.n}; expected {expected}"
            )

    # ---- structure ----

    @property
    def payload(self) -> Tuple[int, ...]:
        return self.coeffs.shape[2:]

    @property
    def bidegree(self) -> Tuple[int, int]:
        return (self.p, self.q)

    @property
    def degree(self) -> int:
        return self.p + self.q

    @classmethod
    def zeros(cls, n: int, p: int, q: int, payload: Tuple[int, ...] = ()) -> "Form":
        shape = (_basis_dim(n, p), _basis_dim(n, q)) + tuple(payload)
        return cls(n, p, q, np.zeros(shape, dtype=np.complex128))

    @classmethod
    def constant_one(cls, n: int, payload: Tuple[int, ...] = ()) -> "Form":
        return cls(n, 0, 0, np.ones((1, 1) + tuple(payload), dtype=np.complex128))

    def copy(self) -> "Form":
        return Form(self.n, self.p, self.q, self.coeffs.copy())

    # ---- arithmetic (same bidegree; payloads equal or one pointwise) ----

    def _check_compatible(self, other: "Form"):
        if (self.n, self.p, self.q) != (other.n, other.p, other.q):
            raise ValueError(
                f"bidegree mismatch: ({self.p},{self.q}) vs ({other.p},{other.q}) "
                f"in dimensions {self.n} vs {other.n}"
            )

    def __add__(self, other: "Form") -> "Form":
        self._check_compatible(other)
        a, b = _align_payloads(self.coeffs, other.coeffs)
        return Form(self.n, self.p, self.q, a + b)

    def __sub__(self, other: "Form") -> "Form":
        self._check_compatible(other)
        a, b = _align_payloads(self.coeffs, other.coeffs)
        return Form(self.n, self.p, self.q, a - b)

    def __neg__(self) -> "Form":
        return Form(self.n, self.p, self.q, -self.coeffs)

    def __mul__(self, factor) -> "Form":
        """Scale by a scalar or by a payload-shaped array (pointwise function)."""
        factor = np.asarray(factor)
        return Form(self.n, self.p, self.q, self.coeffs * factor)

    __rmul__ = __mul__

    def flat_norm_sq(self):
        """Pointwise squared norm at the identity metric (payload-shaped, real)."""
        return np.sum(np.abs(self.coeffs) ** 2, axis=(0, 1))


def _align_payloads(a: np.ndarray, b: np.ndarray):
    """Pad the shorter payload with singleton axes right after the basis axes."""
    da, db = a.ndim, b.ndim
    if da < db:
        a = a.reshape(a.shape[:2] + (1,) * (db - da) + a.shape[2:])
    elif db < da:
        b = b.reshape(b.shape[:2] + (1,) * (da - db) + b.shape[2:])
    return a, b


# ======================================================================
# wedge product and conjugation
# ======================================================================

@lru_cache(maxsize=None)
def _wedge_table(n, pa, qa, pb, qb):
    cross = -1 if (pb * qa) % 2 else 1
    out_hol = _index_of(n, pa + pb)
    out_anti = _index_of(n, qa + qb)
    rows = []
    for ai, I_a in enumerate(multi_indices(n, pa)):
        for bi, I_b in enumerate(multi_indices(n, pb)):
            merged_i, sign_i = _merge_sign(I_a, I_b)
            if merged_i is None:
                continue
            for aj, J_a in enumerate(multi_indices(n, qa)):
                for bj, J_b in enumerate(multi_indices(n, qb)):
                    merged_j, sign_j = _merge_sign(J_a, J_b)
                    if merged_j is None:
                        continue
                    rows.append(
                        (ai, aj, bi, bj,
                         out_hol[merged_i], out_anti[merged_j],
                         cross * sign_i * sign_j)
                    )
    return tuple(rows)


def wedge(a: Form, b: Form) -> Form:
    """Exterior product; bidegrees beyond n collapse to the empty form."""
    if a.n != b.n:
        raise ValueError("wedge of forms over different ambient dimensions")
    n = a.n
    p, q = a.p + b.p, a.q + b.q
    ca, cb = _align_payloads(a.coeffs, b.coeffs)
    payload = np.broadcast_shapes(ca.shape[2:], cb.shape[2:])
    out = np.zeros((_basis_dim(n, p), _basis_dim(n, q)) + payload, dtype=np.complex128)
    for ai, aj, bi, bj, oi, oj, sign in _wedge_table(n, a.p, a.q, b.p, b.q):
        term = ca[ai, aj] * cb[bi, bj]
        if sign < 0:
            out[oi, oj] -= term
        else:
            out[oi, oj] += term
    return Form(n, p, q, out)


def conjugate(a: Form) -> Form:
    """Complex conjugate form: bidegree (p,q) -> (q,p) with sign (-1)^(pq)."""
    sign = -1 if (a.p * a.q) % 2 else 1
    return Form(a.n, a.q, a.p, sign * np.conj(np.swapaxes(a.coeffs, 0, 1)))


def form_power(a: Form, k: int, payload: Tuple[int, ...] = ()) -> Form:
    """k-fold wedge a^k; k = 0 gives the constant function 1."""
    if k < 0:
        raise ValueError("negative wedge power")
    if k == 0:
        return Form.constant_one(a.n, payload or a.payload)
    out = a
    for _ in range(k - 1):
        out = wedge(out, a)
    return out


# ======================================================================
# Hermitian metrics
# ======================================================================

def _swap_conj(g: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(g, 0, 1))


def _matrix_det_inv(g: np.ndarray, n: int):
    """Determinant and inverse of an (n,n,*payload) matrix stack, closed form for n<=3."""
    if n == 1:
        det = g[0, 0]
        ginv = 1.0 / g
        return det, ginv
    if n == 2:
        det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
        inv_det = 1.0 / det
        ginv = np.empty_like(g)
        ginv[0, 0] = g[1, 1] * inv_det
        ginv[1, 1] = g[0, 0] * inv_det
        ginv[0, 1] = -g[0, 1] * inv_det
        ginv[1, 0] = -g[1, 0] * inv_det
        return det, ginv
    if n == 3:
        c00 = g[1, 1] * g[2, 2] - g[1, 2] * g[2, 1]
        c01 = g[1, 2] * g[2, 0] - g[1, 0] * g[2, 2]
        c02 = g[1, 0] * g[2, 1] - g[1, 1] * g[2, 0]
        det = g[0, 0] * c00 + g[0, 1] * c01 + g[0, 2] * c02
        adj = np.empty_like(g)
        adj[0, 0] = c00
        adj[1, 0] = c01
        adj[2, 0] = c02
        adj[0, 1] = g[0, 2] * g[2, 1] - g[0, 1] * g[2, 2]
        adj[1, 1] = g[0, 0] * g[2, 2] - g[0, 2] * g[2, 0]
        adj[2, 1] = g[0, 1] * g[2, 0] - g[0, 0] * g[2, 1]
        adj[0, 2] = g[0, 1] * g[1, 2] - g[0, 2] * g[1, 1]
        adj[1, 2] = g[0, 2] * g[1, 0] - g[0, 0] * g[1, 2]
        adj[2, 2] = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
        return det, adj / det
    stacked = np.moveaxis(g, (0, 1), (-2, -1))
    det = np.linalg.det(stacked)
    ginv = np.moveaxis(np.linalg.inv(stacked), (-2, -1), (0, 1))
    return det, ginv


def _eig_range(g: np.ndarray, n: int):
    """(global min, global max) eigenvalue of a Hermitian (n,n,*payload) stack."""
    if n == 1:
        vals = g[0, 0].real
        return float(np.min(vals)), float(np.max(vals))
    if n == 2:
        off = g[0, 1]
        mid = 0.5 * (g[0, 0].real + g[1, 1].real)
        rad = np.sqrt((0.5 * (g[0, 0].real - g[1, 1].real)) ** 2
                      + off.real ** 2 + off.imag ** 2)
        return float(np.min(mid - rad)), float(np.max(mid + rad))
    herm = 0.5 * (g + _swap_conj(g))
    vals = np.linalg.eigvalsh(np.moveaxis(herm, (0, 1), (-2, -1)))
    return float(np.min(vals)), float(np.max(vals))


@dataclass(eq=False, repr=False)
class HermitianMetric:
    """Validated Hermitian metric with cached inverse, determinant, and eigen range."""

    n: int
    g: np.ndarray       # (n, n, *payload)
    ginv: np.ndarray
    det: np.ndarray     # real, payload-shaped
    margin: float       # global smallest eigenvalue
    max_eig: float
    hermiticity_defect: float

    @property
    def payload(self) -> Tuple[int, ...]:
        return self.g.shape[2:]

    @classmethod
    def from_matrix(cls, g: np.ndarray, require_positive: bool = True,
                    herm_tol: Optional[float] = 1e-8) -> "HermitianMetric":
        """Build from the coefficient block g_{i jbar}.

        ``herm_tol=None`` skips the Hermiticity scan (defect recorded as nan);
        only for callers that guarantee g == g^H structurally, e.g. inner flow
        stages whose input is an exact sum of a block and its conjugate
        transpose.  Positivity is always checked when ``require_positive``.
        """
        g = np.asarray(g, dtype=np.complex128)
        n = g.shape[0]
        if g.shape[:2] != (n, n):
            raise ValueError(f"metric block must be square, got {g.shape[:2]}")
        if herm_tol is None:
            defect = float("nan")
        else:
            scale = float(np.max(np.abs(g))) or 1.0
            defect = float(np.max(np.abs(g - _swap_conj(g)))) / scale
            if defect > herm_tol:
                raise ValueError(f"metric is not Hermitian: defect {defect:.3e} > {herm_tol:.1e}")
        lo, hi = _eig_range(g, n)
        if require_positive and lo <= 0.0:
            raise PositivityLostError(
                f"metric lost positivity: smallest eigenvalue {lo:.6e}", margin=lo
            )
        det, ginv = _matrix_det_inv(g, n)
        return cls(n, g, ginv, det.real, lo, hi, defect)


def flat_metric(n: int, payload: Tuple[int, ...] = ()) -> HermitianMetric:
    """The identity metric, optionally broadcast over a payload."""
    eye = np.eye(n, dtype=np.complex128).reshape((n, n) + (1,) * len(payload))
    g = np.broadcast_to(eye, (n, n) + tuple(payload)).copy()
    return HermitianMetric.from_matrix(g)


def fundamental_form(metric: HermitianMetric) -> Form:
    """omega = sqrt(-1) g_{i jbar} dz^i ^ dzbar^j."""
    return Form(metric.n, 1, 1, 1j * metric.g)


def metric_of_form(w: Form, require_positive: bool = True,
                   herm_tol: Optional[float] = 1e-8) -> HermitianMetric:
    """Extract g_{i jbar} = -sqrt(-1) * (coefficient of dz^i ^ dzbar^j) from a real (1,1)-form.

    Reality of w is equivalent to Hermiticity of g, which is what gets
    validated; positivity failure raises unless ``require_positive=False``
    (diagnostics on broken states still need the margin).
    """
    if w.bidegree != (1, 1):
        raise ValueError(f"metric extraction needs a (1,1)-form, got {w.bidegree}")
    return HermitianMetric.from_matrix(-1j * w.coeffs, require_positive, herm_tol)


def volume_form(metric: HermitianMetric) -> Form:
    """dV = omega^n / n! as an (n,n)-form."""
    coeff = metric.det * flat_volume_coefficient(metric.n)
    return Form(metric.n, metric.n, metric.n,
                coeff.reshape((1, 1) + coeff.shape).astype(np.complex128))


# ======================================================================
# metric pairings: inner product, Hodge star, trace
# ======================================================================

def _minor_det(ginv: np.ndarray, rows: Tuple[int, ...], cols: Tuple[int, ...]):
    """det over a,b of ginv[rows[sigma(a)], cols[a]] via permutation expansion."""
    k = len(rows)
    if k == 0:
        return 1.0
    if k == 1:
        return ginv[rows[0], cols[0]]
    total = None
    for perm, sign in _perm_signs(k):
        term = ginv[rows[perm[0]], cols[0]]
        for a in range(1, k):
            term = term * ginv[rows[perm[a]], cols[a]]
        total = sign * term if total is None else total + sign * term
    return total


def inner_product(a: Form, b: Form, metric: Optional[HermitianMetric] = None):
    """Pointwise Hermitian inner product <a, b> (payload-shaped complex array).

    ``metric=None`` means the identity metric, for which the increasing basis
    is orthonormal.  In general the pairing of basis monomials is the product
    of the holomorphic and antiholomorphic Gram determinants.
    """
    a._check_compatible(b)
    ca, cb = _align_payloads(a.coeffs, b.coeffs)
    if metric is None:
        return np.einsum("ij...,ij...->...", ca, np.conj(cb))
    ginv = metric.ginv
    hol = multi_indices(a.n, a.p)
    anti = multi_indices(a.n, a.q)
    if not hol or not anti:
        payload = np.broadcast_shapes(ca.shape[2:], cb.shape[2:], metric.payload)
        return np.zeros(payload, dtype=np.complex128)
    total = 0.0
    for bi, I in enumerate(hol):
        for gi, K in enumerate(hol):
            # <dz^I, dz^K> = det ginv[K_b, I_a]
            hdet = _minor_det(ginv, K, I)
            for bj, J in enumerate(anti):
                for gj, L in enumerate(anti):
                    # <dzbar^J, dzbar^L> = det ginv[J_a, L_b]
                    adet = _minor_det(ginv, J, L)
                    total = total + ca[bi, bj] * np.conj(cb[gi, gj]) * hdet * adet
    return total


@lru_cache(maxsize=None)
def _star_layout(n, r, s):
    """Static combinatorics for star on (r,s)-forms: output slots and pairing signs."""
    hol_in = multi_indices(n, r)     # holomorphic slots of the input
    anti_in = multi_indices(n, s)
    test_hol = multi_indices(n, s)   # the (s,r) test-form space
    test_anti = multi_indices(n, r)
    out_hol = _index_of(n, n - s)
    out_anti = _index_of(n, n - r)
    sign_rs = -1 if (r * s) % 2 else 1
    cross = -1 if (r * (n - s)) % 2 else 1
    rows = []
    full = tuple(range(n))
    for I in test_hol:
        I_comp = tuple(x for x in full if x not in I)
        _, sI = _merge_sign(I, I_comp)
        for J in test_anti:
            J_comp = tuple(x for x in full if x not in J)
            _, sJ = _merge_sign(J, J_comp)
            w = cross * sI * sJ
            rows.append((I, J, out_hol[I_comp], out_anti[J_comp], sign_rs * w))
    return rows, test_hol, test_anti


def hodge_star(a: Form, metric: Optional[HermitianMetric] = None) -> Form:
    """Complex-linear Hodge star, (r,s) -> (n-s, n-r).

    Defined by ``b ^ star(a) = <b, conj(a)> dV`` for every (s,r)-form b, which
    is the pairing form of ``x ^ star(conj(y)) = <x, y> dV``.
    """
    n, r, s = a.n, a.p, a.q
    if metric is None:
        metric = flat_metric(n, a.payload)
    ginv = metric.ginv
    rows, test_hol, test_anti = _star_layout(n, r, s)
    payload = np.broadcast_shapes(a.payload, metric.payload)
    out = Form.zeros(n, n - s, n - r, payload)
    dvc = metric.det * flat_volume_coefficient(n)
    hol_lookup = _index_of(n, r)
    anti_lookup = _index_of(n, s)
    for I, J, oi, oj, w in rows:
        acc = None
        for Ip in test_hol:
            hdet = _minor_det(ginv, Ip, I)  # <dz^I, dz^Ip> = det ginv[Ip_b, I_a]
            for Jp in test_anti:
                adet = _minor_det(ginv, J, Jp)  # <dzbar^J, dzbar^Jp>
                c = a.coeffs[hol_lookup[Jp], anti_lookup[Ip]]
                term = c * (hdet * adet)
                acc = term if acc is None else acc + term
        val = (w * dvc) * acc
        out.coeffs[oi, oj] = val
    return out


@lru_cache(maxsize=None)
def _trace_table(n, p, q):
    """Rows (out_i, out_j, hol_idx, anti_idx, in_i, in_j, sign) for the metric trace.

    Contracts the last holomorphic against the first antiholomorphic slot:
    out[I', J'] = sum_{a,b} ginv[b, a] * sign * in[sort(I'+a), sort(b+J')].
    """
    rows = []
    in_hol = _index_of(n, p)
    in_anti = _index_of(n, q)
    for oi, Ip in enumerate(multi_indices(n, p - 1)):
        for oj, Jp in enumerate(multi_indices(n, q - 1)):
            for a in range(n):
                if a in Ip:
                    continue
                sign_a = -1 if sum(1 for x in Ip if x > a) % 2 else 1
                I_full = tuple(sorted(Ip + (a,)))
                for b in range(n):
                    if b in Jp:
                        continue
                    sign_b = -1 if sum(1 for x in Jp if x < b) % 2 else 1
                    J_full = tuple(sorted(Jp + (b,)))
                    rows.append((oi, oj, a, b, in_hol[I_full], in_anti[J_full],
                                 sign_a * sign_b))
    return tuple(rows)


def metric_trace(a: Form, metric: HermitianMetric) -> Form:
    """sqrt(-1) times the adjoint of wedging with the fundamental form.

    In an orthonormal frame this sends a (2,1)-form beta to
    ``sum_k beta_{s k kbar} dz^s``; on any (p,0)- or (0,q)-form it vanishes
    (those are primitive), returned here as the empty form of bidegree
    (p-1, q-1).
    """
    n = a.n
    out = Form.zeros(n, a.p - 1, a.q - 1,
                     np.broadcast_shapes(a.payload, metric.payload))
    ginv = metric.ginv
    for oi, oj, ahol, banti, ii, ij, sign in _trace_table(n, a.p, a.q):
        term = ginv[banti, ahol] * a.coeffs[ii, ij]
        if sign < 0:
            out.coeffs[oi, oj] -= term
        else:
            out.coeffs[oi, oj] += term
    return out
