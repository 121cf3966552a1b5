"""Structural self-checks: pointwise algebra suites and spectral calculus suites.

Every check pits two independently implemented routes against each other
(combinatorial star table vs contraction table, composed derivatives vs zero,
integration by parts vs direct integrals) and records the worst error over a
batch of random draws.  The suites exist so a build can be validated end to
end from the command line; the unit tests cover the same ground with frozen
cases, while these run fresh randomized batches on every invocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .calculus import (
    TorusGrid,
    chern_form,
    codifferential_dbar,
    codifferential_del,
    global_inner_product,
    integrate,
    random_band_limited,
    residual_norms,
)
from .forms import (
    Form,
    HermitianMetric,
    conjugate,
    flat_metric,
    form_power,
    fundamental_form,
    hodge_star,
    inner_product,
    metric_of_form,
    metric_trace,
    volume_form,
    wedge,
)

__all__ = [
    "CheckResult",
    "pointwise_suite",
    "calculus_suite",
    "run_all_suites",
    "POINTWISE_SAMPLES",
]

POINTWISE_SAMPLES = 100

# Test hook: when True the star-vs-contraction check flips the sign of the
# contraction side, which must make that suite fail.  Proves the suite would
# catch a miswired build; never set outside tests.
_SIGN_FLIP = False


@dataclass
class CheckResult:
    """Outcome of one invariant batch: worst error seen against its tolerance."""

    name: str
    worst_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.worst_error <= self.tolerance)

    def row(self) -> dict:
        return {
            "name": self.name,
            "worst_error": float(self.worst_error),
            "tolerance": float(self.tolerance),
            "passed": self.passed,
        }


def _random_metric(rng: np.random.Generator, n: int) -> HermitianMetric:
    """Random strictly positive Hermitian metric with condition number O(n)."""
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    g = a @ a.conj().T + np.eye(n)
    return HermitianMetric.from_matrix(g)

def _random_form(rng: np.random.Generator, n: int, p: int, q: int) -> Form:
    shape = (math.comb(n, p), math.comb(n, q))
    coeffs = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return Form(n, p, q, coeffs)


def _flat_norm(a: Form) -> float:
    return float(np.sqrt(np.sum(np.abs(a.coeffs) ** 2)))


# ----------------------------------------------------------------------
# pointwise suites
# ----------------------------------------------------------------------

def pointwise_suite(seed: int = 20250819,
                    samples: int = POINTWISE_SAMPLES,
                    sign_flip: Optional[bool] = None) -> List[CheckResult]:
    """Pointwise exterior-algebra invariants over random (metric, form) draws.

    The headline check contracts a (2,1)-form against the metric two ways:
    through the Hodge star of its wedge with omega^(n-2), and through the
    contraction table.  Star and contraction never share code, so agreement
    pins the orientation, the pairing normalization, and both combinatorial
    tables at once.
    """
    if sign_flip is None:
        sign_flip = _SIGN_FLIP
    rng = np.random.default_rng(seed)
    results: List[CheckResult] = []
    flip = -1.0 if sign_flip else 1.0

    for n in (2, 3, 4):
        worst = 0.0
        fact = float(math.factorial(n - 2))
        for _ in range(samples):
            m = _random_metric(rng, n)
            beta = _random_form(rng, n, 2, 1)
            starred = hodge_star(wedge(form_power(fundamental_form(m), n - 2), beta), m)
            contracted = metric_trace(beta, m)
            residual = starred + (flip * fact) * contracted
            worst = max(worst, _flat_norm(residual) / _flat_norm(beta))
        results.append(CheckResult(f"star-trace contraction n={n}", worst, 1e-12))

    star_worst = 0.0
    pairing_worst = 0.0
    weil_worst = 0.0
    round_worst = 0.0
    for n in (2, 3, 4):
        for _ in range(samples // 2):
            m = _random_metric(rng, n)
            vol = volume_form(m)
            p = int(rng.integers(0, n + 1))
            q = int(rng.integers(0, n + 1))
            a = _random_form(rng, n, p, q)
            b = _random_form(rng, n, p, q)
            # defining property of the star: a ^ star(conj b) = <a,b> vol
            lhs = wedge(a, hodge_star(conjugate(b), m)).coeffs[0, 0]
            want = complex(inner_product(a, b, m)) * vol.coeffs[0, 0]
            scale = max(abs(want), _flat_norm(a) * _flat_norm(b), 1e-300)
            star_worst = max(star_worst, abs(lhs - want) / scale)
            # conjugate symmetry of the pairing
            pairing_worst = max(
                pairing_worst,
                abs(complex(inner_product(a, b, m))
                    - complex(inner_product(b, a, m)).conjugate()) / scale,
            )
        w = fundamental_form(m)
        weil_worst = max(weil_worst, abs(complex(inner_product(w, w, m)) - n))
        back = metric_of_form(w)
        round_worst = max(
            round_worst,
            float(np.max(np.abs(back.g - m.g))) / float(np.max(np.abs(m.g))),
        )
    results.append(CheckResult("star defining property", star_worst, 1e-11))
    results.append(CheckResult("pairing conjugate symmetry", pairing_worst, 1e-12))
    results.append(CheckResult("fundamental form self-pairing = n", weil_worst, 1e-11))
    results.append(CheckResult("metric round trip", round_worst, 1e-13))
    return results


# ----------------------------------------------------------------------
# grid calculus suites
# ----------------------------------------------------------------------

def _grid_draws(grid: TorusGrid, rng: np.random.Generator, p: int, q: int,
                cutoff: int = 2) -> Form:
    n = grid.n
    out = Form.zeros(n, p, q, grid.shape)
    for i in range(out.coeffs.shape[0]):
        for j in range(out.coeffs.shape[1]):
            out.coeffs[i, j] = random_band_limited(grid, rng, cutoff, real=False)
    return out


def _flat_l2(grid: TorusGrid, a: Form) -> float:
    if a.coeffs.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(a.flat_norm_sq())))


def calculus_suite(seed: int = 20250819) -> List[CheckResult]:
    """Spectral-calculus invariants on the standard desk-scale grids.

    Covers nilpotency of the derivatives, Stokes on the torus, adjointness of
    the codifferentials in a varying metric, the torsion-trace identity the
    flow relies on, reality and closedness of the curvature form, spectral
    differentiation accuracy, and unit flat volume.
    """
    rng = np.random.default_rng(seed)
    results: List[CheckResult] = []
    grids = (TorusGrid(2, 16), TorusGrid(3, 8))

    nil_worst = 0.0
    stokes_worst = 0.0
    for grid in grids:
        n = grid.n
        for p, q in ((0, 0), (1, 0), (0, 1), (1, 1)):
            a = _grid_draws(grid, rng, p, q)
            norm = max(_flat_l2(grid, a), 1e-300)
            dd = grid.del_form(grid.del_form(a))
            bb = grid.dbar_form(grid.dbar_form(a))
            mixed = grid.dbar_form(grid.del_form(a)) + grid.del_form(grid.dbar_form(a))
            nil_worst = max(
                nil_worst,
                _flat_l2(grid, dd) / norm,
                _flat_l2(grid, bb) / norm,
                _flat_l2(grid, mixed) / norm,
            )
        # integrals of exact top-degree forms vanish
        chi = _grid_draws(grid, rng, n - 1, n)
        eta = _grid_draws(grid, rng, n, n - 1)
        top_scale = max(_flat_l2(grid, chi), _flat_l2(grid, eta), 1e-300)
        stokes_worst = max(
            stokes_worst,
            abs(integrate(grid, grid.del_form(chi))) / top_scale,
            abs(integrate(grid, grid.dbar_form(eta))) / top_scale,
        )
    results.append(CheckResult("derivative nilpotency", nil_worst, 1e-12))
    results.append(CheckResult("stokes on the torus", stokes_worst, 1e-10))

    adj_worst = 0.0
    torsion_worst = 0.0
    chern_worst = 0.0
    for grid in grids:
        n = grid.n
        flat = fundamental_form(flat_metric(n, grid.shape))
        # metric bumps stay at one mode so products of the inverse metric keep
        # their spectral tail far below Nyquist even on the coarse n=3 grid;
        # wider bumps alias the star-composition route visibly at N=8
        bump = _grid_draws(grid, rng, 1, 1, cutoff=1)
        bump = 0.05 * (bump + conjugate(bump))
        omega = flat + bump
        m = metric_of_form(omega)
        # adjointness of del against its codifferential in the varying metric
        a = grid.truncate(_grid_draws(grid, rng, 1, 0))
        b = grid.truncate(_grid_draws(grid, rng, 2, 0))
        lhs = global_inner_product(grid, grid.del_form(a), b, m)
        rhs = global_inner_product(grid, a, codifferential_del(grid, b, m), m)
        adj_worst = max(adj_worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
        # the identity behind the flow's cheap torsion route
        lhs_t = codifferential_dbar(grid, omega, m)
        rhs_t = metric_trace(grid.del_form(omega), m)
        torsion_worst = max(
            torsion_worst,
            _flat_l2(grid, lhs_t - rhs_t) / max(_flat_l2(grid, rhs_t), 1e-300),
        )
        c = chern_form(grid, m)
        chern_worst = max(
            chern_worst,
            _flat_l2(grid, conjugate(c) - c),
            _flat_l2(grid, grid.del_form(c)),
            _flat_l2(grid, grid.dbar_form(c)),
        )
    results.append(CheckResult("codifferential adjointness", adj_worst, 1e-10))
    results.append(CheckResult("torsion trace identity", torsion_worst, 1e-10))
    results.append(CheckResult("curvature form real and closed", chern_worst, 1e-10))

    # spectral differentiation of one explicit wave, cos(2 pi (2 x^1 - y^2)),
    # against its hand-computed holomorphic derivatives
    grid = TorusGrid(2, 16)
    x = grid.coordinates()
    theta = 2 * np.pi * (2 * x[0] - x[3])
    f = Form(2, 0, 0, np.broadcast_to(np.cos(theta), grid.shape)[(None, None)])
    df = grid.del_form(f)
    s = np.sin(theta)
    spec_err = float(np.max(np.abs(df.coeffs[0, 0] - (-2 * np.pi) * s)))
    spec_err = max(spec_err, float(np.max(np.abs(df.coeffs[1, 0] - (-1j * np.pi) * s))))
    results.append(CheckResult("spectral derivative of a wave", spec_err, 1e-11))

    flat_err = 0.0
    for grid in grids:
        m = flat_metric(grid.n, grid.shape)
        flat_err = max(flat_err, abs(integrate(grid, volume_form(m)) - 1.0))
        res = residual_norms(grid, fundamental_form(m),
                             Form.zeros(grid.n, 2, 0, grid.shape))
        flat_err = max(flat_err, max(res.values()))
    results.append(CheckResult("flat state is exactly structured", flat_err, 1e-13))
    return results


def run_all_suites(seed: int = 20250819) -> List[CheckResult]:
    """All invariant suites in report order."""
    return pointwise_suite(seed) + calculus_suite(seed)
