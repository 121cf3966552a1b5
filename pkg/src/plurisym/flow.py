"""Time integration of the coupled Hermitian-form / (2,0)-potential evolution.

The state is a positive real (1,1)-form omega together with a (2,0)-form phi
on a flat torus grid.  omega moves by its second-order codifferential terms
plus the curvature form of its own metric; phi moves by the first-order
coupling term.  The combination preserves closedness of phi + omega + conj(phi)
and the mixed constraint (holomorphic derivative of omega against the
antiholomorphic derivative of phi), which is monitored, never projected.

Integration is classical RK4 with spectral dealiasing applied to every
right-hand side.  Positivity of the metric is checked at each stage and
aborts the run; nothing is regularized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .calculus import (
    TorusGrid,
    chern_hat,
    global_inner_product,
    random_band_limited,
    residual_norms,
)
from .errors import ConfigError, ConstraintViolationError, PositivityLostError
from .forms import (
    Form,
    HermitianMetric,
    conjugate,
    flat_metric,
    fundamental_form,
    metric_of_form,
    metric_trace,
)
from .volume import volume_V

__all__ = [
    "FlowState",
    "FlowConfig",
    "FlowResult",
    "pluriclosed_rhs",
    "phi_rhs",
    "step_rk4",
    "make_initial_hs",
    "make_initial_kahler",
    "parabolic_dt_bound",
    "diagnostics_record",
    "run_flow",
]


@dataclass(eq=False, repr=False)
class FlowState:
    """Flow state at one instant: the two forms plus the cached metric of omega.

    Snapshots collected by run_flow carry ``metric=None`` so a long trajectory
    does not pin hundreds of inverse-metric blocks in memory; rebuild with
    metric_of_form(state.omega) when needed.
    """

    t: float
    omega: Form
    phi: Form
    metric: Optional[HermitianMetric]

    @classmethod
    def make(cls, grid: TorusGrid, t: float, omega: Form, phi: Form) -> "FlowState":
        """Validate bidegrees and payloads, then build the metric of omega.

        Raises PositivityLostError when omega is not a positive form.
        """
        if omega.bidegree != (1, 1):
            raise ValueError(f"omega must be a (1,1)-form, got {omega.bidegree}")
        if phi.bidegree != (2, 0):
            raise ValueError(f"phi must be a (2,0)-form, got {phi.bidegree}")
        for name, f in (("omega", omega), ("phi", phi)):
            if f.n != grid.n or f.payload != grid.shape:
                raise ValueError(
                    f"{name} must live on the grid (n={grid.n}, payload {grid.shape}), "
                    f"got n={f.n}, payload {f.payload}"
                )
        return cls(float(t), omega, phi, metric_of_form(omega))


@dataclass
class FlowConfig:
    """Integrator parameters; validation happens on construction."""

    dt: float = 1e-4
    steps: int = 2000
    sample_every: int = 5
    safety: float = 0.25
    constraint_abort: float = 1e-3
    collect_states: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"flow.dt must be positive, got {self.dt}")
        if self.steps < 0:
            raise ConfigError(f"flow.steps must be nonnegative, got {self.steps}")
        if self.sample_every < 1:
            raise ConfigError(f"flow.sample_every must be at least 1, got {self.sample_every}")
        if not 0 < self.safety <= 1:
            raise ConfigError(f"flow.safety must lie in (0, 1], got {self.safety}")
        if not self.constraint_abort > 0:
            raise ConfigError(
                f"tolerances.constraint_abort must be positive, got {self.constraint_abort}"
            )


@dataclass
class FlowResult:
    """Diagnostic series of a run, optional state snapshots, and the final state."""

    records: List[dict]
    states: List[FlowState]
    final: FlowState


# ----------------------------------------------------------------------
# right-hand sides
# ----------------------------------------------------------------------

def pluriclosed_rhs(grid: TorusGrid, omega: Form,
                    metric: Optional[HermitianMetric] = None) -> Form:
    """Velocity of omega: both codifferential blocks plus the curvature form.

    Computed as C + conj(C) with C = dbar(dbar-codifferential of omega) plus
    half the curvature form, which is algebraically identical for real omega
    and keeps the result self-conjugate to the last bit.  The spectral mask
    is applied once, to C.

    The codifferential itself is evaluated as the metric trace of del(omega),
    which agrees with the star-composition route (codifferential_dbar) on
    (1,1)-forms but costs half as much; the agreement is pinned in the tests.
    """
    if metric is None:
        metric = metric_of_form(omega)
    a = metric_trace(grid.del_form(omega), metric)        # (1,0)
    c_hat = grid.derivative_hat(grid.fft(a.coeffs), 1, 0, anti=True)
    c_hat += 0.5 * chern_hat(grid, metric)
    c_hat *= grid.dealias_mask
    c = Form(grid.n, 1, 1, grid.ifft(c_hat))
    return c + conjugate(c)


def phi_rhs(grid: TorusGrid, phi: Form, omega: Optional[Form] = None,
            metric: Optional[HermitianMetric] = None) -> Form:
    """Velocity of phi: minus the holomorphic derivative of the traced dbar(phi)."""
    if metric is None:
        if omega is None:
            raise ValueError("phi_rhs needs either omega or its metric")
        metric = metric_of_form(omega)
    traced = metric_trace(grid.dbar_form(phi), metric)    # (1,0)
    t_hat = grid.derivative_hat(grid.fft(traced.coeffs), 1, 0, anti=False)
    t_hat *= grid.dealias_mask
    return Form(grid.n, 2, 0, -grid.ifft(t_hat))


def _joint_rhs(grid: TorusGrid, omega: Form, phi: Form):
    # Stage omegas are exact sums of self-conjugate blocks, so the Hermiticity
    # scan is skipped here; positivity is still enforced.
    metric = metric_of_form(omega, herm_tol=None)
    return pluriclosed_rhs(grid, omega, metric), phi_rhs(grid, phi, metric=metric)


# ----------------------------------------------------------------------
# stepping
# ----------------------------------------------------------------------

def step_rk4(grid: TorusGrid, state: FlowState, dt: float) -> FlowState:
    """One classical RK4 step of the coupled system.

    Positivity is enforced at every stage through the metric construction;
    a failure raises PositivityLostError and leaves the caller holding the
    last valid state.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    kw1, kp1 = _joint_rhs(grid, state.omega, state.phi)
    kw2, kp2 = _joint_rhs(grid, state.omega + (0.5 * dt) * kw1,
                          state.phi + (0.5 * dt) * kp1)
    kw3, kp3 = _joint_rhs(grid, state.omega + (0.5 * dt) * kw2,
                          state.phi + (0.5 * dt) * kp2)
    kw4, kp4 = _joint_rhs(grid, state.omega + dt * kw3, state.phi + dt * kp3)
    sixth = dt / 6.0
    omega = state.omega + sixth * (kw1 + 2.0 * kw2 + 2.0 * kw3 + kw4)
    phi = state.phi + sixth * (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4)
    return FlowState.make(grid, state.t + dt, omega, phi)


def parabolic_dt_bound(grid: TorusGrid, metric: HermitianMetric,
                       safety: float = 0.25) -> float:
    """Step-size guideline safety * h^2 * (eigenvalue margin / largest eigenvalue).

    Advisory only: run_flow warns when exceeded but still integrates, so that
    deliberately unstable runs reach the abort machinery.
    """
    h = 1.0 / grid.points
    return safety * h * h * metric.margin / metric.max_eig


# ----------------------------------------------------------------------
# initial data
# ----------------------------------------------------------------------

def make_initial_hs(grid: TorusGrid, epsilon: float = 0.05, seed: int = 42,
                    mode_cutoff: int = 2) -> FlowState:
    """Closed random initial data: flat form plus d of a band-limited real 1-form.

    A complex (1,0)-form zeta with modes up to ``mode_cutoff`` is drawn from
    the seeded generator; the perturbation is d(zeta + conj(zeta)), split into
    its (2,0) part (phi) and its (1,1) part (added to the flat omega), then
    scaled so the largest coefficient has magnitude ``epsilon``.  The total is
    exactly d-closed by construction, and epsilon = 0 gives the flat state.

    Raises PositivityLostError when epsilon is large enough to destroy
    positivity of omega.
    """
    if epsilon < 0:
        raise ConfigError(f"initial.epsilon must be nonnegative, got {epsilon}")
    n = grid.n
    rng = np.random.default_rng(seed)
    zeta = Form.zeros(n, 1, 0, grid.shape)
    for i in range(n):
        zeta.coeffs[i, 0] = random_band_limited(grid, rng, mode_cutoff, real=False)
    phi_raw = grid.del_form(zeta)                      # (2,0) part of d(zeta+conj)
    mixed = grid.dbar_form(zeta)
    omega_raw = mixed + conjugate(mixed)               # (1,1) part, exactly real
    amp = max(
        float(np.max(np.abs(phi_raw.coeffs))) if phi_raw.coeffs.size else 0.0,
        float(np.max(np.abs(omega_raw.coeffs))),
    )
    scale = epsilon / amp if amp > 0 else 0.0
    omega = fundamental_form(flat_metric(n, grid.shape)) + scale * omega_raw
    phi = scale * phi_raw
    return FlowState.make(grid, 0.0, omega, phi)


def make_initial_kahler(grid: TorusGrid, epsilon: float = 0.05, seed: int = 42,
                        mode_cutoff: int = 2) -> FlowState:
    """Closed initial data with phi = 0: flat form plus a potential perturbation.

    omega = flat + scaled i*del(dbar(u)) for a band-limited real potential u,
    symmetrized so the coefficients are Hermitian to the last bit.  States of
    this shape keep phi identically zero along the flow.
    """
    if epsilon < 0:
        raise ConfigError(f"initial.epsilon must be nonnegative, got {epsilon}")
    n = grid.n
    rng = np.random.default_rng(seed)
    u = random_band_limited(grid, rng, mode_cutoff)
    u_form = Form(n, 0, 0, u[(None, None)])
    pert = -1j * grid.dbar_form(grid.del_form(u_form))
    pert = 0.5 * (pert + conjugate(pert))
    amp = float(np.max(np.abs(pert.coeffs)))
    scale = epsilon / amp if amp > 0 else 0.0
    omega = fundamental_form(flat_metric(n, grid.shape)) + scale * pert
    phi = Form.zeros(n, 2, 0, grid.shape)
    return FlowState.make(grid, 0.0, omega, phi)


# ----------------------------------------------------------------------
# driving loop
# ----------------------------------------------------------------------

def diagnostics_record(grid: TorusGrid, state: FlowState) -> dict:
    """One monitoring record: time, volume, self-pairing, residuals, margin."""
    res = residual_norms(grid, state.omega, state.phi)
    return {
        "t": state.t,
        "V": volume_V(grid, state.omega, state.phi),
        "F": global_inner_product(grid, state.phi, state.phi, state.metric).real,
        "d_omega_residual": res["d_omega"],
        "hs_constraint_residual": res["hs_constraint"],
        "del_phi_residual": res["del_phi"],
        "pluriclosed_residual": res["pluriclosed"],
        "min_eig_margin": state.metric.margin,
    }


def run_flow(grid: TorusGrid, state: FlowState, config: FlowConfig) -> FlowResult:
    """Integrate the coupled system, sampling diagnostics every few steps.

    Samples are taken at the start, every ``sample_every`` steps, and at the
    end.  A sample whose constraint residual exceeds ``constraint_abort``
    raises ConstraintViolationError; positivity loss during a step raises
    PositivityLostError unless the evidence points at the integrator (the
    constraint already broken, or dt above the parabolic guideline), which is
    reported as a constraint violation instead.  Either exception carries the
    records collected so far.
    """
    bound = parabolic_dt_bound(grid, state.metric, config.safety)
    if config.dt > bound:
        warnings.warn(
            f"dt={config.dt:g} exceeds the parabolic guideline {bound:g}; "
            "the integration may blow up",
            RuntimeWarning,
            stacklevel=2,
        )
    records: List[dict] = []
    states: List[FlowState] = []

    def take_sample(st: FlowState):
        rec = diagnostics_record(grid, st)
        records.append(rec)
        if config.collect_states:
            states.append(FlowState(st.t, st.omega, st.phi, None))
        if rec["hs_constraint_residual"] > config.constraint_abort:
            raise ConstraintViolationError(
                f"constraint residual {rec['hs_constraint_residual']:.3e} exceeded "
                f"{config.constraint_abort:g} at t={st.t:.6g}",
                t=st.t,
                residual=rec["hs_constraint_residual"],
                records=records,
            )

    t0 = state.t
    take_sample(state)
    for step in range(1, config.steps + 1):
        try:
            state = step_rk4(grid, state, config.dt)
        except PositivityLostError as err:
            last = residual_norms(grid, state.omega, state.phi)
            if last["hs_constraint"] > config.constraint_abort:
                raise ConstraintViolationError(
                    f"positivity failed near t={state.t + config.dt:.6g} with the "
                    f"constraint residual already at {last['hs_constraint']:.3e}",
                    t=state.t,
                    residual=last["hs_constraint"],
                    records=records,
                ) from err
            if config.dt > bound:
                raise ConstraintViolationError(
                    f"positivity failed near t={state.t + config.dt:.6g} with "
                    f"dt={config.dt:g} above the parabolic guideline {bound:g}",
                    t=state.t,
                    residual=last["hs_constraint"],
                    records=records,
                ) from err
            err.t = state.t
            err.records = records
            raise
        state.t = t0 + step * config.dt
        if step % config.sample_every == 0 or step == config.steps:
            take_sample(state)
    return FlowResult(records=records, states=states, final=state)
