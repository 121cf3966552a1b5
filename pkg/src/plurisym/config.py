"""Strict JSON run configuration: schema validation with full defaulting.

The config is JSON-shaped with four nested sections (initial, flow,
tolerances, output/format at top level).  Parsing is strict: unknown keys are
rejected at every level, every numeric field is range-checked, and error
messages name the offending key by its dotted path so a failing run can be
fixed from the message alone.  A minimal ``{"dimension": 2}`` resolves every
other field from the default table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError

__all__ = [
    "InitialSettings",
    "FlowSettings",
    "Tolerances",
    "RunConfig",
    "parse_config",
    "DEFAULT_GRID",
]

DEFAULT_GRID = {2: 16, 3: 8}

INITIAL_TYPES = ("perturbed_flat", "flat_kahler")


@dataclass
class InitialSettings:
    """Initial data selection.

    ``flat_kahler`` starts from the exactly flat torus state (a fixed point
    of the flow); epsilon, seed and mode_cutoff only shape ``perturbed_flat``
    data.
    """

    type: str = "perturbed_flat"
    epsilon: float = 0.05
    seed: int = 42
    mode_cutoff: int = 2


@dataclass
class FlowSettings:
    dt: float = 1e-4
    steps: int = 2000
    sample_every: int = 5
    safety: float = 0.25


@dataclass
class Tolerances:
    """Abort threshold plus the pass/fail tolerances of the analysis reports."""

    constraint_abort: float = 1e-3
    beta_residual: float = 1e-8
    identity_rel: float = 1e-4
    resolution_guard: float = 5e-3
    fit_residual: float = 1e-6
    a0_rel: float = 1e-10
    a1_rel: float = 1e-3
    a2_rel: float = 1e-6


@dataclass
class RunConfig:
    dimension: int
    grid: int
    initial: InitialSettings
    flow: FlowSettings
    tolerances: Tolerances
    output: Optional[str] = None
    format: str = "csv"


def _reject_unknown(mapping: dict, allowed: tuple, path: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key: {where}{unknown[0]}")


def _section(raw: dict, key: str) -> dict:
    val = raw.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(f"{key} must be an object, got {type(val).__name__}")
    return val


def _number(section: dict, key: str, path: str, default, lo, hi,
            integral: bool = False):
    val = section.get(key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path} must be a number, got {val!r}")
    if integral and not isinstance(val, int):
        raise ConfigError(f"{path} must be an integer, got {val!r}")
    if not lo <= val <= hi:
        raise ConfigError(f"{path} must lie in [{lo}, {hi}], got {val}")
    return int(val) if integral else float(val)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON config, filling every default.

    Raises ConfigError on malformed JSON, unknown keys, missing dimension,
    or out-of-range values; the message names the offending key.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
    _reject_unknown(
        raw,
        ("dimension", "grid", "initial", "flow", "tolerances", "output", "format"),
        "",
    )

    if "dimension" not in raw:
        raise ConfigError("dimension is required (supported: 2, 3)")
    dim = raw["dimension"]
    if dim not in (2, 3):
        raise ConfigError(f"dimension is out of range: got {dim!r} (supported: 2, 3)")

    grid = _number(raw, "grid", "grid", DEFAULT_GRID[dim], 4, 64, integral=True)

    sec = _section(raw, "initial")
    _reject_unknown(sec, ("type", "epsilon", "seed", "mode_cutoff"), "initial")
    kind = sec.get("type", "perturbed_flat")
    if kind not in INITIAL_TYPES:
        raise ConfigError(
            f"initial.type must be one of {', '.join(INITIAL_TYPES)}, got {kind!r}"
        )
    initial = InitialSettings(
        type=kind,
        epsilon=_number(sec, "epsilon", "initial.epsilon", 0.05, 0.0, 0.999),
        seed=_number(sec, "seed", "initial.seed", 42, 0, 2 ** 64 - 1, integral=True),
        mode_cutoff=_number(sec, "mode_cutoff", "initial.mode_cutoff",
                            min(2, grid // 3), 1, grid // 3, integral=True),
    )

    sec = _section(raw, "flow")
    _reject_unknown(sec, ("dt", "steps", "sample_every", "safety"), "flow")
    flow = FlowSettings(
        dt=_number(sec, "dt", "flow.dt", 1e-4, 1e-12, 1.0),
        steps=_number(sec, "steps", "flow.steps", 2000, 0, 10 ** 7, integral=True),
        sample_every=_number(sec, "sample_every", "flow.sample_every", 5, 1,
                             10 ** 6, integral=True),
        safety=_number(sec, "safety", "flow.safety", 0.25, 1e-6, 1.0),
    )

    sec = _section(raw, "tolerances")
    _reject_unknown(
        sec,
        ("constraint_abort", "beta_residual", "identity_rel", "resolution_guard",
         "fit_residual", "a0_rel", "a1_rel", "a2_rel"),
        "tolerances",
    )
    tol = Tolerances(
        constraint_abort=_number(sec, "constraint_abort",
                                 "tolerances.constraint_abort", 1e-3, 1e-16, 1e6),
        beta_residual=_number(sec, "beta_residual",
                              "tolerances.beta_residual", 1e-8, 1e-16, 1.0),
        identity_rel=_number(sec, "identity_rel",
                             "tolerances.identity_rel", 1e-4, 1e-16, 1.0),
        resolution_guard=_number(sec, "resolution_guard",
                                 "tolerances.resolution_guard", 5e-3, 1e-16, 1.0),
        fit_residual=_number(sec, "fit_residual",
                             "tolerances.fit_residual", 1e-6, 1e-16, 1.0),
        a0_rel=_number(sec, "a0_rel", "tolerances.a0_rel", 1e-10, 1e-16, 1.0),
        a1_rel=_number(sec, "a1_rel", "tolerances.a1_rel", 1e-3, 1e-16, 1.0),
        a2_rel=_number(sec, "a2_rel", "tolerances.a2_rel", 1e-6, 1e-16, 1.0),
    )

    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError(f"output must be a string path, got {output!r}")
    fmt = raw.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {fmt!r}")

    return RunConfig(
        dimension=int(dim),
        grid=grid,
        initial=initial,
        flow=flow,
        tolerances=tol,
        output=output,
        format=fmt,
    )
