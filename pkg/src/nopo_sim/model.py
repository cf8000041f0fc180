"""Model parameters for the self-phase-locked NOPO.

All rates and detunings are measured in units of the subharmonic damping
rate (gamma1 = 1 by default); times are in units of its inverse.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Mapping

PARAM_FIELDS = ("gamma1", "gamma2", "delta1", "delta2", "chi", "epsilon", "lam")

# accepted spellings in raw records / config files
_ALIASES = {"lambda": "lam", "lambda_": "lam"}

_DEFAULTS = {
    "gamma1": 1.0,
    "gamma2": 1.0,
    "delta1": 0.0,
    "delta2": 0.0,
    "chi": 0.0,
    "epsilon": 0.0,
    "lam": 0.0,
}


def _check(values: Mapping[str, float]) -> None:
    for name in PARAM_FIELDS:
        v = values[name]
        label = "lambda" if name == "lam" else name
        if not math.isfinite(v):
            raise ValueError(f"{label} must be finite")
    if values["gamma1"] <= 0:
        raise ValueError("gamma1 must be positive")
    if values["gamma2"] <= 0:
        raise ValueError("gamma2 must be positive")
    if values["lam"] < 0:
        raise ValueError("lambda must be nonnegative")
    if values["epsilon"] < 0:
        raise ValueError("epsilon must be nonnegative")


@dataclass(frozen=True)
class SystemParams:
    """Rates of the pump-eliminated two-mode model.

    ``epsilon`` is the effective parametric drive and ``lam`` the effective
    two-photon (pump depletion) nonlinearity; both already absorb the pump
    coupling and pump damping.
    """

    gamma1: float = 1.0
    gamma2: float = 1.0
    delta1: float = 0.0
    delta2: float = 0.0
    chi: float = 0.0
    epsilon: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        for name in PARAM_FIELDS:
            object.__setattr__(self, name, float(getattr(self, name)))
        _check(dataclasses.asdict(self))

    def replace(self, **changes: float) -> "SystemParams":
        changes = {_ALIASES.get(k, k): v for k, v in changes.items()}
        return dataclasses.replace(self, **changes)

    def swapped(self) -> "SystemParams":
        """Same system with the two subharmonic modes relabelled."""
        return dataclasses.replace(
            self,
            gamma1=self.gamma2,
            gamma2=self.gamma1,
            delta1=self.delta2,
            delta2=self.delta1,
        )

    def as_dict(self) -> dict[str, float]:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass(frozen=True)
class RegimeReport:
    locking_lhs: float
    locking_rhs: float
    is_stationary_regime: bool


def validate(raw: Mapping[str, Any]) -> SystemParams:
    """Build :class:`SystemParams` from a loose mapping.

    Missing fields take their defaults. Values may be strings (as read from
    a config file). Raises ``ValueError`` naming the offending field.
    """
    values = dict(_DEFAULTS)
    for key, value in raw.items():
        name = _ALIASES.get(key, key)
        if name not in values:
            raise ValueError(f"unknown key: {key}")
        label = "lambda" if name == "lam" else name
        try:
            values[name] = float(value)
        except (TypeError, ValueError):
            raise ValueError(f"{label} must be a real number, got {value!r}") from None
    _check(values)
    return SystemParams(**values)


def locking_condition(params: SystemParams) -> RegimeReport:
    """Classify the parameters into the stationary or self-pulsing regime.

    Stationary solutions exist when 4 chi^2 D1 D2 > (g1 D2 - g2 D1)^2. The
    right-hand side is squared so that both sides carry rate^4; equality
    counts as non-stationary.
    """
    p = params
    lhs = 4.0 * p.chi**2 * p.delta1 * p.delta2
    rhs = (p.gamma1 * p.delta2 - p.gamma2 * p.delta1) ** 2
    return RegimeReport(lhs, rhs, bool(lhs > rhs))


def threshold_equal_detunings(params: SystemParams, tol: float = 1e-12) -> float:
    """Closed-form oscillation threshold sqrt((chi - |D|)^2 + g^2).

    Only valid for gamma1 == gamma2 and delta1 == delta2.
    """
    p = params
    if abs(p.gamma1 - p.gamma2) > tol or abs(p.delta1 - p.delta2) > tol:
        raise ValueError("closed form requires equal detunings and dampings")
    return math.sqrt((p.chi - abs(p.delta1)) ** 2 + p.gamma1**2)
