"""Which limit theorem and which block-tail asymptotic apply to a ModelSpec."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from ..environment import ModelSpec, SpecError, solve_alpha

BOUNDARY_TOL = 1e-6  # relative tolerance for alpha = beta/2


class RegimeError(ValueError):
    """A scenario was configured outside the hypotheses of its theorem."""


@dataclass
class Regime:
    beta: float
    alpha: Optional[float]
    rho_half_beta: float  # E rho^{beta/2}
    ell_limit: float
    case: Optional[str]  # A, B1, B2, B3, C
    block_case: Optional[str]  # C1..C4
    notes: list = field(default_factory=list)

    def to_dict(self):
        def num(v):
            return None if v is None or not math.isfinite(v) else float(v)

        return {"beta": num(self.beta), "alpha": num(self.alpha),
                "E_rho_half_beta": num(self.rho_half_beta),
                "ell_limit": self.ell_limit if math.isfinite(self.ell_limit) else str(self.ell_limit),
                "case": self.case, "block_case": self.block_case, "notes": list(self.notes)}


def classify_regime(spec: ModelSpec) -> Regime:
    xi = spec.xi_law
    notes = []
    if xi.family != "pareto":
        raise RegimeError("condition (xi) needs a Pareto-type gap law")
    beta = float(xi.beta)
    if beta == 1.0 and math.isfinite(xi.mean()):
        raise RegimeError("condition (xi) with beta = 1 needs E xi = infinity")
    lam = spec.lambda_law
    if lam.mean_log_rho() >= 0:
        raise RegimeError("E log rho < 0 fails: the walk is not transient to the right")
    alpha = spec.alpha_hint
    if alpha is None:
        try:
            alpha = solve_alpha(spec).alpha
        except (ValueError, FloatingPointError, SpecError) as e:
            notes.append(f"solve_alpha: {e}")
            alpha = None
    rhb = lam.rho_moment(beta / 2.0)
    ell = xi.ell_limit()
    half = beta / 2.0
    on_boundary = alpha is not None and abs(alpha - half) <= BOUNDARY_TOL * half
    if on_boundary:
        case = "B1" if ell == math.inf else ("B3" if ell == 0.0 else "B2")
    elif rhb < 1.0:
        case = "A"
    elif alpha is not None and alpha < half:
        case = "C"
    else:
        case = None
    if on_boundary:
        block = "C3" if ell == math.inf else ("C1" if ell == 0.0 else "C2")
    elif rhb < 1.0:
        block = "C4"
    elif alpha is not None and alpha < half:
        block = "C1"
    else:
        block = None
    if spec.coupling != "independent":
        notes.append("rank coupling: the joint conditions on (xi, rho) are not verified")
    return Regime(beta, alpha, rhb, ell, case, block, notes)


REQUIRED = {
    "theorem1": ({"A", "B1", "B2"}, False),
    "theorem2": ({"B3", "C"}, False),
    "theorem3": ({"A", "B1", "B2"}, True),
    "theorem4": ({"B3", "C"}, True),
    "negligibility": ({"A", "B1", "B2"}, False),
}


def check_scenario(scenario: str, spec: ModelSpec) -> Optional[Regime]:
    """Regime of ``spec`` or RegimeError naming the violated condition."""
    if scenario not in REQUIRED and scenario != "tail_lemmas":
        return None
    reg = classify_regime(spec)
    if scenario == "tail_lemmas":
        if reg.block_case is None:
            raise RegimeError("tail_lemmas needs (rho1) or (rho2) with beta/2 in I")
        return reg
    cases, beta_one = REQUIRED[scenario]
    if beta_one and reg.beta != 1.0:
        raise RegimeError(f"{scenario} requires beta = 1 (got beta = {reg.beta:g})")
    if not beta_one and reg.beta >= 1.0:
        raise RegimeError(f"{scenario} requires beta in (0, 1) (got beta = 1)")
    if reg.case not in cases:
        raise RegimeError(f"{scenario} refused: {_violation(reg, cases)}")
    return reg


def _violation(reg: Regime, cases) -> str:
    a = "none" if reg.alpha is None else f"{reg.alpha:.6g}"
    if "A" in cases:
        return (f"(rho2) with beta/2 in I fails (E rho^(beta/2) = {reg.rho_half_beta:.6g} >= 1) "
                f"and (rho1) does not hold with alpha = beta/2 (alpha = {a}, beta/2 = {reg.beta / 2:g});"
                f" the model is in case {reg.case}")
    if reg.case == "A":
        return (f"(rho1) with alpha <= beta/2 fails (alpha = {a}, beta/2 = {reg.beta / 2:g}); "
                f"(rho2) with beta/2 in I holds, so the model is in case A")
    return (f"(rho1) with alpha = beta/2 requires ell -> 0 here "
            f"(ell limit = {reg.ell_limit}); the model is in case {reg.case}")
