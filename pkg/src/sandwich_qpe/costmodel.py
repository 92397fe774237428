"""Analytic circuit-depth accounting under a locality constraint.

One local gate per time step means a controlled application of a depth-L
unitary costs O(n) swaps per layer, inflating depth by a locality factor
modeled as alpha * n.  A selective phase rotation is a multi-qubit
controlled gate of depth Theta(n), likewise inflated, modeled as beta * n^2.
Alpha and beta are presentation knobs, not asserted ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DepthParams:
    n: int              # system qubits
    t_u: float          # circuit depth of one U (layers)
    t_w: float          # depth of the preparation unitary W
    k: int              # power of U being probed
    locality_alpha: float = 3.0   # controlled-layer multiplier: alpha * n
    sprotis_beta: float = 1.0     # phase-rotation depth: beta * n^2
    sprotis_count: int = 1        # rotations per circuit

    def __post_init__(self):
        if min(self.n, self.k) < 1 or min(self.t_u, self.t_w) < 0:
            raise ValueError("depth parameters must be positive")
        if self.locality_alpha <= 0 or self.sprotis_beta <= 0 or self.sprotis_count < 0:
            raise ValueError("depth parameters must be positive")

    @property
    def locality_factor(self) -> float:
        return self.locality_alpha * self.n


def depth_hadamard(params: DepthParams) -> float:
    """Controlled U^k under locality: k * (alpha n) * t_u plus preparation."""
    return params.k * params.locality_factor * params.t_u + params.t_w


def depth_sandwich(params: DepthParams) -> float:
    """Uncontrolled powers, phase-rotation layers, one controlled U for the
    unit-power Hadamard leaf."""
    return (
        params.k * params.t_u
        + params.sprotis_count * params.sprotis_beta * params.n**2
        + params.locality_factor * params.t_u
        + params.t_w
    )


def qubits_required(params: DepthParams) -> int:
    """Both test families need the system plus one control ancilla."""
    return params.n + 1


def fit_loglog_slope(ks, totals) -> tuple[float, float]:
    """Least-squares slope and intercept of log(total) against log(k)."""
    ks = np.asarray(ks, dtype=float)
    totals = np.asarray(totals, dtype=float)
    if ks.size < 2:
        raise ValueError("need at least two points for a slope")
    if np.any(ks <= 0) or np.any(totals <= 0):
        raise ValueError("log-log fit needs positive data")
    slope, intercept = np.polyfit(np.log(ks), np.log(totals), 1)
    return float(slope), float(intercept)


def runtime_summary(rows: list[dict]) -> dict:
    """Compare measured run costs across modes.

    Each row carries at least {mode, k, u_applications} and optionally
    r_min / s_min diagnostics, which are passed through untouched.  Returns
    per-mode log-log slopes of mean U-applications against k plus per-row
    cost ratios relative to the first mode listed.
    """
    if not rows:
        raise ValueError("no rows to summarize")
    modes = []
    for row in rows:
        if row["mode"] not in modes:
            modes.append(row["mode"])
    by_mode: dict[str, dict[int, list[int]]] = {m: {} for m in modes}
    for row in rows:
        by_mode[row["mode"]].setdefault(int(row["k"]), []).append(
            int(row["u_applications"])
        )
    slopes = {}
    for mode, per_k in by_mode.items():
        ks = sorted(per_k)
        if len(ks) >= 2:
            means = [sum(per_k[k]) / len(per_k[k]) for k in ks]
            slopes[mode], _ = fit_loglog_slope(ks, means)
        else:
            slopes[mode] = math.nan
    reference = modes[0]
    ref_mean = {
        k: sum(v) / len(v) for k, v in by_mode[reference].items()
    }
    out_rows = []
    for row in rows:
        ref = ref_mean.get(int(row["k"]))
        ratio = row["u_applications"] / ref if ref else math.nan
        out = dict(row)
        out["ratio_to_" + reference] = ratio
        out["fit_slope"] = slopes[row["mode"]]
        out_rows.append(out)
    return {"slopes": slopes, "rows": out_rows, "reference_mode": reference}
