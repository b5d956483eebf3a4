"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .tensor import ParamGroup, Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    tol: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked_entries: dict[str, int] = field(default_factory=dict)
    floor: float = 0.0

    @property
    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.max_rel_error.items() if not v <= self.tol}

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status} worst={self.worst:.3e} tol={self.tol:.1e}"]
        for key, err in self.max_rel_error.items():
            mark = "" if err <= self.tol else "  <-- FAIL"
            lines.append(f"  {key}: {err:.3e} over {self.checked_entries[key]} entries{mark}")
        return "\n".join(lines)


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[ParamGroup], Tensor],
    params: ParamGroup,
    step: float = 1e-5,
    tol: float = 1e-4,
    *,
    max_entries: int | None = None,
    floor: float | str = 1e-7,
    seed: int = 0,
    analytic: Mapping[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f(params)`` with central differences.

    ``f`` must be deterministic given the parameter values.  With
    ``max_entries`` only that many entries per tensor (chosen by a seeded
    generator) are perturbed.  ``analytic`` overrides the backward pass, which
    lets a test feed in a corrupted gradient.  Relative errors use
    ``max(|a|, |n|, floor)`` as denominator so exact zeros do not divide by 0.

    ``floor="auto"`` sets the floor to ``eps * |f| / (step * tol)``: the central
    difference carries roundoff of about ``eps * |f| / step``, so entries below
    that floor are held to an absolute error at the roundoff scale instead of
    a relative one they cannot resolve.
    """
    if analytic is None:
        params.zero_grad()
        out = f(params)
        backward(out)
        analytic = {k: params.grad_of(k).copy() for k in params}
        params.zero_grad()
    if floor == "auto":
        with no_grad():
            f0 = abs(f(params).item())
        floor = max(1e-7, np.finfo(np.float64).eps * f0 / (step * tol))
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol, floor=float(floor))
    for key in params:
        t = params[key]
        flat = t.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            picks = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            picks = np.arange(n)
        a_flat = np.asarray(analytic[key]).reshape(-1)
        worst = 0.0
        with no_grad():
            for i in picks:
                orig = flat[i]
                flat[i] = orig + step
                f_plus = f(params).item()
                flat[i] = orig - step
                f_minus = f(params).item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * step)
                err = relative_error(float(a_flat[i]), numeric, floor)
                if not err <= worst:
                    worst = err
        report.max_rel_error[key] = worst
        report.checked_entries[key] = int(picks.size)
    return report
