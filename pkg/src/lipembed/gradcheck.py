"""Central finite-difference gradient checking.

The harness compares an analytic gradient against central differences with a
magnitude-scaled step, reporting the max relative error per parameter rather
than raising, so callers can decide what counts as failure. Elements sitting
on non-differentiable kinks (relu at 0, tied max pooling windows) can be
excluded via per-parameter masks.
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
# relative error denominators are floored so near-zero gradients are judged
# on an absolute scale
REL_FLOOR = 1e-3


@dataclass
class ParamReport:
    name: str
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float
    checked: int
    excluded: int


@dataclass
class GradCheckReport:
    tolerance: float
    params: list = field(default_factory=list)

    @property
    def max_rel_error(self):
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self):
        return all(p.max_rel_error < self.tolerance for p in self.params)

    def failures(self):
        return [p for p in self.params if p.max_rel_error >= self.tolerance]

    def format_table(self):
        lines = [f"{'parameter':32s} {'max rel err':>12s} {'checked':>8s} {'excluded':>8s}"]
        for p in self.params:
            flag = "" if p.max_rel_error < self.tolerance else "  FAIL"
            lines.append(
                f"{p.name:32s} {p.max_rel_error:12.3e} {p.checked:8d} {p.excluded:8d}{flag}"
            )
        return "\n".join(lines)


def numeric_gradient(f, x, step=DEFAULT_STEP):
    """Central finite differences of scalar f at x, elementwise.

    The step is scaled by each element's magnitude: h = step * max(1, |x_i|).
    """
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = step * max(1.0, abs(orig))
        flat[i] = orig + h
        f_plus = f(x)
        flat[i] = orig - h
        f_minus = f(x)
        flat[i] = orig
        g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def grad_check(f, params, analytic_grads, tolerance=DEFAULT_TOL, step=DEFAULT_STEP,
               exclude=None):
    """Check analytic gradients of scalar f(params) by central differences.

    params: dict name -> array (perturbed in place, restored afterwards).
    analytic_grads: dict name -> array of the same shapes.
    exclude: optional dict name -> boolean mask of elements to skip
      (non-differentiable points such as relu kinks).

    Failures are reported, not thrown.
    """
    exclude = exclude or {}
    report = GradCheckReport(tolerance=tolerance)
    for name in sorted(params):
        x = params[name]
        a = np.asarray(analytic_grads[name], dtype=float)
        skip = np.asarray(exclude.get(name, np.zeros(x.shape, dtype=bool)))
        flat = x.reshape(-1)
        a_flat = a.reshape(-1)
        skip_flat = skip.reshape(-1)
        worst = 0.0
        worst_i = 0
        worst_pair = (0.0, 0.0)
        checked = 0
        for i in range(flat.size):
            if skip_flat[i]:
                continue
            orig = flat[i]
            h = step * max(1.0, abs(orig))
            flat[i] = orig + h
            f_plus = f()
            flat[i] = orig - h
            f_minus = f()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(a_flat[i]), abs(numeric), REL_FLOOR)
            rel = abs(a_flat[i] - numeric) / denom
            checked += 1
            if rel > worst:
                worst = rel
                worst_i = i
                worst_pair = (a_flat[i], numeric)
        report.params.append(
            ParamReport(
                name=name,
                max_rel_error=worst,
                worst_index=np.unravel_index(worst_i, x.shape) if x.size else (),
                analytic=worst_pair[0],
                numeric=worst_pair[1],
                checked=checked,
                excluded=int(skip_flat.sum()),
            )
        )
    return report


def relu_kink_mask(preactivation, margin=1e-3):
    """Elements closer than `margin` to the relu kink at 0."""
    return np.abs(preactivation) < margin
