"""Central-difference gradient oracle for the tape in :mod:`depthformer.tensor`."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, grad, no_grad

EPS_ABS = 1e-8


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float = 1e-5
    failures: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_error <= self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status} max_rel_err={self.max_error:.3e} tol={self.tol:.0e}"]
        lines += [f"  {k}: {v:.3e}" for k, v in self.errors.items()]
        lines += [f"  failure: {f}" for f in self.failures]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Normwise: ``max|a − n| / max(max|a|, max|n|, EPS_ABS)`` over one tensor's probed entries.

    Entries whose true gradient is structurally zero (e.g. key biases under
    softmax shift invariance) would make an entrywise ratio pure rounding noise.
    """
    if analytic.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), EPS_ABS)
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_gradients(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-6,
    tol: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of the scalar ``f()`` with central differences.

    ``f`` closes over ``params``; entries are perturbed in place and restored.
    With ``max_entries`` set, at most that many randomly chosen entries are
    probed per tensor.
    """
    out = f()
    if out.size != 1:
        raise ValueError(f"check_gradients needs a scalar function, got shape {out.shape}")
    names = list(params)
    analytic = dict(zip(names, grad(out, [params[n] for n in names])))
    rng = rng if rng is not None else np.random.default_rng(0)
    errors: dict[str, float] = {}
    failures: list[str] = []
    for name in names:
        t = params[name]
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                failures.append(f"{name}[{np.unravel_index(i, t.shape)}] non-finite evaluation")
                numeric[j] = np.nan
                continue
            numeric[j] = (fp - fm) / (2 * h)
        ok = np.isfinite(numeric)
        errors[name] = relative_error(analytic[name].reshape(-1)[idx][ok], numeric[ok])
    return GradCheckReport(errors, tol=tol, failures=failures)


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-6, tol: float = 1e-5) -> GradCheckReport:
    """Single-input form: ``f`` maps ``x`` to a scalar tensor."""
    if h <= 0:
        raise ValueError("finite difference step must be positive")
    if not x.requires_grad:
        x = Tensor(x.data.copy(), requires_grad=True)
    return check_gradients(lambda: f(x), {"x": x}, h=h, tol=tol)
