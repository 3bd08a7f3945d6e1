"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from .store import ParameterStore

DEFAULT_STEP = 1e-5
DEFAULT_THRESHOLD = 1e-4
# Gradients smaller than this are compared on an absolute scale; below it
# the finite-difference roundoff (~1e-10 at desk scale) dominates any relative measure.
MAGNITUDE_FLOOR = 1e-5


@dataclass
class ParamCheck:
    name: str
    size: int
    max_rel_error: float
    max_abs_error: float
    passed: bool


@dataclass
class GradcheckReport:
    checks: list[ParamCheck] = field(default_factory=list)
    threshold: float = DEFAULT_THRESHOLD
    step: float = DEFAULT_STEP

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[ParamCheck]:
        return [c for c in self.checks if not c.passed]

    def to_tsv(self) -> str:
        lines = ["parameter\tsize\tmax_rel_error\tmax_abs_error\tstatus"]
        for c in self.checks:
            lines.append(f"{c.name}\t{c.size}\t{c.max_rel_error:.3e}\t{c.max_abs_error:.3e}\t"
                         f"{'pass' if c.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = MAGNITUDE_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(loss_fn: Callable[[], float], value: np.ndarray, h: float = DEFAULT_STEP) -> np.ndarray:
    """Perturb ``value`` in place element by element; restores it afterwards."""
    grad = np.zeros_like(value)
    flat = value.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = loss_fn()
        flat[i] = orig - h
        minus = loss_fn()
        flat[i] = orig
        g[i] = (plus - minus) / (2.0 * h)
    return grad


def gradcheck(loss_and_grads: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
              store: ParameterStore, names: Optional[Iterable[str]] = None,
              h: float = DEFAULT_STEP, threshold: float = DEFAULT_THRESHOLD,
              corrupt: bool = False) -> GradcheckReport:
    """Compare analytic and numeric gradients for ``names`` (default: trainable ones).

    ``loss_and_grads`` must read parameter values from ``store`` on every call.
    ``corrupt`` skews the analytic gradients and exists as a negative control.
    """
    names = list(store.trainable_names() if names is None else names)
    _, grads = loss_and_grads()
    report = GradcheckReport(threshold=threshold, step=h)

    def loss_only() -> float:
        return float(loss_and_grads()[0])

    for name in names:
        analytic = np.array(grads.get(name, np.zeros_like(store[name])), dtype=np.float64)
        if corrupt:
            analytic = analytic * 1.01 + 1e-3
        numeric = numeric_gradient(loss_only, store.get(name).value, h)
        finite = np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))
        if finite:
            rel = float(np.max(relative_errors(analytic, numeric)))
            abs_err = float(np.max(np.abs(analytic - numeric)))
        else:
            rel = abs_err = float("inf")
        report.checks.append(ParamCheck(name, analytic.size, rel, abs_err, finite and rel <= threshold))
    return report
