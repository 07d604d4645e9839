"""Finite-difference gradient checking against the tape's analytic gradients."""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from adareg.autodiff.tensor import ParameterRegistry, Tape, Tensor
from adareg.utils.exceptions import ValidationError
from adareg.utils.logger import setup_logger

logger = setup_logger('GradCheck')

Coordinate = Tuple[str, Tuple[int, ...]]


@dataclass
class CoordinateFailure:
    param: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float
    reason: str = 'mismatch'


@dataclass
class GradCheckReport:
    label: str
    max_rel_error: float = 0.0
    max_abs_error: float = 0.0
    checked: int = 0
    excluded: List[Coordinate] = field(default_factory=list)
    failures: List[CoordinateFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> Dict[str, object]:
        return {
            'label': self.label,
            'passed': self.passed,
            'max_rel_error': self.max_rel_error,
            'max_abs_error': self.max_abs_error,
            'checked': self.checked,
            'excluded': len(self.excluded),
            'failures': len(self.failures),
        }


def _evaluate(fn: Callable[[], Tensor], registry: ParameterRegistry) -> Tuple[float, List[Tuple[str, bytes]]]:
    with Tape(registry) as tape:
        value = fn()
    return float(np.asarray(value.data).reshape(())), tape.branches


def _coordinates(shape: Tuple[int, ...], max_coords: Optional[int],
                 rng: np.random.Generator) -> List[Tuple[int, ...]]:
    coords = list(np.ndindex(*shape)) if shape else [()]
    if max_coords is not None and len(coords) > max_coords:
        picked = np.sort(rng.choice(len(coords), size=max_coords, replace=False))
        coords = [coords[i] for i in picked]
    return coords


def grad_check(fn: Callable[[], Tensor], registry: ParameterRegistry,
               params: Optional[Sequence[str]] = None, h: float = 1e-5, tol: float = 1e-6,
               atol: float = 1e-9, max_coords: Optional[int] = None,
               rng: Optional[np.random.Generator] = None, label: str = '') -> GradCheckReport:
    """Compare analytic gradients of ``fn`` with central differences.

    ``fn`` must rebuild the scalar loss from the current parameter values on
    every call. A coordinate whose x+h or x-h probe takes a different branch in
    any non-smooth op than the unperturbed evaluation is reported as excluded.
    A probed coordinate passes when its relative error is <= ``tol`` or its
    absolute error is <= ``atol``.
    """
    if h <= 0:
        raise ValidationError(f"grad_check step h must be > 0, got {h}")
    rng = rng if rng is not None else np.random.default_rng(0)
    report = GradCheckReport(label=label)

    with Tape(registry) as tape:
        loss = fn()
    base_branches = tape.branches
    base_value = float(np.asarray(loss.data).reshape(()))
    if not np.isfinite(base_value):
        report.failures.append(CoordinateFailure('<loss>', (), float('nan'), base_value, float('inf'), 'non-finite'))
        return report
    analytic = tape.backward(loss)

    for name in (params if params is not None else list(registry)):
        tensor = registry[name]
        original = tensor.data
        for index in _coordinates(original.shape, max_coords, rng):
            try:
                probe = original.copy()
                probe[index] += h
                tensor.data = probe
                f_plus, branches_plus = _evaluate(fn, registry)
                probe = original.copy()
                probe[index] -= h
                tensor.data = probe
                f_minus, branches_minus = _evaluate(fn, registry)
            finally:
                tensor.data = original

            a = float(analytic[name][index])
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                report.failures.append(CoordinateFailure(name, index, a, float('nan'), float('inf'), 'non-finite'))
                continue
            if branches_plus != base_branches or branches_minus != base_branches:
                report.excluded.append((name, index))
                continue

            numeric = (f_plus - f_minus) / (2.0 * h)
            abs_error = abs(a - numeric)
            rel_error = abs_error / max(1e-12, abs(a) + abs(numeric))
            report.checked += 1
            report.max_abs_error = max(report.max_abs_error, abs_error)
            if abs_error > atol:
                report.max_rel_error = max(report.max_rel_error, rel_error)
            if rel_error > tol and abs_error > atol:
                report.failures.append(CoordinateFailure(name, index, a, numeric, rel_error))

    if report.excluded:
        logger.debug(f"{label or 'grad_check'}: {len(report.excluded)} coordinates straddle a kink")
    if not report.passed:
        logger.warning(f"{label or 'grad_check'}: {len(report.failures)} coordinates failed "
                       f"(max rel error {report.max_rel_error:.3e})")
    return report
