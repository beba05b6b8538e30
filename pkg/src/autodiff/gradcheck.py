"""Central finite-difference verification of tape gradients."""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from loguru import logger

from src.autodiff.params import ParamStore
from src.autodiff.tensor import Tape, Tensor, backward

ABS_FLOOR = 1e-4
KINK_RATIO = 1e-2


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    worst: Optional[Tuple[str, Tuple[int, ...]]] = None
    errors: List[float] = field(default_factory=list, repr=False)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _coordinates(store: ParamStore, sample: Optional[int], seed: int) -> List[Tuple[str, Tuple[int, ...]]]:
    coords = []
    if sample is None:
        for name in store.names():
            coords.extend((name, idx) for idx in np.ndindex(store[name].shape))
        return coords

    rng = np.random.default_rng(seed)
    names = store.names()
    # at least one coordinate per parameter
    for name in names:
        flat = int(rng.integers(store[name].size))
        coords.append((name, np.unravel_index(flat, store[name].shape)))
    sizes = np.array([store[name].size for name in names], dtype=np.float64)
    for _ in range(max(0, sample - len(names))):
        name = names[int(rng.choice(len(names), p=sizes / sizes.sum()))]
        flat = int(rng.integers(store[name].size))
        coords.append((name, np.unravel_index(flat, store[name].shape)))
    return [(name, tuple(int(i) for i in idx)) for name, idx in coords]


def grad_check(
    f: Callable[[ParamStore], Tensor],
    store: ParamStore,
    h: float = 1e-5,
    sample: Optional[int] = None,
    seed: int = 0,
    abs_floor: float = ABS_FLOOR
) -> GradCheckReport:
    """
    Compare tape gradients of ``f`` with central differences.

    ``f`` must be a deterministic scalar function of the store. Coordinates
    sitting on a kink (one-sided slopes disagree) are skipped and counted.

    Args:
        f: Scalar loss as a function of the parameters
        store: Parameters to perturb; restored afterwards
        h: Finite-difference step
        sample: Number of coordinates to check, None for all
        seed: Coordinate sampling seed
        abs_floor: Denominator floor of the relative error

    Returns:
        GradCheckReport with the maximum relative error over checked coordinates
    """
    with Tape() as tape:
        loss = f(store)
    analytic = backward(tape, loss, store)
    base = loss.item()

    report = GradCheckReport(max_rel_error=0.0, checked=0, skipped=0)
    for name, idx in _coordinates(store, sample, seed):
        data = store[name].data
        original = data[idx]
        data[idx] = original + h
        f_plus = f(store).item()
        data[idx] = original - h
        f_minus = f(store).item()
        data[idx] = original

        numeric = (f_plus - f_minus) / (2.0 * h)
        slope_plus = (f_plus - base) / h
        slope_minus = (base - f_minus) / h
        if abs(slope_plus - slope_minus) > KINK_RATIO * max(abs(slope_plus), abs(slope_minus), abs_floor):
            report.skipped += 1
            continue

        a = float(analytic[name][idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), abs_floor)
        report.errors.append(rel)
        report.checked += 1
        if rel > report.max_rel_error:
            report.max_rel_error = rel
            report.worst = (name, idx)

    logger.info(
        f"Gradient check: max relative error {report.max_rel_error:.3e} over {report.checked} "
        f"coordinates ({report.skipped} skipped at kinks)"
    )
    return report
