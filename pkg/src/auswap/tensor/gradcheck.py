"""Central finite-difference verification of reverse-mode gradients.

The checked function is re-run from scratch for every probe, so it must be
deterministic given its captured state.  Relative error uses
|ad - fd| / max(|ad|, |fd|, floor) with a small floor so near-zero
gradient pairs do not explode the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float = 0.0
    checked_entries: int = 0
    per_param: dict = field(default_factory=dict)
    worst: Optional[tuple] = None  # (param name, flat index, ad, fd)

    def __str__(self):
        lines = [f"max relative error {self.max_rel_err:.3e} over {self.checked_entries} entries"]
        for name, err in sorted(self.per_param.items()):
            lines.append(f"  {name}: {err:.3e}")
        if self.worst is not None:
            name, idx, ad, fd = self.worst
            lines.append(f"  worst: {name}[{idx}] autodiff={ad:.9e} fd={fd:.9e}")
        return "\n".join(lines)


def check_gradients(fn: Callable[[], Tensor],
                    named_params: list[tuple[str, Tensor]],
                    h: float = 1e-5,
                    max_entries_per_param: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None,
                    rel_floor: float = 1e-8,
                    atol: Optional[float] = None) -> GradCheckReport:
    """Compare autodiff gradients of fn() against central differences.

    ``max_entries_per_param`` caps the probed entries per tensor (a seeded
    subsample); None checks every entry.

    ``atol`` is the noise floor of the finite differences themselves:
    (f(x+h) - f(x-h)) loses roughly eps*|f| to cancellation, so gradient
    entries smaller than that divided by 2h cannot be resolved relatively.
    Disagreements below atol count as zero error; by default it is derived
    from |f| at the base point with an 8x safety factor.

    Entries whose error exceeds 1e-7 are re-probed at h/8 and keep the
    smaller error: artifacts of the step size (truncation, a relu kink
    inside the probe interval) collapse under the retry, while a genuine
    gradient bug is h-independent and survives it.
    """
    for _, p in named_params:
        p.zero_grad()
    with Tape() as tape:
        out = fn()
    tape.backward(out)
    auto = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
            for name, p in named_params}
    if atol is None:
        atol = 8.0 * np.finfo(float).eps * max(1.0, abs(out.item())) / (2.0 * h)

    rng = rng or np.random.default_rng(0)
    report = GradCheckReport()
    for name, p in named_params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            idxs = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            idxs = np.arange(n)
        worst_here = 0.0
        ag = auto[name].reshape(-1)
        for i in idxs:
            def probe(step, tol):
                orig = flat[i]
                flat[i] = orig + step
                f_plus = fn().item()
                flat[i] = orig - step
                f_minus = fn().item()
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * step)
                ad = ag[i]
                if abs(ad - fd) <= tol:
                    return 0.0, ad, fd
                return abs(ad - fd) / max(abs(ad), abs(fd), rel_floor), ad, fd

            err, ad, fd = probe(h, atol)
            for shrink in (8.0, 64.0):
                if err <= 1e-7:
                    break
                err_retry, ad, fd = probe(h / shrink, atol * shrink)
                err = min(err, err_retry)
            report.checked_entries += 1
            if err > worst_here:
                worst_here = err
            if err > report.max_rel_err:
                report.max_rel_err = err
                report.worst = (name, int(i), float(ad), float(fd))
        report.per_param[name] = worst_here
    return report
