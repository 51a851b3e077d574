"""Fixed-step explicit Runge-Kutta solvers for the small ODEs inside a step."""

from dataclasses import dataclass

import numpy as np

METHODS = ("euler", "heun", "rk4")


class NonFiniteError(FloatingPointError):
    """Raised when a subflow produces NaN or infinite values."""


@dataclass(frozen=True)
class OdeConfig:
    method: str = "rk4"
    substeps: int = 1

    def __post_init__(self):
        m = self.method.lower()
        if m not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        object.__setattr__(self, "method", m)
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be a positive integer")

    @property
    def order(self) -> int:
        return {"euler": 1, "heun": 2, "rk4": 4}[self.method]


def _euler(f, t, y, h):
    return y + h * f(t, y)


def _heun(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h, y + h * k1)
    return y + 0.5 * h * (k1 + k2)


def _rk4(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_STEPPERS = {"euler": _euler, "heun": _heun, "rk4": _rk4}


def solve(f, y0, t0: float, t1: float, cfg: OdeConfig = OdeConfig()):
    """
    Integrate ``y' = f(t, y)`` from `t0` to `t1` with `cfg.substeps` equal steps.

    `y0` may be any complex array; `f` must return an array of the same shape.
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    y = np.array(y0, dtype=np.complex128)
    if t1 == t0:
        return y
    step = _STEPPERS[cfg.method]
    h = (t1 - t0) / cfg.substeps
    for k in range(cfg.substeps):
        with np.errstate(over="ignore", invalid="ignore"):
            y = step(f, t0 + k * h, y, h)
        if not np.all(np.isfinite(y)):
            raise NonFiniteError(f"non-finite values after substep {k + 1} of {cfg.substeps}")
    return y
