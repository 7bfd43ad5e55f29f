"""Fixed-step fourth-order Runge-Kutta stepper shared by every engine."""

from typing import Callable

import numpy as np

Rhs = Callable[[float, np.ndarray], np.ndarray]


def rk4_step(rhs: Rhs, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class CompensatedSum:
    """Neumaier running sum; keeps 1e7 tiny increments accurate."""

    __slots__ = ("total", "compensation", "count")

    def __init__(self, start: float = 0.0):
        self.total = float(start)
        self.compensation = 0.0
        self.count = 0

    def add(self, value: float) -> None:
        t = self.total + value
        if abs(self.total) >= abs(value):
            self.compensation += (self.total - t) + value
        else:
            self.compensation += (value - t) + self.total
        self.total = t
        self.count += 1

    @property
    def value(self) -> float:
        return self.total + self.compensation
