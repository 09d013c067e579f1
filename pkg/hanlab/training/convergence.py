import math
from collections import deque


class PlateauDetector:
    """
    Fires once the mean loss of the latest ``window`` steps improves on the mean of
    the ``window`` steps before it by less than ``tol`` (relative).
    """

    def __init__(self, window: int = 200, tol: float = 1e-3):
        self.window = window
        self.tol = tol
        self._values = deque(maxlen=2 * window)
        self.fired_at = None
        self._step = 0

    def update(self, value: float) -> bool:
        self._step += 1
        self._values.append(float(value))
        if self.fired_at is not None:
            return True
        if len(self._values) < 2 * self.window:
            return False
        values = list(self._values)
        previous = sum(values[: self.window]) / self.window
        latest = sum(values[self.window:]) / self.window
        if not math.isfinite(latest):
            return False
        improvement = (previous - latest) / max(abs(previous), 1e-12)
        if improvement < self.tol:
            self.fired_at = self._step
            return True
        return False
