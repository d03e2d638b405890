import numpy as np
import pytest

from facekit.geometry import Box


class ScriptedRng:
    """Stand-in random generator that replays scripted draws.

    ``script`` maps method names to lists of return values, consumed in
    order. Anything not scripted raises, which makes tests fail loudly when
    the draw order changes.
    """

    def __init__(self, script: dict):
        self.script = {k: list(v) for k, v in script.items()}

    def _next(self, name):
        values = self.script.get(name)
        if not values:
            raise AssertionError(f"unexpected rng draw: {name}")
        return values.pop(0)

    def integers(self, low, high=None):
        return self._next("integers")

    def random(self):
        return self._next("random")

    def uniform(self, low, high):
        return self._next("uniform")


def random_boxes(rng: np.random.Generator, count: int, extent: float,
                 min_side: float = 2.0, max_side: float = 80.0) -> list[Box]:
    boxes = []
    for _ in range(count):
        w = rng.uniform(min_side, max_side)
        h = rng.uniform(min_side, max_side)
        x = rng.uniform(0, max(1e-6, extent - w))
        y = rng.uniform(0, max(1e-6, extent - h))
        boxes.append(Box(x, y, x + w, y + h))
    return boxes


@pytest.fixture
def client():
    from fastapi.testclient import TestClient

    from facekit.service import create_app

    with TestClient(create_app()) as c:
        yield c
