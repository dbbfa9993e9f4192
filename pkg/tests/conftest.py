import random
import warnings
from pathlib import Path

import pytest

from arcflow.instance import ItemType, VbpInstance, make_instance
from arcflow.solve import find_cbc

DATA = Path(__file__).parent / "data"

needs_cbc = pytest.mark.skipif(find_cbc() is None, reason="CBC executable not available")


def random_instance(seed, max_m=6, max_p=2, max_w=20, max_b=4) -> VbpInstance:
    """Small random instance; every weight vector is non-zero and fits the bin."""
    rng = random.Random(seed)
    p = rng.randint(1, max_p)
    m = rng.randint(1, max_m)
    caps = tuple(rng.randint(1, max_w) for _ in range(p))
    items = []
    while len(items) < m:
        w = tuple(rng.randint(0, c) for c in caps)
        if any(w):
            items.append(ItemType(w, rng.randint(1, max_b), str(len(items) + 1)))
    return VbpInstance(caps, tuple(items), name=f"rand{seed}")


def example1() -> VbpInstance:
    return make_instance(7, [5, 3, 2], [3, 1, 2], name="example1")


def compression_instance() -> VbpInstance:
    return make_instance((9, 3), [(4, 1), (3, 1), (2, 1)], [1, 3, 1], name="compression")


@pytest.fixture
def ex1():
    return example1()


@pytest.fixture(autouse=True)
def _quiet_writer_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*free MPS.*")
        yield
