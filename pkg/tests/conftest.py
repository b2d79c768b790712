import sys
from pathlib import Path

import numpy as np
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))


@st.composite
def face_closed_complexes(draw, max_vertices: int = 8, max_dim: int = 3, max_generators: int = 10):
    """Closures of random generator simplices."""
    n = draw(st.integers(1, max_vertices))
    gens = draw(st.lists(
        st.sets(st.integers(0, n - 1), min_size=1, max_size=min(n, max_dim + 1)),
        min_size=1, max_size=max_generators))
    return [tuple(sorted(g)) for g in gens]


def random_generators(rng: np.random.Generator, n: int, count: int, max_dim: int):
    gens = []
    for _ in range(count):
        size = int(rng.integers(1, min(n, max_dim + 1) + 1))
        gens.append(tuple(sorted(rng.choice(n, size=size, replace=False).tolist())))
    return gens
