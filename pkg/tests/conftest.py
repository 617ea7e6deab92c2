import numpy as np
import pytest

from loopgym import kernels
from loopgym.interp import TensorEnv
from loopgym.text import parse_program

FIG5_TEXT = """\
# kernel: rownorm
# dims: N=6 M=8
# io: x -> y
N
|M
||t[{0}]+=x[{0},{1}]
N
|M
||y[{0},{1}]=x[{0},{1}]/t[{0}]

x f32 [N,M] heap
t f32 [N] heap
y f32 [N,M] heap
"""


@pytest.fixture
def fig5():
    """Two sibling nests: a row-sum into t, then a division reading t."""
    return parse_program(FIG5_TEXT)


@pytest.fixture
def fig5_env_gen(fig5):
    def gen(rng: np.random.Generator) -> TensorEnv:
        n, m = fig5.dims()["N"], fig5.dims()["M"]
        return TensorEnv(dims=fig5.dims(), arrays={"x": rng.uniform(0.5, 1.5, size=(n, m))})

    return gen


@pytest.fixture
def softmax():
    return kernels.load_kernel("softmax").program


@pytest.fixture
def softmax_bundle():
    return kernels.load_kernel("softmax")
