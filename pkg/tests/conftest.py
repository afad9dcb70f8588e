import pytest

from natgrad import backend


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # pay any jit compile cost before timed assertions run
    backend.warmup()
