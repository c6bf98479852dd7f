import numpy as np
import pytest

from dropgp.numerics import RngState


@pytest.fixture
def rng():
    return RngState(1234, 0)


def random_params(spec, rng, scale=1.0):
    from dropgp.network import ParamSet, param_shapes
    arrays = [scale * rng.normal(int(np.prod(s))).reshape(s) for s in param_shapes(spec)]
    return ParamSet.from_arrays(spec, arrays)
