"""The compiled and numpy backends must be interchangeable."""
import numpy as np
import pytest

from dropgp import _kernels, _pykernels
from dropgp.network import NetworkSpec, init_params
from dropgp.numerics import RngState, stream_key_array
from dropgp.uncertainty import McConfig, sample_outputs

needs_ext = pytest.mark.skipif("cython" not in _kernels.available(), reason="extension not built")


@needs_ext
def test_draws_agree():
    from dropgp import _ckernels
    keys = stream_key_array(17, np.arange(300, dtype=np.uint64))
    # uniforms are exact integer transforms
    np.testing.assert_array_equal(_ckernels.uniform_grid(keys, 5, 40), _pykernels.uniform_grid(keys, 5, 40))
    # libm and numpy log/cos may differ in the last ulp
    np.testing.assert_allclose(_ckernels.normal_grid(keys, 0, 33), _pykernels.normal_grid(keys, 0, 33),
                               rtol=1e-15, atol=1e-15)


@needs_ext
@pytest.mark.parametrize("act", [0, 1, 2])
def test_masked_layer_agrees(act):
    from dropgp import _ckernels
    r = RngState(4)
    h = r.normal(7 * 5).reshape(7, 5)
    z = (r.uniform(35) < 0.6).astype(float).reshape(7, 5)
    w, b = r.normal(15).reshape(5, 3), r.normal(3)
    np.testing.assert_allclose(_ckernels.masked_layer(h, z, w, b, act, 0.5),
                               _pykernels.masked_layer(h, z, w, b, act, 0.5), rtol=0, atol=1e-13)


@needs_ext
def test_end_to_end_mc_agrees():
    spec = NetworkSpec((1, 8, 8, 1), "relu", output_bias=True)
    params = init_params(spec, RngState(0, 1))
    cfg = McConfig(50, 3, 0.8, 10.0)
    X = np.linspace(-2, 2, 5)[:, None]
    with _kernels.use_backend("cython"):
        a = sample_outputs(spec, params, cfg, X)
    with _kernels.use_backend("numpy"):
        b = sample_outputs(spec, params, cfg, X)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_use_backend_restores():
    before = _kernels.BACKEND
    with _kernels.use_backend("numpy"):
        assert _kernels.BACKEND == "numpy"
    assert _kernels.BACKEND == before
    with pytest.raises(ValueError):
        with _kernels.use_backend("fortran"):
            pass
