import numpy as np
import pytest

from mriprime.autodiff import NonFiniteError, Parameter
from mriprime.optim import RMSprop


def _param(val, name="w", dtype=np.float64):
    return Parameter(np.asarray(val, dtype=dtype), name)


def test_zero_gradient_leaves_params():
    p = _param([1.0, -2.0])
    opt = RMSprop([p])
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_first_step_magnitude():
    p = _param([0.0])
    opt = RMSprop([p], lr=0.01, alpha=0.99, eps=1e-8)
    p.grad = np.array([1.0])
    opt.step()
    assert -p.data[0] == pytest.approx(0.01 / (0.1 + 1e-8), rel=1e-12)
    # 0.01 / 0.10000001 = 0.09999999000000...
    assert -p.data[0] == pytest.approx(0.0999999900, abs=1e-12)


def test_matches_manual_recurrence():
    rng = np.random.default_rng(0)
    p = _param(rng.standard_normal(5))
    ref = p.data.copy()
    v = np.zeros(5)
    opt = RMSprop([p], lr=0.05, alpha=0.9, eps=1e-6)
    for _ in range(10):
        g = rng.standard_normal(5)
        p.grad = g.copy()
        opt.step()
        v = 0.9 * v + 0.1 * g * g
        ref = ref - 0.05 * g / (np.sqrt(v) + 1e-6)
    np.testing.assert_allclose(p.data, ref, rtol=1e-12)


def test_constant_gradient_keeps_v_bounded():
    p = _param(np.zeros(3))
    opt = RMSprop([p])
    g = np.array([0.5, -2.0, 3.0])
    for _ in range(500):
        p.grad = g.copy()
        opt.step()
        v = opt.v["w"]
        assert np.all(v >= 0) and np.all(v <= g * g + 1e-12)


def test_lr_scale_multiplies_step():
    a, b = _param([0.0], "a"), _param([0.0], "b")
    opt = RMSprop([a, b], lr=0.01, lr_scale={"b": 0.5})
    a.grad = np.array([1.0])
    b.grad = np.array([1.0])
    opt.step()
    assert b.data[0] == pytest.approx(0.5 * a.data[0], rel=1e-12)


def test_bit_reproducible():
    def run():
        rng = np.random.default_rng(3)
        p = _param(rng.standard_normal((4, 4)).astype(np.float32), dtype=np.float32)
        opt = RMSprop([p])
        for _ in range(20):
            p.grad = rng.standard_normal((4, 4)).astype(np.float32)
            opt.step()
        return p.data.tobytes()

    assert run() == run()


def test_errors():
    p = _param([1.0])
    with pytest.raises(ValueError):
        RMSprop([p], lr=0)
    with pytest.raises(ValueError):
        RMSprop([p], alpha=1.0)
    with pytest.raises(ValueError):
        RMSprop([p], eps=0)
    with pytest.raises(ValueError):
        RMSprop([p, _param([2.0])])  # duplicate names
    with pytest.raises(RuntimeError):
        RMSprop([p]).step()  # missing gradient


def test_overflowing_second_moment_raises():
    p = _param(np.zeros(1, dtype=np.float32), dtype=np.float32)
    opt = RMSprop([p])
    p.grad = np.array([3e38], dtype=np.float32)
    with pytest.raises(NonFiniteError):
        opt.step()
