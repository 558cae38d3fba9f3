import numpy as np
import pytest

from trajgs import autodiff as ad
from trajgs.basis import MotionBasis
from trajgs.gaussians import (DensifyConfig, GaussianSet, State, classify, covariance,
                              densify_and_prune, dynamic_mask, eval_sh, inverse_sigmoid,
                              model_values, snapshot_at)
from trajgs.motion import CoefficientNet


def test_covariance_identity():
    np.testing.assert_allclose(covariance(np.ones((1, 3)), np.array([[1.0, 0, 0, 0]]))[0],
                               np.eye(3))


def test_covariance_scale_diag():
    np.testing.assert_allclose(covariance(np.array([[2.0, 1, 1]]), np.array([[1.0, 0, 0, 0]]))[0],
                               np.diag([4.0, 1, 1]))


def test_covariance_eigenvalues(rng):
    q = rng.normal(size=(20, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    s = rng.uniform(0.1, 2.0, size=(20, 3))
    cov = covariance(s, q)
    for c, si in zip(cov, s):
        np.testing.assert_allclose(np.linalg.eigvalsh(c), np.sort(si ** 2), atol=1e-10)


def test_covariance_rejects_unnormalized():
    with pytest.raises(ValueError):
        covariance(np.ones((1, 3)), np.array([[2.0, 0, 0, 0]]))


@pytest.mark.parametrize("p,state", [(0.1, State.STATIC), (0.2, State.STATIC),
                                     (0.5, State.DYNAMIC), (1.0, State.DYNAMIC),
                                     (0.0, State.STATIC)])
def test_classify(p, state):
    assert classify(p) is state
    assert dynamic_mask(np.array([p]))[0] == (state is State.DYNAMIC)


def _scene(rng, n=6, p=0.9):
    gs = GaussianSet.from_points(rng.uniform(-1, 1, size=(n, 3)), rng.uniform(size=(n, 3)),
                                 p=p, scene_extent=1.0)
    return gs


def _moving(rng, n_frames=5):
    net = CoefficientNet.initialized(rng, k=4, l=2, m=2, n_freqs=3, hidden=8, depth=1)
    net.params = net.params + rng.normal(scale=0.2, size=net.params.shape)
    return net, MotionBasis.dct(n_frames, 4, 2, 2)


def test_all_static_snapshot_constant(rng):
    gs = _scene(rng, p=0.05)
    net, basis = _moving(rng)
    ref = snapshot_at(gs, net, basis, 0)
    for t in (1, 2.5, 4):
        s = snapshot_at(gs, net, basis, t)
        np.testing.assert_array_equal(s.mean, ref.mean)
        np.testing.assert_array_equal(s.cov, ref.cov)


def test_zero_net_is_identity(rng):
    gs = _scene(rng)
    net = CoefficientNet.initialized(rng, k=4, l=2, m=2, n_freqs=3, hidden=8, depth=1)
    basis = MotionBasis.dct(5, 4, 2, 2)
    for t in range(5):
        s = snapshot_at(gs, net, basis, t)
        np.testing.assert_array_equal(s.mean, gs.x_star)
        np.testing.assert_array_equal(s.log_scale, gs.log_scale)


def test_single_dynamic_hand_evaluated(rng):
    gs = _scene(rng, n=3, p=0.05)
    gs.dyn_logit[1] = inverse_sigmoid(0.99)
    net, basis = _moving(rng)
    sigma = net.coefficients(gs.x_star[1:2])[0][0]
    for t in range(5):
        s = snapshot_at(gs, net, basis, t)
        np.testing.assert_allclose(s.mean[1], gs.x_star[1] + basis.theta[t] @ sigma, atol=1e-14)
        np.testing.assert_array_equal(s.mean[[0, 2]], gs.x_star[[0, 2]])


def test_snapshot_time_range(rng):
    gs = _scene(rng)
    net, basis = _moving(rng)
    with pytest.raises(ValueError):
        snapshot_at(gs, net, basis, 4.5)


def test_snapshot_on_tape_reaches_all_groups(rng):
    gs = _scene(rng)
    net, basis = _moving(rng)
    tape = ad.Tape()
    v = {k: tape.param(k, a) for k, a in model_values(gs, net, basis).items()}
    s = snapshot_at(gs, net, basis, 2, v)
    g = tape.backward(ad.sum(s.mean) + ad.sum(s.cov) + ad.sum(s.opacity) + ad.sum(s.p))
    for name in ("xyz", "log_scale", "rotation", "opacity", "dyn", "net", "theta", "lam", "eta"):
        assert np.abs(g[name]).sum() > 0, name


def test_sh_degree0_and_view_dependence(rng):
    f = rng.normal(size=(4, 9, 3))
    d = rng.normal(size=(4, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    np.testing.assert_allclose(eval_sh(f[:, :1], d, 0), 0.28209479177387814 * f[:, 0])
    assert not np.allclose(eval_sh(f, d, 2), eval_sh(f, -d, 2))


def _stats(gs, grad):
    gs.grad_accum = np.asarray(grad, dtype=float).copy()
    gs.grad_count = np.ones(len(gs))


def test_densify_noop_when_quiet(rng):
    gs = _scene(rng)
    _stats(gs, np.full(len(gs), 1e-5))
    res = densify_and_prune(gs, DensifyConfig(), rng)
    np.testing.assert_array_equal(res.gaussians.x_star, gs.x_star)
    assert not res.gaussians.grad_accum.any() and not res.fresh.any()


def test_thresholds_by_class(rng):
    gs = _scene(rng, n=2)
    gs.dyn_logit = np.array([inverse_sigmoid(0.05), inverse_sigmoid(0.95)])
    gs.log_scale[:] = np.log(0.001)  # small -> clone
    _stats(gs, [5e-4, 5e-4])
    res = densify_and_prune(gs, DensifyConfig(), rng)
    assert res.n_cloned == 1 and len(res.gaussians) == 3
    assert list(res.source) == [0, 1, 0]


def test_split_bookkeeping(rng):
    gs = _scene(rng, n=3)
    gs.log_scale[:] = np.log(0.2)  # above 1% of extent -> split
    _stats(gs, [1e-2, 0, 0])
    res = densify_and_prune(gs, DensifyConfig(), rng)
    assert res.n_split == 1 and len(res.gaussians) == 4
    children = res.gaussians.log_scale[res.fresh]
    np.testing.assert_allclose(children, np.log(0.2 / 1.6))


def test_prune_and_refuse_empty(rng):
    gs = _scene(rng, n=3)
    gs.opacity_logit[1] = inverse_sigmoid(0.001)
    res = densify_and_prune(gs, DensifyConfig(), rng)
    assert res.n_pruned == 1 and len(res.gaussians) == 2
    gs.opacity_logit[:] = inverse_sigmoid(0.001)
    with pytest.raises(ValueError):
        densify_and_prune(gs, DensifyConfig(), rng)


def test_max_gaussians_cap(rng):
    gs = _scene(rng, n=10)
    gs.log_scale[:] = np.log(0.001)
    _stats(gs, np.linspace(1e-3, 2e-3, 10))
    res = densify_and_prune(gs, DensifyConfig(max_gaussians=13), rng)
    assert len(res.gaussians) == 13
    assert set(res.source[res.fresh]) == {7, 8, 9}
