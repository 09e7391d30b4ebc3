import warnings

import numpy as np
import pytest
from scipy.special import expit

from cohslam.channel import RfParams, noiseless_signal, steering
from cohslam.engine import (FilterConfig, SlamFilter, belief_cov, birth_proposal, kernel_bandwidth,
                            manage_tracks, regularize, resample_systematic, residual_projector,
                            stream, update_mt, update_pf, update_pr)
from cohslam.priors import Box, PriorParams, ncv_build

from conftest import make_pa


class FixedU:
    """Generator stand-in returning a fixed uniform offset."""

    def __init__(self, u):
        self.u = u

    def uniform(self):
        return self.u


def test_systematic_counts():
    idx = resample_systematic([0.5, 0.3, 0.2], FixedU(0.5), n=10)
    assert np.bincount(idx, minlength=3).tolist() == [5, 3, 2]
    idx = resample_systematic([0.0, 1.0, 0.0], FixedU(0.3), n=4)
    assert idx.tolist() == [1, 1, 1, 1]
    with pytest.raises(ValueError):
        resample_systematic([0.0, 0.0], FixedU(0.1))


def test_systematic_unbiased(rng):
    w = rng.dirichlet(np.ones(6))
    counts = np.zeros(6)
    for _ in range(2000):
        counts += np.bincount(resample_systematic(w, rng, 50), minlength=6)
    assert np.allclose(counts / counts.sum(), w, atol=2e-3)


def test_kernel_bandwidth_value():
    assert np.isclose(kernel_bandwidth(6, 1000), 0.46762422391131064, rtol=1e-14)
    assert kernel_bandwidth(3, 10**9) < kernel_bandwidth(3, 100)


def test_regularize_identity_and_spread(rng):
    x = rng.standard_normal((5, 2))
    assert np.array_equal(regularize(x, rng, h=0.0), x)
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    base = rng.multivariate_normal([0, 0], cov, size=200_000)
    h = 0.4
    out = regularize(base, rng, h=h, cov=np.cov(base.T))
    assert np.allclose(np.cov(out.T), (1 + h**2) * np.cov(base.T), rtol=0.02, atol=0.01)


def test_belief_cov_floor():
    x = np.ones((4, 3))
    c = belief_cov(x, np.full(4, 0.25), floor=[1e-4, 2e-4, 3e-4])
    assert np.allclose(c, np.diag([1e-4, 2e-4, 3e-4]))


def test_residual_projector(rng):
    u = np.exp(1j * rng.uniform(0, 6, 8)) / np.sqrt(8)
    assert np.allclose(residual_projector(u), np.eye(8) - np.outer(u, u.conj()), atol=1e-12)
    psi = rng.standard_normal((10, 3)) + 1j * rng.standard_normal((10, 3))
    pi = residual_projector(psi)
    assert np.linalg.norm(pi @ psi) < 1e-10
    assert np.allclose(pi @ pi, pi, atol=1e-10)
    assert np.allclose(pi, pi.conj().T, atol=1e-12)
    with pytest.warns(RuntimeWarning, match="rank-deficient"):
        residual_projector(np.column_stack([psi[:, 0], psi[:, 0]]))


def _birth_setup(rng):
    rf = RfParams(1e9, 100e6, 3)
    pas = [make_pa(rf, (0, 0, 1), yaw=0.3), make_pa(rf, (4, 5, 1.5), yaw=-2.0)]
    box = Box(np.array([4.0, -2.0, -1.0]), np.array([8.0, 2.0, 1.0]))
    return rf, pas, box


def test_birth_proposal_mass_and_mode(rng):
    rf, pas, box = _birth_setup(rng)
    x_hat = np.array([1.0, 1.0, 1.0])
    true = np.array([6.0, 0.5, 0.0])
    res = np.stack([steering(x_hat, true, pa, rf) for pa in pas])
    bp = birth_proposal(res, x_hat, box, 3000, pas, rf, rng, 400, 0.25)
    assert np.isclose(bp.weights.sum(), 0.25)
    assert np.allclose(bp.mean, bp.candidates[np.argmax(bp.bartlett)])
    assert np.linalg.norm(bp.mean - true) < 1.0
    assert np.all(np.linalg.eigvalsh(bp.cov) > 0)


def test_birth_proposal_zero_residual(rng):
    rf, pas, box = _birth_setup(rng)
    res = np.zeros((2, rf.nf * 4), complex)
    bp = birth_proposal(res, np.zeros(3), box, 500, pas, rf, rng, 50, 0.1)
    assert np.allclose(bp.bartlett, 1.0)
    assert np.allclose(bp.mean, bp.candidates[0])
    assert np.isclose(bp.weights.sum(), 0.1)


def test_update_pr_sigmoid_identity(rng):
    zeta = rng.uniform(1e-6, 1 - 1e-6, 1000)
    lr = rng.normal(0, 10, 1000)
    want = zeta * np.exp(lr) / (zeta * np.exp(lr) + 1 - zeta)
    assert np.max(np.abs(update_pr(zeta, lr) - want)) < 1e-12
    assert np.max(np.abs(update_pr(zeta, lr) - expit(np.log(zeta / (1 - zeta)) + lr))) < 1e-12


def test_revival():
    assert update_pr(np.array([1e-6]), np.log(1e9))[0] > 0.99
    assert update_pr(np.array([1e-6]), 20.7)[0] > 0.99


def test_update_pf_normalization():
    alpha = np.array([0.2, 0.2, 0.2])
    w = update_pf(alpha, np.zeros(3))
    assert np.allclose(w, alpha)
    w = update_pf(alpha, np.log([4.0, 1.0, 1.0]))
    # (0.8 + 0.2 + 0.2) + 0.4 = 1.6
    assert np.allclose(w, [0.8 / 1.6, 0.2 / 1.6, 0.2 / 1.6])
    assert np.isclose(update_pf(np.full(4, 0.25), np.zeros(4)).sum(), 1.0)


def test_update_mt_log_domain():
    w = update_mt(np.full(3, 1 / 3), np.array([[-1000.0, -1001.0, -2000.0]]))
    assert np.isclose(w.sum(), 1.0)
    assert np.isclose(w[0] / w[1], np.e)


def test_stream_determinism():
    a = stream(5, 2, 3).standard_normal(4)
    b = stream(5, 2, 3).standard_normal(4)
    c = stream(5, 3, 2).standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_manage_tracks():
    class T:
        def __init__(self, ex, los=False):
            self.existence, self.is_los, self.declared = ex, los, False
    kept = manage_tracks([T(0.6), T(0.05), T(0.05, los=True), T(0.3)], 0.5, 0.1)
    assert [t.existence for t in kept] == [0.6, 0.05, 0.3]
    assert [t.declared for t in kept] == [True, False, False]


def test_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(variant="xx")
    with pytest.raises(ValueError):
        FilterConfig(t_dec=0.1, t_pru=0.5)


def _los_scene(P=400, mode="fast"):
    rf = RfParams(0.6e9, 100e6, 3)
    pas = [make_pa(rf, p, yaw=y) for p, y in [((-2, 4, 1.5), -0.7), ((3.5, 4.5, 0.5), -2.3),
                                              ((-2, -1, 0.8), 0.7), ((3.5, -1, 2.0), 2.4)]]
    truth = np.array([0.5, 1.0, 1.0])
    pri = PriorParams(Box(truth - 0.05, truth + 0.05), Box(np.array([-7, -4, -2.0]), np.array([9, 9, 2.0])),
                      (1e-7, 1e-5), mu_max=1.0, sigma_mu=0.005)
    cfg = FilterConfig(n_particles=P, n_grid=200, v_init_std=0.01, message_mode=mode)
    flt = SlamFilter(pas, rf, pri, ncv_build(0.1, 0.01), cfg, seed=3)
    z = np.stack([noiseless_signal(truth, [(None, 0.7 + 0.3j, True)], pa, rf) for pa in pas])
    return flt, truth, z


def test_noiseless_los_converges():
    flt, truth, z = _los_scene()
    state = flt.initialize()
    err = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for _ in range(10):
            state, est = flt.step(state, z)
            err.append(np.linalg.norm(est.mt[:3] - truth))
            assert np.isclose(state.wx.sum(), 1.0, atol=1e-9)
            for t in est.tracks:
                assert 0 <= t["existence"] <= 1 and np.all((t["ppr"] >= 0) & (t["ppr"] <= 1))
    assert err[-1] < err[0]


def test_step_is_deterministic():
    outs = []
    for _ in range(2):
        flt, truth, z = _los_scene(P=100)
        state = flt.initialize()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for _ in range(2):
                state, est = flt.step(state, z)
        outs.append((state.x.copy(), est.mt.copy()))
    assert np.array_equal(outs[0][0], outs[1][0]) and np.array_equal(outs[0][1], outs[1][1])


def test_step_rejects_wrong_pa_count():
    flt, truth, z = _los_scene(P=50)
    with pytest.raises(ValueError):
        flt.step(flt.initialize(), z[:2])
