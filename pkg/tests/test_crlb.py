import numpy as np
import pytest

from cohslam import crlb
from cohslam.channel import RfParams
from cohslam.crlb import BoundState, ChannelParams, PhaseMode
from cohslam.geometry import GeometryError, PaConfig, rotation_zyx, template_layout
from cohslam.priors import ncv_build

RF = RfParams(3.5e9, 100e6, 5)
GEOM = template_layout(2, 2, RF.wavelength / 2, RF.wavelength / 2)


def mean_vector(p: ChannelParams, rf=RF, geom=GEOM):
    out = 0
    for k in range(p.n_components):
        out = out + p.amplitudes[k] * crlb.response(p.tau[k], p.theta[k], p.phi[k], rf, geom)
    return out


def col_err(fd, an):
    """Largest error of each column relative to that column's largest entry."""
    scale = np.maximum(np.abs(an).max(axis=0), 1e-300)
    return np.max(np.abs(fd - an).max(axis=0) / scale)


def random_channel(rng, kt=2):
    return ChannelParams(rng.uniform(0.4, 2.7, kt), rng.uniform(-2.5, 2.5, kt),
                         rng.uniform(5e-9, 4e-8, kt), rng.uniform(-3, 3, kt),
                         rng.uniform(0.2, 1.5, kt), 0.05)


def random_state(rng, k=2, j=2):
    while True:
        p = rng.uniform([-1, -1, 0.5], [3, 3, 2])
        s = rng.uniform([-8, -8, -3], [10, 10, 3], (k, 3))
        if np.all(np.linalg.norm(s, axis=1) > 2):
            return BoundState(np.r_[p, rng.normal(0, 0.5, 3)], s,
                              rng.uniform(0.5, 1.5, (j, k + 1)), 1e-3)


def random_pa(rng):
    return PaConfig(rng.uniform(-4, 4, 3) + [0, 0, 1], rotation_zyx(*rng.uniform(-0.8, 0.8, 3)), GEOM)


def test_mean_derivatives_vs_fd(rng):
    worst = 0.0
    for _ in range(100):
        p = random_channel(rng)
        an = crlb.mean_derivatives(p, RF, GEOM)
        steps = {"theta": 1e-6, "phi": 1e-6, "tau": 1e-14, "phase": 1e-6, "modulus": 1e-6}
        cols = []
        for name in ("theta", "phi", "tau", "phase", "modulus"):
            for k in range(p.n_components):
                up, dn = (ChannelParams(**{f: getattr(p, f).copy() for f in
                                           ("theta", "phi", "tau", "phase", "modulus")}, eta=p.eta)
                          for _ in range(2))
                getattr(up, name)[k] += steps[name]
                getattr(dn, name)[k] -= steps[name]
                cols.append((mean_vector(up) - mean_vector(dn)) / (2 * steps[name]))
        worst = max(worst, col_err(np.column_stack(cols), an))
    assert worst < 1e-5


def test_response_derivative_pole_raises():
    with pytest.raises(GeometryError):
        crlb.response_derivatives(1e-8, 0.0, 0.3, RF, GEOM)


def test_local_jacobian_vs_fd(rng):
    worst = 0.0
    for _ in range(100):
        st = random_state(rng)
        pa = random_pa(rng)
        kt = st.psfv.shape[0] + 1
        for mode in PhaseMode:
            g = crlb.jacobian(st, pa, 0, 2, RF, mode)

            def loc(x, s):
                c = crlb.local_params(BoundState(x, s, st.moduli, st.eta), pa, 0, RF)
                return np.concatenate([c.theta, c.phi, c.tau, c.phase])

            rows, an = [], []
            for i in range(3):
                for arr in ["x"] + list(range(kt - 1)):
                    x, s = st.x.copy(), st.psfv.copy()
                    h = 1e-6
                    if arr == "x":
                        x[i] += h
                        a = loc(x, s)
                        x[i] -= 2 * h
                        row = i
                    else:
                        s[arr, i] += h
                        a = loc(x, s)
                        s[arr, i] -= 2 * h
                        row = 6 + 3 * arr + i
                    rows.append((a - loc(x, s)) / (2 * h))
                    an.append(g[row, :4 * kt])
            fd, an = np.array(rows), np.array(an)
            # tau columns are tiny in seconds; compare each local parameter on its own scale
            worst = max(worst, col_err(fd, an))
            assert np.all(g[3:6] == 0)
    assert worst < 1e-5


def test_vm_sfv_jacobian_vs_fd(rng):
    from cohslam.geometry import virtual_mt
    for _ in range(20):
        p, s = rng.normal(0, 2, 3), rng.normal(0, 4, 3)
        an = crlb.vm_sfv_jacobian(p, s)
        fd = np.column_stack([(virtual_mt(p, s + h) - virtual_mt(p, s - h)) / 2e-6
                              for h in np.eye(3) * 1e-6])
        assert np.max(np.abs(fd - an)) < 1e-6 * max(1, np.abs(an).max())


def test_empirical_score_fim():
    rng = np.random.default_rng(11)
    p = ChannelParams([1.2, 1.9], [0.4, -1.1], [1.2e-8, 2.9e-8], [0.3, -2.0], [1.0, 0.6], 0.5)
    F = crlb.channel_fim(p, RF, GEOM)
    D = crlb.mean_derivatives(p, RF, GEOM)
    nz = D.shape[0]
    n = 200_000
    w = np.sqrt(p.eta / 2) * (rng.standard_normal((n, nz)) + 1j * rng.standard_normal((n, nz)))
    score = np.empty((n, p.dim))
    score[:, :-1] = 2 / p.eta * np.real(w @ D.conj())
    score[:, -1] = -nz / p.eta + np.sum(np.abs(w) ** 2, axis=1) / p.eta ** 2
    emp = score.T @ score / n
    assert np.linalg.norm(emp - F) / np.linalg.norm(F) < 0.02


def test_fim_symmetric_psd_and_noise_entry(rng):
    p = random_channel(rng, 3)
    F = crlb.channel_fim(p, RF, GEOM)
    assert np.allclose(F, F.T)
    assert np.linalg.eigvalsh(F).min() > -1e-9 * np.abs(F).max()
    assert np.isclose(F[-1, -1], RF.nf * 4 / p.eta ** 2)
    assert np.allclose(F[-1, :-1], 0)


def test_fim_input_checks(rng):
    p = random_channel(rng)
    with pytest.raises(ValueError):
        crlb.channel_fim(ChannelParams(p.theta, p.phi, p.tau, p.phase, p.modulus, 0.0), RF, GEOM)
    with pytest.raises(ValueError):
        ChannelParams([1.0], [0.1, 0.2], [1e-8], [0.0], [1.0], 1.0)


def test_scalar_riccati():
    f, q, g = np.array([[1.0]]), np.array([[0.5]]), np.array([[2.0]])
    out = crlb.pcrlb_recursion([g] * 3, f, q, np.array([[1.0]]), 0)
    info = [m[0, 0] for m in out.info]
    assert np.allclose(info, [8 / 3, 22 / 7, 29 / 9], rtol=1e-12)
    assert np.allclose(out.peb, 1 / np.sqrt(info))


def test_zero_information_keeps_bound_constant():
    d = 7
    j0 = np.diag(np.arange(1.0, d + 1))
    out = crlb.pcrlb_recursion([np.zeros((d, d))] * 5, np.eye(d), np.zeros((d, d)), j0, 0)
    assert np.allclose(out.peb, out.peb[0], rtol=1e-12)
    assert np.isclose(out.peb[0], np.sqrt(1 + 1 / 2 + 1 / 3))


def test_pseudo_variance_wipes_nuisances():
    ncv = ncv_build(0.1, 0.5)
    for mode in PhaseMode:
        f, q = crlb.transition_matrices(ncv.F, ncv.Q, 2, 3, mode, 0.004, 1e6)
        j = 1e8 * np.eye(f.shape[0])
        cov, _ = crlb.safe_inverse(j)
        pred, _ = crlb.safe_inverse(f @ cov @ f.T + q)
        nuis = np.arange(12, f.shape[0])
        assert np.allclose(np.diag(pred)[nuis], 1e-6, rtol=1e-9)


def test_safe_inverse(rng):
    a = rng.standard_normal((5, 5))
    m = a @ a.T + np.eye(5)
    inv, n = crlb.safe_inverse(m)
    assert n == 0 and np.allclose(inv @ m, np.eye(5), atol=1e-10)
    inv, n = crlb.safe_inverse(np.diag([1.0, 0.0]))
    assert n == 1 and np.isfinite(inv).all()


def _geometry(rng, j=3):
    pas = []
    for _ in range(j):
        pos = rng.uniform([-4, -4, 0], [5, 6, 2.5])
        yaw = np.arctan2(1.5 - pos[1], 1 - pos[0])
        pas.append(PaConfig(pos, rotation_zyx(yaw), GEOM))
    return pas


def test_coherent_not_worse_on_random_geometries(rng):
    ncv = ncv_build(0.1, 0.5)
    for _ in range(50):
        pas = _geometry(rng)
        st = random_state(rng, 2, 3)
        st = BoundState(st.x, st.psfv, np.full((3, 3), 1e-2), 1e-6)
        res = {}
        for mode in PhaseMode:
            f, q = crlb.transition_matrices(ncv.F, ncv.Q, 2, 3, mode, 0.004)
            snaps = crlb.mc_expectation([[st] * 5], pas, RF, mode)
            j0 = crlb.prior_information(1.0, 0.25, 1.0, 2, 3, mode)
            res[mode] = crlb.pcrlb_recursion(snaps, f, q, j0, 2)
        c, nc = res[PhaseMode.COHERENT], res[PhaseMode.NONCOHERENT]
        assert np.all(c.peb <= nc.peb * (1 + 1e-9))
        assert np.all(c.meb <= nc.meb * (1 + 1e-9))


def test_adding_a_pa_adds_information(rng):
    for _ in range(10):
        pas = _geometry(rng, 3)
        st = random_state(rng, 2, 3)
        st = BoundState(st.x, st.psfv, np.full((3, 3), 1e-2), 1e-6)
        for mode in PhaseMode:
            full = crlb.snapshot_fim(st, pas, RF, mode)
            # same global layout, third PA switched off
            off = BoundState(st.x, st.psfv, st.moduli, st.eta, np.array([[1] * 3, [1] * 3, [0] * 3], bool))
            part = crlb.snapshot_fim(off, pas, RF, mode)
            diff = full - part
            assert np.linalg.eigvalsh(diff).min() > -1e-9 * np.abs(full).max()


def test_velocity_block_of_snapshot_is_zero(rng):
    pas = _geometry(rng)
    st = random_state(rng, 2, 3)
    for mode in PhaseMode:
        fim = crlb.snapshot_fim(st, pas, RF, mode)
        assert np.all(fim[3:6] == 0) and np.all(fim[:, 3:6] == 0)


def test_global_dimensions():
    assert crlb.global_dim(4, 4, "coherent") == 6 + 12 + 5 + 20 + 1
    assert crlb.global_dim(4, 4, "noncoherent") == 6 + 12 + 20 + 20 + 1
