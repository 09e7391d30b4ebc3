"""Low-rank Gaussian evaluation kernels.

Covariances have the form ``iso*I + F F^H + sum_k q_k u_k u_k^H``. Inverses are
applied through Woodbury on the Gram matrix ``I + F^H F / iso`` (Cholesky) and
rank-1 spikes are folded in with Sherman-Morrison, so the only matrix-matrix
product is the Gram matrix itself.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.linalg import cho_factor, cho_solve

LOG_PI = np.log(np.pi)

_counter = None


@contextmanager
def count_ops():
    """Collect rough complex multiply-add counts for the kappa kernels."""
    global _counter
    prev, _counter = _counter, {"precompute": 0, "per_particle": 0}
    try:
        yield _counter
    finally:
        _counter = prev


def _tally(key, n):
    if _counter is not None:
        _counter[key] += int(n)


class LowRankGaussian:
    def __init__(self, iso: float, factors=None, spikes=()):
        if not iso > 0:
            raise ValueError("isotropic term must be positive")
        self.iso = float(iso)
        self.factors = None if factors is None else np.asarray(factors, dtype=complex)
        if self.factors is not None and self.factors.ndim != 2:
            raise ValueError("factors must be an Nz x L matrix")
        if self.factors is not None and self.factors.shape[1] == 0:
            self.factors = None
        if self.factors is not None:
            L = self.factors.shape[1]
            gram = np.eye(L) + self.factors.conj().T @ self.factors / self.iso
            self._cho = cho_factor(gram, lower=True)
            nz = self.factors.shape[0]
            _tally("precompute", nz * L * L + L**3)
        self._spikes = []
        for u, q in spikes:
            u = np.asarray(u, dtype=complex)
            cu = self.solve(u)
            denom = 1.0 + q * np.vdot(u, cu).real
            self._spikes.append((u, float(q), cu, denom))

    @property
    def nz(self):
        if self.factors is not None:
            return self.factors.shape[0]
        if self._spikes:
            return self._spikes[0][0].shape[0]
        return None

    def _solve_base(self, b):
        out = b / self.iso
        if self.factors is not None:
            F = self.factors
            t = cho_solve(self._cho, F.conj().T @ b)
            out = out - F @ t / self.iso**2
        return out

    def solve(self, b) -> np.ndarray:
        """``C^{-1} b`` for a vector or an ``Nz x k`` matrix."""
        b = np.asarray(b, dtype=complex)
        out = self._solve_base(b)
        for u, q, cu, denom in self._spikes:
            proj = u.conj() @ out
            out = out - np.multiply.outer(cu, proj) * (q / denom) if out.ndim > 1 \
                else out - cu * (q * proj / denom)
        return out

    def dense(self, nz: int | None = None) -> np.ndarray:
        """Explicit covariance, for tests."""
        n = self.nz if nz is None else nz
        C = self.iso * np.eye(n, dtype=complex)
        if self.factors is not None:
            C = C + self.factors @ self.factors.conj().T
        for u, q, _, _ in self._spikes:
            C = C + q * np.outer(u, u.conj())
        return C


def quad_form(lr: LowRankGaussian, a, b) -> complex:
    return complex(np.vdot(a, lr.solve(b)))


def log_det(lr: LowRankGaussian, nz: int | None = None) -> float:
    n = lr.nz if nz is None else nz
    if n is None:
        raise ValueError("dimension unknown for a purely isotropic covariance")
    out = n * np.log(lr.iso)
    if lr.factors is not None:
        out += 2.0 * np.sum(np.log(np.diag(lr._cho[0]).real))
    for _, _, _, denom in lr._spikes:
        out += np.log(abs(denom))
    return float(out)


def gaussian_logpdf(lr: LowRankGaussian, z, mean) -> float:
    """``log CN(z; mean, C)`` with the covariance in low-rank form."""
    e = np.asarray(z, complex) - np.asarray(mean, complex)
    n = e.shape[0]
    return float(-n * LOG_PI - log_det(lr, n) - quad_form(lr, e, e).real)


def dense_logpdf(C, z, mean) -> float:
    e = np.asarray(z, complex) - np.asarray(mean, complex)
    cf = cho_factor(C, lower=True)
    ld = 2.0 * np.sum(np.log(np.diag(cf[0]).real))
    return float(-e.shape[0] * LOG_PI - ld - np.vdot(e, cho_solve(cf, e)).real)


def eval_message(kind: str, lr: LowRankGaussian, z, mean, spike=None) -> float:
    """Log density of one moment-matched message.

    ``kind`` selects the hypothesis gating: for ``kappa`` and ``omega`` a
    spike ``(u, q)`` is present only on the ``r=1`` / ``b=1`` branch; ``iota``
    and ``nu`` never carry one.
    """
    if kind not in ("iota", "nu", "kappa", "omega"):
        raise ValueError(f"unknown message kind {kind!r}")
    if spike is not None:
        if kind in ("iota", "nu"):
            raise ValueError(f"{kind} messages carry no spike")
        lr = LowRankGaussian(lr.iso, lr.factors, [*((u, q) for u, q, _, _ in lr._spikes), spike])
    return gaussian_logpdf(lr, z, mean)


# Batched kernels used by the filter ---------------------------------------


def kappa_log_ratio(A: LowRankGaussian, psi, q, c, e0) -> np.ndarray:
    """``log kappa(1)/kappa(0)`` for P particles sharing the matrix ``A``.

    Branch r=1 has covariance ``A + q_p psi_p psi_p^H`` and error
    ``e0 - c_p psi_p``; branch r=0 has covariance ``A`` and error ``e0``.
    Constant factors common to both branches cancel.
    """
    psi = np.asarray(psi, complex)
    Ainv_e0 = A.solve(e0)
    Ainv_psi = A.solve(psi.T).T
    _tally("per_particle", psi.size * (1 if A.factors is None else A.factors.shape[1] + 1))
    s_pp = np.einsum("pi,pi->p", psi.conj(), Ainv_psi).real
    s_pe = psi.conj() @ Ainv_e0
    s_ee = np.vdot(e0, Ainv_e0).real
    ee1 = s_ee - 2.0 * np.real(c * s_pe.conj()) + np.abs(c) ** 2 * s_pp
    pe1 = s_pe - c * s_pp
    den = 1.0 + q * s_pp
    return q * np.abs(pe1) ** 2 / den - ee1 + s_ee - np.log(den)


def omega_log_ratio(A: LowRankGaussian, m_omega, mean_shift, e0) -> float:
    """``log omega(1)/omega(0)``: branch b=1 adds spike ``m_omega`` and mean ``mean_shift``."""
    s_mm = np.vdot(m_omega, A.solve(m_omega)).real
    e1 = e0 - mean_shift
    a1 = A.solve(e1)
    s_me = np.vdot(m_omega, a1)
    ee1 = np.vdot(e1, a1).real - abs(s_me) ** 2 / (1.0 + s_mm)
    ee0 = np.vdot(e0, A.solve(e0)).real
    return float(-ee1 + ee0 - np.log1p(s_mm))


def iota_logpdf_batch(M, iso: float, e) -> np.ndarray:
    """Per-particle ``log CN(e; 0, iso*I + M_p M_p^H)`` with ``M`` of shape (P, Nz, S)."""
    M = np.asarray(M, complex)
    e = np.asarray(e, complex)
    P, nz, S = M.shape
    ee = np.einsum("pi,pi->p", e.conj(), e).real
    if S == 0:
        return -nz * LOG_PI - nz * np.log(iso) - ee / iso
    gram = np.eye(S) + np.einsum("pis,pit->pst", M.conj(), M) / iso
    L = np.linalg.cholesky(gram)
    me = np.einsum("pis,pi->ps", M.conj(), e)
    y = np.linalg.solve(L, me[..., None])[..., 0]
    quad = ee / iso - np.sum(np.abs(y) ** 2, axis=1) / iso**2
    ld = nz * np.log(iso) + 2.0 * np.sum(np.log(np.abs(np.diagonal(L, axis1=1, axis2=2))), axis=1)
    return -nz * LOG_PI - ld - quad


def nu_logpdf_batch(F, eta, e) -> np.ndarray:
    """``log CN(e; 0, eta_p*I + F F^H)`` for a vector of isotropic terms.

    The Gram matrix ``F^H F`` is diagonalized once; each particle then costs
    O(S).
    """
    eta = np.asarray(eta, float)
    e = np.asarray(e, complex)
    nz = e.shape[0]
    ee = np.vdot(e, e).real
    if F is None or np.asarray(F).shape[1] == 0:
        return -nz * LOG_PI - nz * np.log(eta) - ee / eta
    F = np.asarray(F, complex)
    lam, V = np.linalg.eigh(F.conj().T @ F)
    lam = np.clip(lam, 0.0, None)
    proj = np.abs(V.conj().T @ (F.conj().T @ e)) ** 2
    quad = (ee - np.sum(proj[None, :] / (eta[:, None] + lam[None, :]), axis=1)) / eta
    ld = nz * np.log(eta) + np.sum(np.log1p(lam[None, :] / eta[:, None]), axis=1)
    return -nz * LOG_PI - ld - quad
