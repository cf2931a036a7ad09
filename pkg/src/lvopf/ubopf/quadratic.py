"""Exact derivatives of bilinear complex power expressions.

Every power quantity in the OPF has the form ``S_r = (A V)_r * conj((B V)_r)``
with sparse complex selectors ``A`` and ``B``: nodal injections use
``A = I, B = Y``; sending-end line flows use a row selector and the line's
``[Y_ii Y_ij]`` blocks. Derivatives are taken with respect to the stacked
real vector ``[Re V; Im V]``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class ComplexPowerMap:
    def __init__(self, a: sp.spmatrix, b: sp.spmatrix):
        self.a = sp.csr_matrix(a, dtype=complex)
        self.b = sp.csr_matrix(b, dtype=complex)
        if self.a.shape != self.b.shape:
            raise ValueError("selector shapes differ")

    @property
    def n_rows(self) -> int:
        return self.a.shape[0]

    def value(self, v: np.ndarray) -> np.ndarray:
        return (self.a @ v) * np.conj(self.b @ v)

    def jacobian(self, v: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """(dP/dx, dQ/dx), each n_rows x 2N."""
        av, bv = self.a @ v, self.b @ v
        left = sp.diags(np.conj(bv)) @ self.a
        right = sp.diags(av) @ self.b.conj()
        ds_de = left + right
        ds_df = 1j * (left - right)
        ds = sp.hstack([ds_de, ds_df], format="csr")
        return ds.real.tocsr(), ds.imag.tocsr()

    def hessian(self, w_p: np.ndarray, w_q: np.ndarray) -> sp.csr_matrix:
        """Hessian of ``sum(w_p * P + w_q * Q)``; constant in V.

        With ``W = diag(w_p - j w_q)`` the weighted sum is
        ``Re(V^T M conj(V))`` where ``M = A^T W conj(B)``.
        """
        m = (self.a.T @ sp.diags(np.asarray(w_p) - 1j * np.asarray(w_q)) @ self.b.conj()).tocsr()
        mr, mi = m.real, m.imag
        sym = mr + mr.T
        skew = mi - mi.T
        return sp.bmat([[sym, skew], [skew.T, sym]], format="csr")
