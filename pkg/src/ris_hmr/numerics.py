"""Complex-matrix kernels: unitary DFTs, fast transforms, Kronecker products
and the unitary factorization of the RIS phase matrix.

Index convention (used everywhere in the package): in ``kron(A, B)`` the pair
``(i_A, i_B)`` maps to row ``i_A * B.shape[0] + i_B``.  A RIS element at panel
position ``(i, i')`` therefore has flat index ``i * N2 + i'``, and the stacked
observation column for user ``k`` and BS antenna ``m`` is ``j = k * M + m``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-10


class DimensionError(ValueError):
    """Raised when matrix shapes are incompatible with an operation."""


def unitary_dft(n: int) -> np.ndarray:
    """Return the ``n x n`` unitary DFT matrix ``exp(-2j*pi*a*b/n)/sqrt(n)``."""
    if n < 1:
        raise DimensionError(f"DFT size must be >= 1, got {n}")
    a = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(a, a) / n) / np.sqrt(n)


def kron(A, B) -> np.ndarray:
    """Kronecker product of two matrices (vectors are treated as columns)."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    return np.kron(A, B)


def khatri_rao(A, B) -> np.ndarray:
    """Column-wise Kronecker product: column ``n`` is ``kron(A[:, n], B[:, n])``."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionError(
            f"khatri_rao needs equal column counts, got {A.shape} and {B.shape}"
        )
    return (A[:, None, :] * B[None, :, :]).reshape(A.shape[0] * B.shape[0], A.shape[1])


def _as_columns(X):
    X = np.asarray(X, dtype=complex)
    return (X[:, None], True) if X.ndim == 1 else (X, False)


def fast_f1_apply(X, adjoint: bool = False) -> np.ndarray:
    """Apply the unitary DFT (or its adjoint) to every column of ``X`` by FFT."""
    X, vec = _as_columns(X)
    out = np.fft.ifft(X, axis=0, norm="ortho") if adjoint else np.fft.fft(X, axis=0, norm="ortho")
    return out[:, 0] if vec else out


def fast_f2_apply(X, n1: int, n2: int, adjoint: bool = False) -> np.ndarray:
    """Apply ``Fx kron Fy`` (or its adjoint) to every column of ``X``.

    Each column is reshaped row-major to ``(n1, n2)`` and transformed with a
    2-D FFT, which is exactly the Kronecker structure.
    """
    X, vec = _as_columns(X)
    if X.shape[0] != n1 * n2:
        raise DimensionError(f"expected {n1 * n2} rows, got {X.shape[0]}")
    cube = X.reshape(n1, n2, X.shape[1])
    fn = np.fft.ifft2 if adjoint else np.fft.fft2
    out = fn(cube, axes=(0, 1), norm="ortho").reshape(n1 * n2, X.shape[1])
    return out[:, 0] if vec else out


@dataclass(frozen=True)
class DftOperators:
    """The DFT bases of the BS array (``F1``) and the RIS panel (``F2``).

    With ``fast=True`` the ``apply_*`` methods use FFTs; otherwise dense
    products with the explicit matrices.  Both give the same numbers.
    """

    m: int
    n1: int
    n2: int
    fast: bool = True
    F1: np.ndarray = field(init=False, repr=False)
    Fx: np.ndarray = field(init=False, repr=False)
    Fy: np.ndarray = field(init=False, repr=False)
    F2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Fx = unitary_dft(self.n1)
        Fy = unitary_dft(self.n2)
        object.__setattr__(self, "F1", unitary_dft(self.m))
        object.__setattr__(self, "Fx", Fx)
        object.__setattr__(self, "Fy", Fy)
        object.__setattr__(self, "F2", kron(Fx, Fy))

    @property
    def n(self) -> int:
        return self.n1 * self.n2

    def apply_f1(self, X, adjoint: bool = False) -> np.ndarray:
        if self.fast:
            return fast_f1_apply(X, adjoint)
        return (self.F1.conj().T if adjoint else self.F1) @ X

    def apply_f2(self, X, adjoint: bool = False) -> np.ndarray:
        if self.fast:
            return fast_f2_apply(X, self.n1, self.n2, adjoint)
        return (self.F2.conj().T if adjoint else self.F2) @ X

    def with_fast(self, fast: bool) -> "DftOperators":
        return DftOperators(self.m, self.n1, self.n2, fast=fast)


@dataclass(frozen=True)
class UnitaryFactorization:
    """``Phi = U @ (Lambda[:, None] * V)``; ``Psi`` stores ``Lambda[:, None] * V``."""

    U: np.ndarray
    Lambda: np.ndarray
    Psi: np.ndarray
    row_orthonormal: bool = False


def factorize_phi(Phi) -> UnitaryFactorization:
    """Unitary left factorization of an ``L x N`` phase matrix with ``L <= N``.

    Row-orthonormal inputs (e.g. partial DFT) are detected numerically and
    returned as ``U = I``, ``Lambda = 1`` without an SVD.
    """
    Phi = np.asarray(Phi, dtype=complex)
    if Phi.ndim != 2:
        raise DimensionError("Phi must be a matrix")
    L, N = Phi.shape
    if L > N:
        raise DimensionError(f"unsupported shape: L={L} > N={N}")
    gram = Phi @ Phi.conj().T
    if np.linalg.norm(gram - np.eye(L)) < ORTHO_TOL:
        return UnitaryFactorization(np.eye(L, dtype=complex), np.ones(L), Phi.copy(), True)
    U, lam, Vh = np.linalg.svd(Phi, full_matrices=False)
    return UnitaryFactorization(U, lam, lam[:, None] * Vh, False)


def remove_scale(est, truth):
    """Best complex scalar ``alpha`` fitting ``alpha * est`` to ``truth`` and the
    resulting normalized squared error.  A zero estimate gives ``(0, 1)``."""
    est = np.asarray(est)
    truth = np.asarray(truth)
    if est.shape != truth.shape:
        raise DimensionError(f"shape mismatch {est.shape} vs {truth.shape}")
    energy = np.vdot(est, est).real
    if energy == 0:
        return 0j, 1.0
    alpha = np.vdot(est, truth) / energy
    nmse = np.linalg.norm(truth - alpha * est) ** 2 / np.linalg.norm(truth) ** 2
    return complex(alpha), float(nmse)


def ris_modulation(n1: int, n2: int, dx: float, dy: float) -> np.ndarray:
    """Unit-modulus panel phase ramp ``exp(1j*pi*(i*dx + i'*dy))``, flat index ``i*n2 + i'``."""
    return np.exp(1j * np.pi * (np.arange(n1)[:, None] * dx + np.arange(n2)[None, :] * dy)).ravel()


@dataclass
class AmbiguityFit:
    nmse_G: float
    nmse_H: float
    dx: float
    dy: float
    alpha_G: complex
    alpha_H: complex


def resolve_ambiguity(G_est, H_est, G, H, n1: int, n2: int,
                      oversample: int = 4, refine: bool = True) -> AmbiguityFit:
    """NMSE of ``(G_est, H_est)`` after removing the inevitable ambiguity.

    ``S[n, k*M + m] = H[n, k] G[m, n]`` is unchanged by ``G D, D^-1 H`` for
    any diagonal ``D``.  Sparsity in both beamspaces pins ``D`` only up to a
    panel phase ramp times a scalar, so this fits a shared ramp ``c``
    (``G_est diag(c)``, ``diag(conj(c)) H_est``) plus one complex scale per
    matrix, minimizing the sum of the two NMSEs.  The ramp is searched on an
    ``oversample``-times DFT grid and then refined continuously.
    """
    G_est, H_est, G, H = (np.asarray(a, dtype=complex) for a in (G_est, H_est, G, H))
    if G_est.shape != G.shape or H_est.shape != H.shape:
        raise DimensionError(f"shape mismatch {G_est.shape}/{G.shape}, {H_est.shape}/{H.shape}")
    eg = np.vdot(G_est, G_est).real * np.vdot(G, G).real
    eh = np.vdot(H_est, H_est).real * np.vdot(H, H).real
    if eg == 0 or eh == 0:
        return AmbiguityFit(1.0, 1.0, 0.0, 0.0, 0j, 0j)
    a = np.sum(G_est.conj() * G, axis=0)        # per RIS element
    b = np.sum(H_est.conj() * H, axis=1)

    def errors(C):
        # C rows are ramps; <G_est diag(c), G> = sum conj(c) a, <diag(conj c) H_est, H> = sum c b
        ig = C.conj() @ a
        ih = C @ b
        return 1.0 - np.abs(ig) ** 2 / eg, 1.0 - np.abs(ih) ** 2 / eh, ig, ih

    dxs = np.arange(oversample * n1) * 2.0 / (oversample * n1)
    dys = np.arange(oversample * n2) * 2.0 / (oversample * n2)
    DX, DY = np.meshgrid(dxs, dys, indexing="ij")
    ii = np.repeat(np.arange(n1), n2)
    jj = np.tile(np.arange(n2), n1)
    C = np.exp(1j * np.pi * (DX.ravel()[:, None] * ii + DY.ravel()[:, None] * jj))
    eG, eH, _, _ = errors(C)
    best = int(np.argmin(eG + eH))
    dx, dy = float(DX.ravel()[best]), float(DY.ravel()[best])

    if refine:
        from scipy.optimize import minimize

        def cost(v):
            c = ris_modulation(n1, n2, v[0], v[1])[None, :]
            g, h, _, _ = errors(c)
            return float(g[0] + h[0])

        res = minimize(cost, [dx, dy], method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": 400})
        if res.fun <= cost([dx, dy]):
            dx, dy = float(res.x[0]), float(res.x[1])
    c = ris_modulation(n1, n2, dx, dy)[None, :]
    g, h, ig, ih = errors(c)
    alpha_G = complex(ig[0] / np.vdot(G_est, G_est).real)
    alpha_H = complex(ih[0] / np.vdot(H_est, H_est).real)
    return AmbiguityFit(float(max(g[0], 0.0)), float(max(h[0], 0.0)), dx, dy, alpha_G, alpha_H)
