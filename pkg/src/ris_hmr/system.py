"""Measurement apparatus: RIS phase configurations, orthogonal pilots, noisy
observations, de-piloting into the stacked model ``Y = Phi S + W`` and the
unitary preprocessing ``R = U^H Y = Psi S + W'``.

Stacked column index: ``j = k * M + m`` for user ``k`` and BS antenna ``m``
(zero-based), i.e. ``S[n, k*M + m] = H[n, k] * G[m, n]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, ConfigError
from .numerics import DimensionError, factorize_phi, khatri_rao, unitary_dft

PHI_KINDS = ("partial_dft", "partial_dft_random", "random_phase", "bernoulli")


@dataclass
class MeasurementSet:
    Phi: np.ndarray
    X: np.ndarray
    Ystack: np.ndarray
    R: np.ndarray
    Psi: np.ndarray
    Lambda: np.ndarray
    beta_true: float
    snr_db: float
    phi_kind: str = "partial_dft"
    seed: int | None = None

    def to_json(self) -> str:
        """Plain-text replay record: enough to re-run the estimator on this instance."""
        def cmat(A):
            return [[float(v.real), float(v.imag)] for v in np.asarray(A).ravel()]

        L, J = self.R.shape
        rec = {
            "phi_kind": self.phi_kind,
            "L": int(L),
            "N": int(self.Psi.shape[1]),
            "J": int(J),
            "seed": self.seed,
            "beta": float(self.beta_true),
            "snr_db": float(self.snr_db),
            "Lambda": [float(x) for x in self.Lambda],
            "Psi": cmat(self.Psi),
            "R": cmat(self.R),
        }
        return json.dumps(rec)

    @staticmethod
    def replay_inputs(text: str):
        """Parse a dump back into ``(R, Psi, Lambda, beta)``."""
        rec = json.loads(text)

        def cmat(pairs, shape):
            a = np.asarray(pairs, dtype=float)
            return (a[:, 0] + 1j * a[:, 1]).reshape(shape)

        L, N, J = rec["L"], rec["N"], rec["J"]
        return (cmat(rec["R"], (L, J)), cmat(rec["Psi"], (L, N)),
                np.asarray(rec["Lambda"]), rec["beta"])


def partial_dft_rows(l: int, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Row indices of the partial-DFT phase matrix.

    Without ``rng`` the rows are uniformly spaced, ``floor(i*n/l)``.  With
    ``rng`` a sorted uniformly random subset is drawn.
    """
    if rng is None or l == n:
        return np.floor(np.arange(l) * n / l).astype(int)
    return np.sort(rng.choice(n, size=l, replace=False))


def make_phase_matrix(l: int, n: int, kind: str = "partial_dft",
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """RIS phase matrix with one configuration per row, entries of modulus ``n**-0.5``.

    ``partial_dft`` keeps uniformly spaced rows of the ``n``-point DFT;
    ``partial_dft_random`` keeps a random row subset.  Uniform spacing with
    ``l < n`` can null entire RIS beam rows of a 2-D panel (e.g. ``l=24,
    n=32`` drops every 4th DFT bin, which annihilates one of the four
    x-axis beam rows of a 4 x 8 panel), so sweeps default to the random subset.
    """
    if kind in ("partial_dft", "partial_dft_random"):
        if l > n:
            raise DimensionError(f"partial DFT needs L <= N, got L={l}, N={n}")
        if kind == "partial_dft":
            return unitary_dft(n)[partial_dft_rows(l, n)]
        rng = np.random.default_rng() if rng is None else rng
        return unitary_dft(n)[partial_dft_rows(l, n, rng)]
    rng = np.random.default_rng() if rng is None else rng
    if kind == "random_phase":
        return np.exp(2j * np.pi * rng.random((l, n))) / np.sqrt(n)
    if kind == "bernoulli":
        return (2.0 * rng.integers(0, 2, (l, n)) - 1.0).astype(complex) / np.sqrt(n)
    raise ConfigError(f"unknown phase matrix kind {kind!r}; expected one of {PHI_KINDS}")


def make_pilot(k: int, t: int) -> np.ndarray:
    """First ``k`` rows of the ``t``-point unitary DFT, so ``X X^H = I_k``."""
    if t < k:
        raise ConfigError(f"need T >= K, got T={t}, K={k}")
    return unitary_dft(t)[:k]


def structured_s(G, H) -> np.ndarray:
    """``S = (H^T khatri-rao G)^T``, shape ``N x KM``."""
    return khatri_rao(np.asarray(H).T, np.asarray(G)).T


def simulate_rx(chan: ChannelRealization, Phi, X, beta_true: float,
                rng: np.random.Generator | None = None):
    """Received blocks ``Y_l = G diag(Phi[l]) H X + W_l`` for every configuration.

    ``beta_true = inf`` gives noiseless observations.
    """
    if not beta_true > 0:
        raise ConfigError(f"noise precision must be positive, got {beta_true}")
    Phi = np.asarray(Phi)
    if Phi.shape[1] != chan.G.shape[1]:
        raise DimensionError(f"Phi has {Phi.shape[1]} columns, RIS has {chan.G.shape[1]}")
    clean = np.einsum("mn,ln,nk,kt->lmt", chan.G, Phi, chan.H, X)
    if np.isinf(beta_true):
        return list(clean)
    rng = np.random.default_rng() if rng is None else rng
    std = np.sqrt(0.5 / beta_true)
    noise = std * (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape))
    return list(clean + noise)


def depilot_and_stack(Y_list, X) -> np.ndarray:
    """Row ``l`` is ``vec(Y_l X^H)^T`` (column-major vec), shape ``L x KM``."""
    X = np.asarray(X)
    rows = []
    for Y in Y_list:
        Y = np.asarray(Y)
        if Y.shape[1] != X.shape[1]:
            raise DimensionError(f"Y_l has {Y.shape[1]} slots, pilots have {X.shape[1]}")
        rows.append((Y @ X.conj().T).reshape(-1, order="F"))
    return np.stack(rows, axis=0)


def preprocess(Ystack, Phi):
    """Return ``(R, Psi, Lambda)`` with ``R = U^H Y`` and ``Psi = U^H Phi``."""
    fac = factorize_phi(Phi)
    R = np.asarray(Ystack) if fac.row_orthonormal else fac.U.conj().T @ Ystack
    return R, fac.Psi, fac.Lambda


def snr_to_precision(Phi, S, snr_db: float) -> float:
    """Noise precision giving per-entry SNR ``||Phi S||^2 / (L J) / sigma^2``."""
    power = np.linalg.norm(np.asarray(Phi) @ S) ** 2
    if power == 0:
        raise ConfigError("zero signal power: cannot set SNR")
    L, J = Phi.shape[0], S.shape[1]
    return 10.0 ** (snr_db / 10.0) * L * J / power


def make_measurements(chan: ChannelRealization, snr_db: float, l: int | None = None,
                      phi_kind: str = "partial_dft", rng: np.random.Generator | None = None,
                      noiseless: bool = False, seed: int | None = None) -> MeasurementSet:
    """Full pipeline from a channel realization to the preprocessed model."""
    rng = np.random.default_rng(seed) if rng is None else rng
    dims = chan.dims
    l = dims.l if l is None else l
    Phi = make_phase_matrix(l, dims.n, phi_kind, rng)
    X = make_pilot(dims.k, dims.t)
    S = structured_s(chan.G, chan.H)
    beta = snr_to_precision(Phi, S, snr_db)
    Y_list = simulate_rx(chan, Phi, X, np.inf if noiseless else beta, rng)
    Ystack = depilot_and_stack(Y_list, X)
    R, Psi, lam = preprocess(Ystack, Phi)
    return MeasurementSet(Phi, X, Ystack, R, Psi, lam, np.inf if noiseless else beta,
                          np.inf if noiseless else snr_db, phi_kind, seed)
