"""Geometric narrowband mmWave channels for the BS-RIS link ``G`` and the
RIS-user links ``H``, plus their beamspace (angular-domain) representations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import DftOperators, DimensionError, kron


class ConfigError(ValueError):
    """Invalid simulation parameter."""


@dataclass(frozen=True)
class SystemDims:
    """Integer dimensions of the uplink.

    ``m`` BS antennas, ``k`` users, ``n1 x n2`` RIS panel, ``l`` RIS phase
    configurations and ``t`` pilot slots per configuration.
    """

    m: int = 32
    k: int = 32
    n1: int = 4
    n2: int = 8
    l: int = 24
    t: int | None = None

    def __post_init__(self):
        if self.t is None:
            object.__setattr__(self, "t", self.k)
        for name in ("m", "k", "n1", "n2", "l", "t"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.t < self.k:
            raise ConfigError(f"t={self.t} must be >= k={self.k}")

    @property
    def n(self) -> int:
        return self.n1 * self.n2

    @property
    def j(self) -> int:
        return self.k * self.m

    def operators(self, fast: bool = True) -> DftOperators:
        return DftOperators(self.m, self.n1, self.n2, fast=fast)


@dataclass
class PathG:
    """One BS-RIS path.  The spatial frequencies are authoritative; in
    on-grid mode they are snapped and no longer equal the trig functions of
    the stored angles."""

    gain: complex
    aoa_azimuth: float
    aod_azimuth: float
    aod_elevation: float
    freq_bs: float = field(default=np.nan)
    freq_x: float = field(default=np.nan)
    freq_y: float = field(default=np.nan)

    def __post_init__(self):
        if np.isnan(self.freq_bs):
            self.freq_bs = float(np.sin(self.aoa_azimuth))
        if np.isnan(self.freq_x):
            self.freq_x, self.freq_y = ris_frequencies(self.aod_azimuth, self.aod_elevation)


@dataclass
class PathH:
    """One RIS-user path (frequencies as in :class:`PathG`)."""

    gain: complex
    aod_azimuth: float
    aod_elevation: float
    freq_x: float = field(default=np.nan)
    freq_y: float = field(default=np.nan)

    def __post_init__(self):
        if np.isnan(self.freq_x):
            self.freq_x, self.freq_y = ris_frequencies(self.aod_azimuth, self.aod_elevation)


@dataclass
class ChannelRealization:
    dims: SystemDims
    G: np.ndarray
    H: np.ndarray
    Omega: np.ndarray
    Sigma: np.ndarray
    paths_g: list
    paths_h: list
    rho: float = 1.0
    xi: np.ndarray | None = None
    on_grid: bool = False

    def to_json(self) -> str:
        """Serialize as a flat plain-text record (complex entries as re,im pairs)."""
        def cmat(A):
            return [[float(v.real), float(v.imag)] for v in np.asarray(A).ravel()]

        def path(p):
            d = dict(p.__dict__)
            d["gain"] = [float(np.real(p.gain)), float(np.imag(p.gain))]
            return {k: (float(v) if not isinstance(v, list) else v) for k, v in d.items()}

        rec = {
            "dims": {k: int(v) for k, v in self.dims.__dict__.items()},
            "on_grid": bool(self.on_grid),
            "rho": float(self.rho),
            "xi": [float(x) for x in np.atleast_1d(self.xi if self.xi is not None else np.ones(self.dims.k))],
            "paths_g": [path(p) for p in self.paths_g],
            "paths_h": [[path(p) for p in user] for user in self.paths_h],
            "G": cmat(self.G),
            "H": cmat(self.H),
        }
        return json.dumps(rec)

    @classmethod
    def from_json(cls, text: str) -> "ChannelRealization":
        rec = json.loads(text)
        dims = SystemDims(**rec["dims"])

        def cmat(pairs, shape):
            a = np.asarray(pairs, dtype=float)
            return (a[:, 0] + 1j * a[:, 1]).reshape(shape)

        def mkpath(cls_, d):
            d = dict(d)
            d["gain"] = complex(*d["gain"])
            return cls_(**d)

        G = cmat(rec["G"], (dims.m, dims.n))
        H = cmat(rec["H"], (dims.n, dims.k))
        Omega, Sigma = beamspace_decompose(G, H, dims.operators())
        return cls(
            dims=dims, G=G, H=H, Omega=Omega, Sigma=Sigma,
            paths_g=[mkpath(PathG, p) for p in rec["paths_g"]],
            paths_h=[[mkpath(PathH, p) for p in u] for u in rec["paths_h"]],
            rho=rec["rho"], xi=np.asarray(rec["xi"]), on_grid=rec["on_grid"],
        )


def ris_frequencies(aod_azimuth: float, aod_elevation: float) -> tuple[float, float]:
    """Spatial frequencies of the RIS panel axes for a departure direction."""
    return float(np.cos(aod_elevation)), float(np.sin(aod_elevation) * np.cos(aod_azimuth))


def steering_ula(m: int, x: float) -> np.ndarray:
    """Half-wavelength ULA response ``exp(-1j*pi*i*x)/sqrt(m)``, ``i = 0..m-1``."""
    return np.exp(-1j * np.pi * np.arange(m) * x) / np.sqrt(m)


def steering_upa(n1: int, n2: int, aod_azimuth: float, aod_elevation: float) -> np.ndarray:
    fx, fy = ris_frequencies(aod_azimuth, aod_elevation)
    return kron(steering_ula(n1, fx), steering_ula(n2, fy))[:, 0]


def snap_to_grid(x: float, n: int) -> float:
    """Nearest spatial frequency whose ULA response is a column of the n-point DFT.

    The grid is ``2c/n`` for integer ``c``; results are wrapped into [-1, 1).
    """
    snapped = np.round(x * n / 2.0) * 2.0 / n
    return float((snapped + 1.0) % 2.0 - 1.0)


def grid_index(x: float, n: int) -> int:
    """DFT column index of an on-grid spatial frequency."""
    return int(np.round(x * n / 2.0)) % n


def _path_gains(count: int, kappa: float, rng: np.random.Generator) -> np.ndarray:
    """One LOS gain of power kappa/(1+kappa), the rest CN with total power 1/(1+kappa)."""
    gains = np.empty(count, dtype=complex)
    phase = rng.uniform(0.0, 2 * np.pi)
    if np.isinf(kappa):
        gains[0] = np.exp(1j * phase)
        gains[1:] = 0.0
        return gains
    gains[0] = np.sqrt(kappa / (1 + kappa)) * np.exp(1j * phase)
    if count > 1:
        var = 1.0 / (1 + kappa) / (count - 1)
        gains[1:] = np.sqrt(var / 2) * (rng.standard_normal(count - 1) + 1j * rng.standard_normal(count - 1))
    return gains


def sample_paths(dims: SystemDims, p: int, p_prime: int, rician_db: float,
                 on_grid: bool, rng: np.random.Generator):
    """Draw path gains and angles for ``G`` (``p`` paths) and each user (``p_prime``)."""
    if p < 1 or p_prime < 1:
        raise ConfigError(f"path counts must be >= 1, got P={p}, P'={p_prime}")
    kappa = np.inf if np.isinf(rician_db) else 10.0 ** (rician_db / 10.0)
    half = np.pi / 2

    def draw_g():
        used = set()
        out = []
        gains = _path_gains(p, kappa, rng)
        for i in range(p):
            while True:
                psi, theta, gamma = rng.uniform(-half, half, 3)
                path = PathG(gains[i], psi, theta, gamma)
                if not on_grid:
                    break
                path.freq_bs = snap_to_grid(path.freq_bs, dims.m)
                path.freq_x = snap_to_grid(path.freq_x, dims.n1)
                path.freq_y = snap_to_grid(path.freq_y, dims.n2)
                key = (grid_index(path.freq_bs, dims.m), grid_index(path.freq_x, dims.n1),
                       grid_index(path.freq_y, dims.n2))
                if key not in used:
                    used.add(key)
                    break
            out.append(path)
        return out

    def draw_h():
        used = set()
        out = []
        gains = _path_gains(p_prime, kappa, rng)
        for i in range(p_prime):
            while True:
                theta, gamma = rng.uniform(-half, half, 2)
                path = PathH(gains[i], theta, gamma)
                if not on_grid:
                    break
                path.freq_x = snap_to_grid(path.freq_x, dims.n1)
                path.freq_y = snap_to_grid(path.freq_y, dims.n2)
                key = (grid_index(path.freq_x, dims.n1), grid_index(path.freq_y, dims.n2))
                if key not in used:
                    used.add(key)
                    break
            out.append(path)
        return out

    paths_g = draw_g()
    paths_h = [draw_h() for _ in range(dims.k)]
    return paths_g, paths_h


def _ris_response(dims: SystemDims, path) -> np.ndarray:
    return kron(steering_ula(dims.n1, path.freq_x), steering_ula(dims.n2, path.freq_y))[:, 0]


def build_G(dims: SystemDims, paths_g, rho: float = 1.0) -> np.ndarray:
    """``G = sqrt(rho/(M N)) sum_p gain_p a_B a_R^H``."""
    if not paths_g:
        raise ConfigError("G needs at least one path")
    A_b = np.stack([steering_ula(dims.m, p.freq_bs) for p in paths_g], axis=1)
    A_r = np.stack([_ris_response(dims, p) for p in paths_g], axis=1)
    gains = np.array([p.gain for p in paths_g])
    return np.sqrt(rho / (dims.m * dims.n)) * (A_b * gains) @ A_r.conj().T


def build_H(dims: SystemDims, paths_h, xi=None) -> np.ndarray:
    """Column ``k`` is ``sqrt(xi_k/N) sum_p gain_p a_R``."""
    xi = np.ones(dims.k) if xi is None else np.broadcast_to(np.asarray(xi, float), (dims.k,))
    H = np.empty((dims.n, dims.k), dtype=complex)
    for k, user in enumerate(paths_h):
        A_r = np.stack([_ris_response(dims, p) for p in user], axis=1)
        gains = np.array([p.gain for p in user])
        H[:, k] = np.sqrt(xi[k] / dims.n) * (A_r @ gains)
    return H


def beamspace_decompose(G, H, ops: DftOperators):
    """Return ``Omega = F1^H G F2`` and ``Sigma = F2^H H``."""
    G = np.asarray(G)
    H = np.asarray(H)
    if G.shape != (ops.m, ops.n) or H.shape[0] != ops.n:
        raise DimensionError(f"G {G.shape} / H {H.shape} inconsistent with M={ops.m}, N={ops.n}")
    # G F2 = (F2^T G^T)^T and F2 is symmetric
    Omega = ops.apply_f1(ops.apply_f2(G.T).T, adjoint=True)
    Sigma = ops.apply_f2(H, adjoint=True)
    return Omega, Sigma


def generate_channel(dims: SystemDims, rng: np.random.Generator, p: int = 3, p_prime: int = 3,
                     rician_db: float = 13.2, on_grid: bool = False,
                     rho: float = 1.0, xi=None) -> ChannelRealization:
    """Sample paths and assemble a full :class:`ChannelRealization`."""
    paths_g, paths_h = sample_paths(dims, p, p_prime, rician_db, on_grid, rng)
    G = build_G(dims, paths_g, rho)
    H = build_H(dims, paths_h, xi)
    Omega, Sigma = beamspace_decompose(G, H, dims.operators())
    return ChannelRealization(dims, G, H, Omega, Sigma, paths_g, paths_h, rho,
                              np.ones(dims.k) if xi is None else np.asarray(xi, float), on_grid)
