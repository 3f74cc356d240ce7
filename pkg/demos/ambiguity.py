"""Why NMSE needs more than one complex scale per matrix.

``S[n, k*M + m] = H[n, k] G[m, n]`` is unchanged by ``(G D, D^-1 H)`` for any
diagonal ``D``.  Sparsity in the beamspace pins ``D`` only up to a 2-D RIS
phase ramp times a scalar, which shifts the beams of ``Omega`` and ``Sigma``
circularly.  A per-matrix scale fit cannot undo the ramp; the ambiguity
fit can.
"""
import numpy as np

from ris_hmr.channel import SystemDims, generate_channel
from ris_hmr.numerics import remove_scale, resolve_ambiguity, ris_modulation
from ris_hmr.system import structured_s

dims = SystemDims(m=16, k=4, n1=4, n2=8)
chan = generate_channel(dims, np.random.default_rng(0), on_grid=True)
c = 0.7j * ris_modulation(dims.n1, dims.n2, 0.5, -0.25)
G2, H2 = chan.G * c[None, :], chan.H / c[:, None]

print("cascade unchanged:", np.allclose(structured_s(G2, H2), structured_s(chan.G, chan.H)))
print(f"scale-only NMSE   G {remove_scale(G2, chan.G)[1]:.3f}  H {remove_scale(H2, chan.H)[1]:.3f}")
fit = resolve_ambiguity(G2, H2, chan.G, chan.H, dims.n1, dims.n2)
print(f"ambiguity fit     G {fit.nmse_G:.1e}  H {fit.nmse_H:.1e}  ramp ({fit.dx:.3f}, {fit.dy:.3f})")
