"""Walk along a displacement interpolation between two point clouds.

Run with ``python3 demos/geodesics.py``. Prints the distance profile along
the path, the Lipschitz constants of the maps between intermediate times,
and what happens when the path is extended past its endpoint.
"""

from __future__ import annotations

import numpy as np

from wstab import geodesic, intermediate_map, prolong_geodesic, w2
from wstab.convexity import certify_regular_perturbation

rng = np.random.default_rng(0)
source = rng.uniform(0.0, 1.0, size=(64, 2))
target = rng.normal(loc=(2.0, 0.5), scale=0.3, size=(64, 2))

g = geodesic(source, target)
print(f"w2(source, target) = {g.length:.6f}")

# distance from the start grows linearly in t
for t in (0.25, 0.5, 0.75, 1.0):
    print(f"  t={t:.2f}  w2(g(0), g(t)) = {w2(g.eval(0.0), g.eval(t)):.6f}  (t * length = {t * g.length:.6f})")

# maps between intermediate times are Lipschitz, with constants set by the times alone
for a, b in ((0.2, 0.6), (0.6, 0.2)):
    _, cert = intermediate_map(g, a, b)
    limit = b / a if a < b else (1 - b) / (1 - a)
    print(f"  Lip(T_{a},{b}) = {cert.bound:.4f} <= {limit:.4f}")

# pull the map back near the start: it stays close to the identity
rep = certify_regular_perturbation(g, [0.1, 0.25, 0.5])
print(f"regular perturbation: verdict={rep.verdict}, max Lipschitz={rep.max_lip:.3f}, L(r)={rep.L_at_r:.2f}")

# extend the path past its endpoint from the midpoint
pr = prolong_geodesic(g, 0.5)
print(f"prolongation from s=0.5: ell={pr.ell:.4f}, factor={pr.factor:.4f}")
overlap = max(
    np.abs(pr.geodesic.positions(pr.extended_parameter(u)) - g.positions(u)).max()
    for u in np.linspace(0.5, 1.0, 6)
)
print(f"  extended path agrees with the original on [0.5, 1] to {overlap:.1e}")
print(f"  extended endpoint is {w2(pr.geodesic.end, g.end):.4f} beyond the old one")
