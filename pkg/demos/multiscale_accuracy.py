"""Reduced-order accuracy against the fine solver as the basis grows.

Builds harmonic-snapshot spectral bases from 5 offline realizations on a
40x40 fine / 8x8 coarse pair, then solves one unseen realization with each
basis size and reports mass-weighted relative errors at the final time.
"""

import time

import numpy as np

from porobayes.biot_fem import (BoundarySpec, PhysicalParams, TimeSteppingConfig,
                                assemble_fine, roller_dofs, solve_fine)
from porobayes.gmsfem import (OfflineConfig, assemble_ms_basis, averaged_fields,
                              build_local_bases, relative_errors, solve_coarse)
from porobayes.mesh import (GridSpec, build_coarse_mesh, build_fine_mesh,
                            partition_of_unity)
from porobayes.randfield import (CovarianceSpec, MaterialLaw, build_kle,
                                 material_fields, porosity_from_field,
                                 realize_field, sample_theta)

grid = GridSpec(dim=2, fine_cells=40, coarse_cells=8)
fine = build_fine_mesh(grid)
coarse = build_coarse_mesh(grid)
pou = partition_of_unity(coarse, fine)
kle = build_kle(CovarianceSpec(sigma2=1.0, corr_len=0.2, L=20), fine)
law = MaterialLaw()
params = PhysicalParams()
bc = BoundarySpec(dim=2)
ts = TimeSteppingConfig(t_max=1.0e-3, n_steps=5)

rng = np.random.default_rng(21)
offline = [material_fields(porosity_from_field(realize_field(kle, sample_theta(kle, rng)), law), law)
           for _ in range(5)]
avg = averaged_fields(offline, law.eta)

m_values = (0, 2, 4)
t0 = time.time()
locs = build_local_bases(fine, coarse, offline, avg,
                         OfflineConfig(n_realizations=5, m_plus=max(m_values)),
                         workers=1)
print(f"offline stage: {time.time() - t0:.1f}s "
      f"({coarse.n_nodes} neighborhoods, 5 realizations)")

test = material_fields(porosity_from_field(realize_field(kle, sample_theta(kle, rng)), law), law)
system = assemble_fine(fine, test, params, bc)
ref = solve_fine(system, ts)

fixed = roller_dofs(fine, bc)
print(f"\nfine dofs: {system.n_u + system.n_p}")
print(f"{'m_plus':>6} {'coarse dofs':>12} {'e_p %':>8} {'e_u %':>8}")
for m in m_values:
    basis = assemble_ms_basis(fine, coarse, pou, locs, m, constrained=fixed)
    ms = solve_coarse(system, basis, ts)
    e_p, e_u = relative_errors(ref, ms, fine)
    print(f"{m:>6} {basis.R_p.shape[0] + basis.R_u.shape[0]:>12} "
          f"{e_p:>8.3f} {e_u:>8.3f}")
