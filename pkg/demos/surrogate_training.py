"""Train the convolutional surrogate on reduced-order labels, small scale.

A short run of the full surrogate path: sample porosity fields, label their
surface traces with the reduced-order solver, train one network per
displacement component, and compare predictions against the fine solver on
held-out draws.
"""

import time

import numpy as np

from porobayes.biot_fem import (BoundarySpec, PhysicalParams, TimeSteppingConfig,
                                roller_dofs)
from porobayes.gmsfem import (OfflineConfig, assemble_ms_basis, averaged_fields,
                              build_local_bases)
from porobayes.mcmc import fine_forward
from porobayes.mesh import (GridSpec, build_coarse_mesh, build_fine_mesh,
                            partition_of_unity, surface_nodes)
from porobayes.randfield import (CovarianceSpec, MaterialLaw, build_kle,
                                 material_fields, porosity_from_field,
                                 realize_field, sample_theta)
from porobayes.surrogate import (NnSpec, SurrogateModel, TrainConfig, build_model,
                                 generate_dataset, metrics, predict_observable,
                                 train)

grid = GridSpec(dim=2, fine_cells=16, coarse_cells=4)
fine = build_fine_mesh(grid)
coarse = build_coarse_mesh(grid)
pou = partition_of_unity(coarse, fine)
kle = build_kle(CovarianceSpec(sigma2=1.0, corr_len=0.2, L=10), fine)
law = MaterialLaw()
params = PhysicalParams()
bc = BoundarySpec(dim=2)
ts = TimeSteppingConfig(t_max=1.0e-3, n_steps=5)

rng = np.random.default_rng(60)
offline = [material_fields(porosity_from_field(realize_field(kle, sample_theta(kle, rng)), law), law)
           for _ in range(5)]
basis = assemble_ms_basis(fine, coarse, pou,
                          build_local_bases(fine, coarse, offline,
                                            averaged_fields(offline, law.eta),
                                            OfflineConfig(n_realizations=5, m_plus=2),
                                            workers=1),
                          2, constrained=roller_dofs(fine, bc))

t0 = time.time()
datasets = generate_dataset(fine, kle, law, params, bc, ts, basis, 160, seed=61)
print(f"labeled 160 samples with the reduced-order solver in {time.time() - t0:.1f}s")

spec = NnSpec(input_shape=(16, 16), conv_channels=(4, 8), dense_widths=(32,),
              n_outputs=datasets[0].q.shape[1], dropout=0.10)
surrogates = []
for d in datasets:
    t0 = time.time()
    model = build_model(spec, seed=70 + d.component)
    hist, _ = train(model, d.x, d.q,
                    TrainConfig(epochs=300, lr=1.0e-3, batch_size=16,
                                seed=80 + d.component))
    print(f"component {d.component}: loss {hist[0]:.4f} -> {hist[-1]:.5f} "
          f"after {len(hist)} epochs ({time.time() - t0:.1f}s)")
    surrogates.append(SurrogateModel(model=model, x_transform=d.x_transform,
                                     q_transform=d.q_transform,
                                     component=d.component))

surf = surface_nodes(fine, bc.surface)
fwd = fine_forward(fine, kle, law, params, bc, ts, surface_ids=surf)
eval_rng = np.random.default_rng(62)
refs, preds = [], []
for _ in range(20):
    theta = eval_rng.standard_normal(10)
    refs.append(fwd(theta))
    preds.append(predict_observable(surrogates, theta, fine, kle, law))
refs, preds = np.array(refs), np.array(preds)

n = surf.size
print("\nheld-out accuracy against the fine solver (20 draws):")
for c in range(2):
    seg = slice(c * n, (c + 1) * n)
    _, rmse, mae = metrics(preds[:, seg], refs[:, seg])
    print(f"  component {c}: RMSE {rmse:.2f}%  MAE {mae:.2f}%")
