import numpy as np
import pytest

from porobayes.biot_fem import (BoundarySpec, PhysicalParams, TimeSteppingConfig,
                                element_average, roller_dofs)
from porobayes.errors import NumericalError
from porobayes.gmsfem import (OfflineConfig, assemble_ms_basis, averaged_fields,
                              build_local_bases)
from porobayes.mesh import (GridSpec, build_coarse_mesh, build_fine_mesh,
                            partition_of_unity, surface_nodes)
from porobayes.randfield import (CovarianceSpec, MaterialLaw, build_kle,
                                 material_fields, porosity_from_field, realize_field,
                                 sample_theta)
from porobayes.surrogate import (Dataset, NnSpec, ScalingTransform, SurrogateModel,
                                 TrainConfig, _MaxPool, build_model, fit_transform,
                                 forward, generate_dataset, loss_and_grads, metrics,
                                 ml_forward, porosity_input, predict_observable, train)


def _set_params(model, values):
    for p, v in zip(model.parameters(), values):
        p[...] = v


def test_hand_convolution_stack():
    # 2x2 input, one conv stage with kernel = center + right neighbour and
    # bias 0.5, then a linear 1 -> 1 readout y = 2 x - 1.
    #   conv: [[1+2, 2+0], [3+4, 4+0]] + 0.5 = [[3.5, 2.5], [7.5, 4.5]]
    #   relu: unchanged; pool: 7.5; dense: 2 * 7.5 - 1 = 14.0
    spec = NnSpec(input_shape=(2, 2), conv_channels=(1,), dense_widths=(),
                  n_outputs=1, dropout=0.0)
    model = build_model(spec, seed=0)
    kw = np.zeros((1, 1, 3, 3))
    kw[0, 0, 1, 1] = 1.0
    kw[0, 0, 1, 2] = 1.0
    _set_params(model, [kw, np.array([0.5]), np.array([[2.0]]), np.array([-1.0])])
    X = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    np.testing.assert_allclose(forward(model, X), [[14.0]])


def test_maxpool_routes_ties_to_first_entry():
    pool = _MaxPool(dim=2)
    x = np.array([[[[1.0, 1.0], [0.0, 1.0]]]])  # three-way tie at the max
    y = pool.forward(x, False, None)
    assert y[0, 0, 0, 0] == 1.0
    g = pool.backward(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(g[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def _fd_check(spec, seed, n_probe=4, h=1e-6):
    rng = np.random.default_rng(seed)
    model = build_model(spec, seed=seed)
    X = rng.standard_normal((3,) + spec.input_shape)
    T = rng.standard_normal((3, spec.n_outputs))
    # a fixed dropout-mask stream makes the loss a deterministic function
    loss0, grads = loss_and_grads(model, X, T, rng=np.random.default_rng(99))
    worst = 0.0
    for p, g in zip(model.parameters(), grads):
        flat = p.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_probe, flat.size), replace=False)
        for k in idx:
            keep = flat[k]
            flat[k] = keep + h
            lp, _ = loss_and_grads(model, X, T, rng=np.random.default_rng(99))
            flat[k] = keep - h
            lm, _ = loss_and_grads(model, X, T, rng=np.random.default_rng(99))
            flat[k] = keep
            fd = (lp - lm) / (2.0 * h)
            denom = max(abs(fd), abs(g.reshape(-1)[k]), 1e-8)
            worst = max(worst, abs(fd - g.reshape(-1)[k]) / denom)
    return loss0, worst


def test_gradients_match_finite_differences_2d():
    spec = NnSpec(input_shape=(4, 4), conv_channels=(2,), dense_widths=(3,),
                  n_outputs=2, dropout=0.1)
    _, worst = _fd_check(spec, seed=1)
    assert worst < 1e-4


def test_gradients_match_finite_differences_3d():
    spec = NnSpec(input_shape=(4, 4, 4), conv_channels=(2,), dense_widths=(3,),
                  n_outputs=2, dropout=0.1)
    _, worst = _fd_check(spec, seed=2)
    assert worst < 1e-4


def test_zero_weights_forward_returns_bias():
    spec = NnSpec(input_shape=(4, 4), conv_channels=(2,), dense_widths=(3,),
                  n_outputs=2, dropout=0.2)
    model = build_model(spec, seed=0)
    bias = np.array([0.7, -0.3])
    _set_params(model, [np.zeros_like(p) for p in model.parameters()[:-1]] + [bias])
    Y = forward(model, np.random.default_rng(0).standard_normal((5, 4, 4)))
    np.testing.assert_allclose(Y, np.broadcast_to(bias, (5, 2)))


def test_forward_validation():
    spec = NnSpec(input_shape=(4, 4))
    model = build_model(spec)
    with pytest.raises(ValueError):
        forward(model, np.zeros((1, 4, 6)))
    with pytest.raises(ValueError):
        forward(model, np.zeros((1, 4, 4)), train=True)  # no rng for dropout


def test_spec_validation():
    with pytest.raises(ValueError):
        NnSpec(input_shape=(6, 6))  # not divisible by 2^2 pooling stages
    with pytest.raises(ValueError):
        NnSpec(input_shape=(8,))
    with pytest.raises(ValueError):
        NnSpec(input_shape=(4, 4), conv_channels=(1,), dropout=1.0)
    with pytest.raises(ValueError):
        NnSpec(input_shape=(4, 4), conv_channels=(1,), n_outputs=0)
    spec = NnSpec(input_shape=(8, 12), conv_channels=(4, 6), dense_widths=(10,))
    assert spec.flat_size == 6 * 2 * 3


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(val_split=1.0)


def test_training_reduces_loss_and_is_deterministic():
    spec = NnSpec(input_shape=(4, 4), conv_channels=(2,), dense_widths=(8,),
                  n_outputs=1, dropout=0.05)
    rng = np.random.default_rng(4)
    X = rng.standard_normal((40, 4, 4))
    T = X.mean(axis=(1, 2), keepdims=False)[:, None]
    cfg = TrainConfig(epochs=120, lr=1e-3, batch_size=8, seed=5, val_split=0.2)
    model = build_model(spec, seed=6)
    hist, val = train(model, X, T, cfg)
    assert len(hist) == 120 and len(val) == 120
    assert hist[-1] < 0.2 * hist[0]
    assert val[-1] < val[0]
    assert model.history == hist
    # bitwise repeatability from equal seeds
    model2 = build_model(spec, seed=6)
    hist2, _ = train(model2, X, T, cfg)
    assert hist2 == hist
    for p, q in zip(model.parameters(), model2.parameters()):
        np.testing.assert_array_equal(p, q)


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_non_finite_loss_aborts():
    spec = NnSpec(input_shape=(4, 4), conv_channels=(2,), dense_widths=(3,))
    model = build_model(spec, seed=0)
    X = np.random.default_rng(0).standard_normal((4, 4, 4))
    T = np.full((4, 1), 1e200)  # squared error overflows immediately
    with pytest.raises(NumericalError, match="epoch 0"):
        train(model, X, T, TrainConfig(epochs=3, batch_size=4))


def test_metrics_hand_cases():
    mse, rmse, mae = metrics([1.0, 2.0], [1.0, 1.0])
    assert mse == pytest.approx(1.0)
    assert rmse == pytest.approx(100.0 / np.sqrt(2.0))
    assert mae == pytest.approx(50.0)
    # all-zero predictions score 100 percent on both relative metrics
    mse0, rmse0, mae0 = metrics([0.0, 0.0], [3.0, -4.0])
    assert mse0 == pytest.approx(25.0)
    assert rmse0 == pytest.approx(100.0)
    assert mae0 == pytest.approx(100.0)
    with pytest.raises(ValueError):
        metrics([1.0], [0.0])
    with pytest.raises(ValueError):
        metrics([1.0, 2.0], [1.0])


def test_scaling_round_trip_and_constant_feature():
    A = np.array([[1.0, 5.0, 2.0], [3.0, 5.0, -2.0], [2.0, 5.0, 0.0]])
    tr = fit_transform(A)
    S = tr.scale(A)
    assert S.min() >= 0.0 and S.max() <= 1.0
    np.testing.assert_array_equal(S[:, 1], 0.0)  # constant column
    back = tr.unscale(S)
    np.testing.assert_allclose(back[:, 0], A[:, 0], atol=1e-12)
    np.testing.assert_allclose(back[:, 2], A[:, 2], atol=1e-12)
    np.testing.assert_array_equal(back[:, 1], 5.0)  # recovered from lo
    # a single sample makes every feature constant
    one = fit_transform(A[:1])
    np.testing.assert_array_equal(one.scale(A[:1]), 0.0)
    with pytest.raises(ValueError):
        fit_transform(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        ScalingTransform(lo=np.array([1.0]), hi=np.array([0.0]))


def _pipeline(cells=8, coarse=2, L=6, n_samples=3, seed=13):
    grid = GridSpec(dim=2, fine_cells=cells, coarse_cells=coarse)
    fine = build_fine_mesh(grid)
    crs = build_coarse_mesh(grid)
    pou = partition_of_unity(crs, fine)
    kle = build_kle(CovarianceSpec(sigma2=1.0, corr_len=0.25, L=L), fine)
    law = MaterialLaw()
    params = PhysicalParams()
    bc = BoundarySpec(dim=2)
    ts = TimeSteppingConfig(n_steps=4, t_max=1e-3)
    rng = np.random.default_rng(seed)
    reals = [
        material_fields(porosity_from_field(realize_field(kle, sample_theta(kle, rng)), law), law)
        for _ in range(2)
    ]
    avg = averaged_fields(reals, law.eta)
    offline = OfflineConfig(n_realizations=2, m_plus=1)
    lbs = build_local_bases(fine, crs, reals, avg, offline)
    basis = assemble_ms_basis(fine, crs, pou, lbs, m_plus=1,
                              constrained=roller_dofs(fine, bc))
    return fine, kle, law, params, bc, ts, basis


def test_porosity_input_layout():
    grid = GridSpec(dim=2, fine_cells=[4, 2], coarse_cells=[2, 1])
    fine = build_fine_mesh(grid)
    phi = np.arange(fine.n_nodes, dtype=float)
    out = porosity_input(fine, phi)
    assert out.shape == (2, 4)  # (y, x): x varies fastest in memory
    np.testing.assert_allclose(out.ravel(), element_average(fine, phi))


def test_generate_dataset_invariants():
    fine, kle, law, params, bc, ts, basis = _pipeline()
    sets = generate_dataset(fine, kle, law, params, bc, ts, basis,
                            n_samples=3, seed=21)
    assert len(sets) == 2
    n_surf = surface_nodes(fine, bc.surface).size
    for c, ds in enumerate(sets):
        assert ds.component == c
        assert ds.n_samples == 3
        assert ds.x.shape == (3, 8, 8)
        assert ds.q.shape == (3, n_surf)
        assert ds.x.min() >= 0.0 and ds.x.max() <= 1.0
        assert ds.q.min() >= 0.0 and ds.q.max() <= 1.0
    # inputs and their transform are shared across components
    assert sets[0].x is sets[1].x
    assert sets[0].x_transform is sets[1].x_transform
    # deterministic in the seed
    again = generate_dataset(fine, kle, law, params, bc, ts, basis,
                             n_samples=3, seed=21)
    np.testing.assert_array_equal(sets[0].x, again[0].x)
    np.testing.assert_array_equal(sets[1].q, again[1].q)
    with pytest.raises(ValueError):
        generate_dataset(fine, kle, law, params, bc, ts, basis, n_samples=0)


def test_predict_observable_matches_layout():
    fine, kle, law, params, bc, ts, basis = _pipeline()
    sets = generate_dataset(fine, kle, law, params, bc, ts, basis,
                            n_samples=2, seed=3)
    spec = NnSpec(input_shape=(8, 8), conv_channels=(2,), dense_widths=(4,),
                  n_outputs=sets[0].q.shape[1], dropout=0.0)
    surs = []
    for ds in sets:
        model = build_model(spec, seed=ds.component)
        surs.append(SurrogateModel(model=model, x_transform=ds.x_transform,
                                   q_transform=ds.q_transform, component=ds.component))
    theta = np.zeros(kle.spec.L)
    pred = predict_observable(surs, theta, fine, kle, law)
    n_surf = sets[0].q.shape[1]
    assert pred.shape == (2 * n_surf,)
    # the factory closure agrees with the direct call
    np.testing.assert_array_equal(ml_forward(surs, fine, kle, law)(theta), pred)
    # per-component blocks come from the matching model
    X = porosity_input(fine, porosity_from_field(realize_field(kle, theta), law))
    q0 = forward(surs[0].model, surs[0].x_transform.scale(X)[None])[0]
    np.testing.assert_allclose(pred[:n_surf], surs[0].q_transform.unscale(q0))
    with pytest.raises(ValueError):
        predict_observable(surs[:1], theta, fine, kle, law)
    with pytest.raises(ValueError):
        predict_observable(surs[::-1], theta, fine, kle, law)


def test_dataset_sample_count_mismatch():
    tr = ScalingTransform(lo=np.zeros(2), hi=np.ones(2))
    with pytest.raises(ValueError):
        Dataset(x=np.zeros((3, 2)), q=np.zeros((2, 2)), x_transform=tr, q_transform=tr)
