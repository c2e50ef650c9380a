import numpy as np
import pytest

from tailchain.chain import ChainStreams
from tailchain.problems import (
    Dataset,
    DatasetError,
    DatasetSource,
    GaussianSource,
    ProductCoeffSampler,
    RidgeCoeffSampler,
    RidgeProblem,
    ScalarAffineSampler,
    TwoLayerReluProblem,
    load_csv_dataset,
    ridge_closed_form,
    sample_linear_coeffs,
    scalar_objective_catalog,
    two_layer_grad,
)

from conftest import toy_ridge_problem


# ---------------------------------------------------------------------------
# ridge closed form


def test_closed_form_exact_interpolation():
    ds = Dataset(np.array([[1.0], [1.0]]), np.array([[2.0], [2.0]]))
    p = RidgeProblem(DatasetSource(ds), lam=0.0, gamma=0.1)
    M = ridge_closed_form(p)
    assert M.shape == (1, 1)
    assert abs(M[0, 0] - 2.0) < 1e-14


def test_closed_form_huge_lambda_shrinks_to_zero():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.standard_normal((20, 3)), rng.standard_normal((20, 2)))
    p = RidgeProblem(DatasetSource(ds), lam=1e9, gamma=0.1)
    assert np.linalg.norm(ridge_closed_form(p)) < 1e-6


def test_closed_form_matches_dense_solver_oracle():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((5, 3))
    Y = rng.standard_normal((5, 2))
    ds = Dataset(X, Y)
    p = RidgeProblem(DatasetSource(ds), lam=0.25, gamma=0.1)
    M = ridge_closed_form(p)
    # independent oracle: normal equations solved columnwise with lstsq
    # machinery on the explicit matrices
    S = X.T @ X / 5 + 0.25 * np.eye(3)
    T = Y.T @ X / 5
    oracle = T @ np.linalg.inv(S)
    assert np.max(np.abs(M - oracle)) < 1e-10


def test_closed_form_singularity_error():
    ds = Dataset(np.zeros((4, 2)), np.ones((4, 1)))
    p = RidgeProblem(DatasetSource(ds), lam=0.0, gamma=0.1)
    with pytest.raises(np.linalg.LinAlgError):
        ridge_closed_form(p)


def test_closed_form_gradient_norm_small():
    # gradient of the full-data objective vanishes at M*
    rng = np.random.default_rng(3)
    ds = Dataset(rng.standard_normal((40, 4)), rng.standard_normal((40, 2)))
    p = RidgeProblem(DatasetSource(ds), lam=0.5, gamma=0.1)
    M = ridge_closed_form(p)
    assert np.linalg.norm(p.full_grad(M.ravel())) < 1e-8


# ---------------------------------------------------------------------------
# linear recurrence coefficients


def test_toy_chain_coefficients():
    # d = m = n = 1, lam = 0, gamma = 1/2: A = 1 - x^2/2, B = x y / 2
    p = toy_ridge_problem()
    s = RidgeCoeffSampler(p)
    rng = np.random.default_rng(5)
    A, B = sample_linear_coeffs(s, rng)
    # replay the same draw
    rng2 = np.random.default_rng(5)
    (x,), (y,) = rng2.standard_normal((1, 2)).T
    assert abs(A - (1 - 0.5 * x * x)) < 1e-15
    assert abs(B - 0.5 * x * y) < 1e-15


def test_zero_step_size_freezes_chain():
    # gamma -> 0 limit checked at tiny gamma by exact construction at
    # gamma so small the formulas are evaluated literally
    ds = Dataset(np.array([[2.0], [3.0]]), np.array([[1.0], [1.0]]))
    p = RidgeProblem(DatasetSource(ds), lam=0.0, gamma=1e-300, batch_size=2)
    A, B = RidgeCoeffSampler(p).sample(np.random.default_rng(0))
    assert abs(A - 1.0) < 1e-12
    assert abs(B) < 1e-12


def test_kronecker_construction_matches_elementwise_oracle():
    # d=2, m=2, n=2 fixed batch: compare against an explicit loop build
    X = np.array([[1.0, 2.0], [0.5, -1.0]])
    Y = np.array([[0.3, -0.2], [1.1, 0.4]])
    lam, gamma, n = 0.1, 0.05, 2
    ds = Dataset(np.tile(X, (2, 1)), np.tile(Y, (2, 1)))
    p = RidgeProblem(DatasetSource(ds), lam=lam, gamma=gamma, batch_size=2)
    sampler = RidgeCoeffSampler(p)
    A, B = sampler._from_batch(X, Y)
    # oracle: elementwise Kronecker construction
    C = (1 - lam * gamma) * np.eye(2) - gamma / n * sum(
        np.outer(X[i], X[i]) for i in range(n))
    A_oracle = np.zeros((4, 4))
    for a in range(2):
        for i in range(2):
            for b in range(2):
                for j in range(2):
                    A_oracle[a * 2 + i, b * 2 + j] = (a == b) * C[i, j]
    B_oracle = gamma / n * sum(np.kron(Y[i], X[i]) for i in range(n))
    assert np.max(np.abs(A - A_oracle)) < 1e-15
    assert np.max(np.abs(B - B_oracle)) < 1e-15


def test_coeff_step_equals_explicit_sgd_step():
    # applying w -> A w + B equals one explicit SGD step on the ridge loss
    rng = np.random.default_rng(11)
    ds = Dataset(rng.standard_normal((30, 3)), rng.standard_normal((30, 2)))
    p = RidgeProblem(DatasetSource(ds), lam=0.2, gamma=0.07, batch_size=4)
    sampler = RidgeCoeffSampler(p)
    idx = np.array([1, 5, 9, 20])
    X, Y = ds.inputs[idx], ds.targets[idx]
    A, B = sampler._from_batch(X, Y)
    w = rng.standard_normal(6)
    explicit = w - p.gamma * p.batch_grad(w, X, Y)
    assert np.max(np.abs((A @ w + B) - explicit)) < 1e-12


def test_sample_block_matches_sample_shapes(toy_sampler):
    streams = ChainStreams(3, 0)
    a, b = toy_sampler.sample_block(0, 16, streams)
    assert a.shape == (16,) and b.shape == (16,)
    A, B = toy_sampler.sample(np.random.default_rng(0), 16)
    assert A.shape == (16,) and B.shape == (16,)


def test_scalar_affine_sampler_families():
    s = ScalarAffineSampler(a_family="uniform", a_offset=0.4, a_scale=0.2,
                            b_family="student_t3_unit", b_scale=1.0)
    rng = np.random.default_rng(0)
    a, b = s.sample(rng, 200_000)
    assert np.all(a >= 0.2 - 1e-12) and np.all(a <= 0.6 + 1e-12)
    # unit-variance t(3) noise
    assert abs(np.var(b) - 1.0) < 0.05
    with pytest.raises(ValueError):
        ScalarAffineSampler(a_family="nope")


def test_product_sampler_composition():
    s = ScalarAffineSampler(a_family="constant", a_scale=0.5,
                            b_family="constant", b_scale=1.0)
    ps = ProductCoeffSampler(s, steps=3)
    A, B = ps.sample(np.random.default_rng(0))
    # w' = 0.5(0.5(0.5 w + 1) + 1) + 1 = 0.125 w + 1.75
    assert abs(A - 0.125) < 1e-15
    assert abs(B - 1.75) < 1e-15
    A2, B2 = ps.sample(np.random.default_rng(0), 4)
    assert np.allclose(A2, 0.125) and np.allclose(B2, 1.75)


def test_product_sampler_matrix_matches_scalar():
    rng = np.random.default_rng(2)
    ds = Dataset(rng.standard_normal((25, 2)), rng.standard_normal((25, 1)))
    p = RidgeProblem(DatasetSource(ds), lam=0.3, gamma=0.1, batch_size=1)
    base = RidgeCoeffSampler(p)
    ps = ProductCoeffSampler(base, steps=4)
    A, B = ps.sample(np.random.default_rng(9))
    # oracle: sequential single samples with the same generator
    rng2 = np.random.default_rng(9)
    w = np.array([0.7, -0.3])
    for _ in range(4):
        a, b = base.sample(rng2)
        w = a @ w + b
    assert np.allclose(A @ np.array([0.7, -0.3]) + B, w, atol=1e-12)


# ---------------------------------------------------------------------------
# scalar objectives


def test_basin_cos_values():
    obj = scalar_objective_catalog("basin_cos")
    assert obj.f(0.0) == 0.0
    assert obj.f_prime(0.0) == 0.0
    # global minimum: a critical point at 0 labelled min
    i = int(np.argmin(np.abs(obj.critical_points)))
    assert abs(obj.critical_points[i]) < 1e-9
    assert obj.critical_labels[i] == "min"


def test_factor13_cos_derivative_at_zero():
    obj = scalar_objective_catalog("factor13_cos")
    assert obj.f_prime(0.0) == 0.0
    assert obj.f(0.0) == 0.0


@pytest.mark.parametrize("name", ["basin_cos", "factor13_cos"])
def test_objective_derivative_finite_differences(name):
    obj = scalar_objective_catalog(name)
    rng = np.random.default_rng(1)
    xs = rng.uniform(-6, 6, 100)
    h = 1e-6
    for x in xs:
        fd = (obj.f(x + h) - obj.f(x - h)) / (2 * h)
        fp = obj.f_prime(x)
        assert abs(fd - fp) <= 1e-6 * max(1.0, abs(fp))


def test_unknown_objective():
    with pytest.raises(ValueError):
        scalar_objective_catalog("mystery")


def test_critical_points_bracket_sign_changes():
    obj = scalar_objective_catalog("basin_cos")
    for x, lab in zip(obj.critical_points, obj.critical_labels):
        assert abs(obj.f_prime(x)) < 1e-8
        h = 1e-4
        if lab == "min":
            assert obj.f_prime(x - h) < 0 < obj.f_prime(x + h)
        else:
            assert obj.f_prime(x - h) > 0 > obj.f_prime(x + h)


# ---------------------------------------------------------------------------
# two-layer ReLU


def _small_net_problem(rng, n_rows=12, d=3, m=2, lam=0.05):
    ds = Dataset(rng.standard_normal((n_rows, d)),
                 rng.standard_normal((n_rows, m)))
    return TwoLayerReluProblem(DatasetSource(ds), hidden_units=4, lam=lam)


def test_two_layer_zero_weights_zero_targets():
    ds = Dataset(np.ones((6, 3)), np.zeros((6, 1)))
    p = TwoLayerReluProblem(DatasetSource(ds), hidden_units=4, lam=0.3)
    g = two_layer_grad(p, np.zeros(p.n_params), range(6))
    assert np.array_equal(g, np.zeros(p.n_params))


def test_two_layer_gradient_finite_differences():
    rng = np.random.default_rng(8)
    p = _small_net_problem(rng)
    h = 1e-6
    for trial in range(20):
        w = rng.standard_normal(p.n_params)
        idx = rng.integers(0, 12, size=4)
        X, Y = p.source.dataset.inputs[idx], p.source.dataset.targets[idx]
        # skip draws too close to a ReLU kink for clean differences
        Z = X @ p.unpack(w)[0].T + p.unpack(w)[1]
        if np.min(np.abs(Z)) < 1e-4:
            continue
        g = p.batch_grad(w, X, Y)
        fd = np.empty_like(g)
        for j in range(p.n_params):
            e = np.zeros_like(w)
            e[j] = h
            fd[j] = (p.batch_loss(w + e, X, Y) - p.batch_loss(w - e, X, Y)) / (2 * h)
        denom = max(1.0, float(np.max(np.abs(g))))
        assert np.max(np.abs(fd - g)) / denom < 1e-5


def test_two_layer_hand_derived_single_unit():
    # 1 hidden unit, 1-d input/output, single instance: chain rule by hand
    ds = Dataset(np.array([[2.0]]), np.array([[1.0]]))
    p = TwoLayerReluProblem(DatasetSource(ds), hidden_units=1, lam=0.0)
    # params [w1, b1, w2, b2]
    w = np.array([0.5, 0.25, 1.5, -0.1])
    # forward: z = 0.5*2 + 0.25 = 1.25, h = 1.25, out = 1.5*1.25 - 0.1 = 1.775
    # residual r = 0.775; grads: dw2 = r*h, db2 = r, dh = r*w2 (z>0),
    # dw1 = dh*x, db1 = dh
    r = 1.775 - 1.0
    oracle = np.array([r * 1.5 * 2.0, r * 1.5, r * 1.25, r])
    g = two_layer_grad(p, w, [0])
    assert np.max(np.abs(g - oracle)) < 1e-12


def test_two_layer_relu_subgradient_zero_at_kink():
    # z = 0 exactly: subgradient treated as 0, so nothing flows back
    ds = Dataset(np.array([[1.0]]), np.array([[3.0]]))
    p = TwoLayerReluProblem(DatasetSource(ds), hidden_units=1, lam=0.0)
    w = np.array([0.0, 0.0, 2.0, 0.0])  # z = 0 -> h = 0 -> out = 0
    g = p.batch_grad(w, ds.inputs, ds.targets)
    # residual -3; only b2 sees a gradient
    assert np.array_equal(g, np.array([0.0, 0.0, 0.0, -3.0]))


# ---------------------------------------------------------------------------
# CSV loading


def test_load_csv_exact(tmp_path):
    f = tmp_path / "small.csv"
    f.write_text("a;b;target\n1.0;2.0;3.0\n4.0;5.0;6.0\n7.5;8.5;9.5\n")
    ds = load_csv_dataset(f, target_columns="target", delimiter=";")
    assert ds.inputs.shape == (3, 2)
    assert np.array_equal(ds.inputs, [[1, 2], [4, 5], [7.5, 8.5]])
    assert np.array_equal(ds.targets, [[3], [6], [9.5]])


def test_load_csv_no_header_index_target(tmp_path):
    f = tmp_path / "plain.csv"
    f.write_text("1,2,3\n4,5,6\n")
    ds = load_csv_dataset(f, target_columns=-1)
    assert ds.inputs.shape == (2, 2)
    assert np.array_equal(ds.targets.ravel(), [3, 6])


def test_load_csv_standardize(tmp_path):
    rng = np.random.default_rng(0)
    rows = rng.normal(5, 3, size=(50, 3))
    f = tmp_path / "std.csv"
    f.write_text("\n".join(",".join(f"{v:.17g}" for v in r) for r in rows))
    ds = load_csv_dataset(f, target_columns=-1, standardize=True)
    assert np.max(np.abs(ds.inputs.mean(axis=0))) < 1e-12
    assert np.max(np.abs(ds.inputs.var(axis=0) - 1)) < 1e-12


def test_load_csv_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DatasetError):
        load_csv_dataset(empty)
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,oops\n")
    with pytest.raises(DatasetError, match="row 2, column 2"):
        load_csv_dataset(bad)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1,2\n3\n")
    with pytest.raises(DatasetError, match="row 2"):
        load_csv_dataset(ragged)


def test_load_csv_intercept_and_smoothing(tmp_path):
    f = tmp_path / "ic.csv"
    f.write_text("1,2\n3,4\n5,6\n")
    ds = load_csv_dataset(f, target_columns=-1, add_intercept=True)
    assert np.array_equal(ds.inputs[:, -1], np.ones(3))
    ds2 = load_csv_dataset(f, target_columns=-1, smoothing_eps=0.5,
                           smoothing_seed=1)
    assert ds2.inputs.shape == (3, 1)
    assert not np.array_equal(ds2.inputs, ds.inputs[:, :1])


# ---------------------------------------------------------------------------
# epoch shuffling


def test_epoch_shuffle_covers_dataset_once_per_epoch():
    ds = Dataset(np.arange(12, dtype=float)[:, None], np.zeros((12, 1)))
    src = DatasetSource(ds, replacement=False, batch_size=3)
    streams = ChainStreams(5, 0)
    seen = []
    for k in range(4):  # one epoch = 4 batches of 3
        idx = src.indices(k, streams, 3)
        seen.extend(idx.tolist())
    assert sorted(seen) == list(range(12))
    # deterministic across replays
    again = [src.indices(k, ChainStreams(5, 0), 3).tolist() for k in range(4)]
    assert [i for b in again for i in b] == seen
    # different chains shuffle differently
    other = [src.indices(k, ChainStreams(5, 1), 3).tolist() for k in range(4)]
    assert [i for b in other for i in b] != seen
