import numpy as np
import pytest
from hypothesis import given, strategies as st

from parkcast.datamodel import MinuteSeries
from parkcast.errors import (CorruptArtifact, DigestMismatch, Divergence, InsufficientHistory,
                             SchemaMismatch, ShapeMismatch)
from parkcast.models import (FFNNRegressor, MlpTrainConfig, RandomForestRegressor,
                             init_mlp, load_artifact, mlp_forward, mlp_gradient, mlp_loss,
                             mlp_train, naive_random_walk, naive_seasonal,
                             random_walk_matrix, save_artifact, seasonal_naive_matrix,
                             split_neurons, train_artifact, tree_fit)
from parkcast.models.artifact import ModelArtifact


def numeric_gradient(params, X, Y, step=1e-5):
    grads = []
    for a in params.arrays():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + step
            up = mlp_loss(params, X, Y)
            a[idx] = old - step
            down = mlp_loss(params, X, Y)
            a[idx] = old
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def check_gradient(widths, activation="relu", seed=0, step=1e-5):
    rng = np.random.default_rng(seed)
    p = init_mlp(widths, seed, activation)
    for b in p.biases:
        b += rng.normal(0, 0.1, b.shape)  # move ReLU kinks away from zero inputs
    X = rng.normal(size=(7, widths[0]))
    Y = rng.normal(size=(7, widths[-1]))
    gW, gb, _ = mlp_gradient(p, X, Y)
    num = numeric_gradient(p, X, Y, step)
    return max(relative_error(a, n) for a, n in zip(gW + gb, num))


def test_split_neurons():
    assert split_neurons(90, 4) == (23, 23, 22, 22)
    assert split_neurons(10, 1) == (10,)
    with pytest.raises(ValueError):
        split_neurons(3, 4)


@pytest.mark.parametrize("activation", ["tanh", "sigmoid", "relu"])
def test_gradient_activations(activation):
    assert check_gradient((3, 6, 2), activation, seed=4) < 1e-5


def test_forward_single_and_batch():
    p = init_mlp((4, 5, 3), 0)
    X = np.random.default_rng(0).normal(size=(6, 4))
    np.testing.assert_allclose(mlp_forward(p, X[2]), mlp_forward(p, X)[2])
    with pytest.raises(ShapeMismatch):
        mlp_forward(p, np.zeros(5))


def test_checkpoint_returns_best_epoch():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 3))
    Y = X @ rng.normal(size=(3, 2))
    cfg = MlpTrainConfig(learning_rate=1e-2, epochs=30, batch_size=32)
    res = mlp_train((X, Y), (X[:50], Y[:50]), cfg, init_mlp((3, 8, 2), 0))
    assert res.best_val_loss == min(res.val_curve)
    assert mlp_loss(res.params, X[:50], Y[:50]) == pytest.approx(res.best_val_loss)
    assert res.train_curve[-1] < res.train_curve[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    X = np.ones((20, 2)) * 1e3
    Y = np.ones((20, 1)) * 1e6
    cfg = MlpTrainConfig(learning_rate=10.0, epochs=50, optimizer="sgd")
    with pytest.raises(Divergence):
        mlp_train((X, Y), (X, Y), cfg, init_mlp((2, 4, 1), 0, "identity"))


def test_ffnn_is_seeded():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(100, 4)), rng.normal(size=(100, 3))
    a = FFNNRegressor(hidden=(5,), epochs=5, seed=3).fit(X, Y, X, Y).predict(X)
    b = FFNNRegressor(hidden=(5,), epochs=5, seed=3).fit(X, Y, X, Y).predict(X)
    np.testing.assert_array_equal(a, b)


# -- trees ---------------------------------------------------------------

def best_root_split(X, y):
    """Exhaustive search over every feature and midpoint threshold."""
    best = (np.inf, None, None)
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = (lo + hi) / 2
            left = X[:, f] <= thr
            sse = ((y[left] - y[left].mean()) ** 2).sum() + ((y[~left] - y[~left].mean()) ** 2).sum()
            if sse < best[0] - 1e-9:
                best = (sse, f, thr)
    return best


def test_root_split_matches_exhaustive_search():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        X = rng.integers(0, 5, (n, 2)).astype(float)
        y = rng.normal(size=n)
        sse, f, thr = best_root_split(X, y)
        tree = tree_fit(X, y, max_depth=1)
        if f is None:
            assert tree.n_nodes == 1
            continue
        left = X[:, tree.feature[0]] <= tree.threshold[0]
        got = ((y[left] - y[left].mean()) ** 2).sum() + ((y[~left] - y[~left].mean()) ** 2).sum()
        assert got == pytest.approx(sse, rel=1e-9, abs=1e-12)


@given(st.integers(0, 10_000))
def test_unrestricted_tree_interpolates(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 3))
    Y = rng.normal(size=(40, 2))
    tree = tree_fit(X, Y)
    np.testing.assert_allclose(tree.predict(X), Y, rtol=0, atol=1e-12)


def test_depth_limit_and_leaf_size():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 2))
    y = rng.normal(size=300)
    t = tree_fit(X, y, max_depth=3, min_samples_leaf=10)
    assert t.depth <= 3
    assert t.n_samples[t.feature < 0].min() >= 10


def test_forest_prefix_and_round_trip():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(120, 4))
    Y = np.column_stack([X[:, 0] ** 2, X[:, 1]])
    big = RandomForestRegressor(n_trees=6, max_depth=5, seed=9).fit(X, Y)
    small = RandomForestRegressor(n_trees=3, max_depth=5, seed=9).fit(X, Y)
    np.testing.assert_array_equal(
        np.mean([t.predict(X) for t in big.trees[:3]], axis=0), small.predict(X))
    config, arrays = big.get_state()
    again = RandomForestRegressor.from_state(config, arrays)
    np.testing.assert_array_equal(again.predict(X), big.predict(X))
    np.testing.assert_array_equal(again.predict(X[0]), big.predict(X)[0])


def test_forest_without_bootstrap_on_constant_target():
    X = np.random.default_rng(0).normal(size=(30, 2))
    f = RandomForestRegressor(n_trees=2, bootstrap=False).fit(X, np.full((30, 1), 4.0))
    assert np.all(f.predict(X) == 4.0)


# -- naive forecasters -----------------------------------------------------

def test_naive_forecasters():
    hist = MinuteSeries(0, np.arange(20.0))
    assert naive_seasonal(hist, 10, 5, period=7) == 8.0
    with pytest.raises(InsufficientHistory):
        naive_seasonal(hist, 0, 5, period=7)
    assert naive_random_walk(hist, 12, 30) == 12.0
    assert naive_random_walk(hist, 100) == 19.0
    with pytest.raises(InsufficientHistory):
        naive_random_walk(hist, -1)
    m = seasonal_naive_matrix(hist, [10, 11], [5, 10], period=7)
    np.testing.assert_array_equal(m, [[8, 13], [9, 14]])
    gappy = MinuteSeries(0, np.array([1.0, np.nan, np.nan, 4.0]))
    np.testing.assert_array_equal(random_walk_matrix(gappy, [2, 3], [5, 10]), [[1, 1], [4, 4]])
    assert naive_random_walk(gappy, 2) == 1.0


# -- artifacts -------------------------------------------------------------

def test_artifact_round_trip(small_prepared, small_artifacts, tmp_path):
    art = small_artifacts["occupancy"]
    _, _, te = small_prepared.sets("occupancy", stride=30)
    sha = save_artifact(art, tmp_path / "a.pcm")
    again = load_artifact(tmp_path / "a.pcm")
    assert sha == art.content_digest() == again.content_digest()
    np.testing.assert_array_equal(again.predict(te.X, te.schema_digest), art.predict(te.X))
    assert again.metadata["n_train"] == art.metadata["n_train"]


def test_artifact_failures(small_prepared, small_artifacts, tmp_path):
    art = small_artifacts["occupancy"]
    with pytest.raises(SchemaMismatch):
        art.check_schema("0" * 64)
    data = bytearray(art.to_bytes())
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(CorruptArtifact):
        ModelArtifact.from_bytes(bytes(data))
    with pytest.raises(CorruptArtifact):
        load_artifact(tmp_path / "missing.pcm")
    reduced = small_prepared.schema.without("weather")
    tampered = ModelArtifact(art.kind, art.model, reduced, art.target, art.horizons,
                             schema_digest=art.schema_digest)
    with pytest.raises(DigestMismatch):
        tampered.predict(np.zeros(small_prepared.schema.width))


def test_train_artifact_checks_schema(small_prepared):
    tr, va, _ = small_prepared.sets("occupancy", stride=60)
    with pytest.raises(SchemaMismatch):
        train_artifact("forest", tr, va, small_prepared.schema.without("weather"), n_trees=1)
    art = train_artifact("forest", tr, va, small_prepared.schema, n_trees=2, max_depth=4)
    again = ModelArtifact.from_bytes(art.to_bytes())
    np.testing.assert_array_equal(again.predict(va.X), art.predict(va.X))
    assert again.to_bytes() == art.to_bytes()
