import numpy as np
import pytest

from latentlle._rng import PinnedRNG
from latentlle.classic import EmbeddingResult
from latentlle.data_io import (
    DatasetSpec,
    generate,
    load_csv,
    load_weights,
    save_csv,
    save_results,
)
from latentlle.exceptions import InvalidInputError, ParseError
from latentlle.stochastic import EMTrace


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        DatasetSpec(n=0)
    with pytest.raises(InvalidInputError):
        DatasetSpec(noise=-1.0)
    with pytest.raises(InvalidInputError):
        DatasetSpec(kind="torus")
    with pytest.raises(InvalidInputError):
        generate(DatasetSpec(kind="csv", path="x.csv"))


def test_affine_patch_on_plane():
    data, coef = generate(DatasetSpec("affine_patch", n=300, d=5, m=2, seed=3))
    C = data.centered
    _, s, Vt = np.linalg.svd(C, full_matrices=False)
    residual = C - (C @ Vt[:2].T) @ Vt[:2]
    assert np.max(np.linalg.norm(residual, axis=1)) <= 1e-12
    assert coef.shape == (300, 2)


@pytest.mark.parametrize("kind", ["swiss_roll", "s_curve", "affine_patch", "gaussian_blobs"])
def test_generators_deterministic(kind):
    a, za = generate(DatasetSpec(kind, n=50, noise=0.1, seed=7))
    b, zb = generate(DatasetSpec(kind, n=50, noise=0.1, seed=7))
    c, _ = generate(DatasetSpec(kind, n=50, noise=0.1, seed=8))
    assert np.array_equal(a.points, b.points) and np.array_equal(za, zb)
    assert not np.array_equal(a.points, c.points)


def test_swiss_roll_t_range():
    data, Z = generate(DatasetSpec("swiss_roll", n=1000, seed=0))
    t, h = Z[:, 0], Z[:, 1]
    assert abs(t.min() - 1.5 * np.pi) < 0.05 and abs(t.max() - 4.5 * np.pi) < 0.05
    assert h.min() >= 0 and h.max() <= 21
    assert np.allclose(data.points[:, 0], t * np.cos(t))
    assert np.allclose(data.points[:, 2], t * np.sin(t))


def test_pinned_rng_reference_values():
    # PCG64 + SeedSequence(0); first uniforms and the matching Box-Muller normal
    u = PinnedRNG(0).uniform(2)
    ref = np.random.Generator(np.random.PCG64(0)).random(2)
    assert np.array_equal(u, ref)
    z = PinnedRNG(0).normal(1)[0]
    assert z == np.sqrt(-2.0 * np.log1p(-ref[0])) * np.cos(2.0 * np.pi * ref[1])


def test_load_csv_example(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2\n3,4\n")
    data = load_csv(p)
    assert data.n == 2 and data.d == 2
    assert np.array_equal(data.mu, [2.0, 3.0])


def test_load_csv_header(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,y\n1,2\n")
    assert load_csv(p, has_header=True).n == 1


@pytest.mark.parametrize(
    "text, line, column",
    [("1,2\n3\n", 2, None), ("1,2\n3,abc\n", 2, 2), ("1,nan\n", 1, 2), ("", None, None)],
)
def test_load_csv_errors(tmp_path, text, line, column):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ParseError) as err:
        load_csv(p)
    assert err.value.line == line and err.value.column == column
    if line is not None:
        assert f"line {line}" in str(err.value)


def test_csv_round_trip_full_precision(tmp_path):
    X = np.random.default_rng(0).normal(size=(20, 3)) * 1e3
    X[0, 0] = 0.1 + 0.2
    save_csv(tmp_path / "x.csv", X)
    assert np.array_equal(load_csv(tmp_path / "x.csv").points, X)


def test_save_results(tmp_path):
    Y = np.arange(6.0).reshape(3, 2)
    idx = np.array([[1, 2], [0, 2], [1, 0]])
    w = np.random.default_rng(1).normal(size=(3, 2))
    save_results(tmp_path, EmbeddingResult(Y, np.zeros(3)), w, EMTrace(), idx)
    emb = (tmp_path / "embedding.csv").read_text().splitlines()
    assert len(emb) == 4 and emb[0] == "y0,y1" and len(emb[1].split(",")) == 2
    assert (tmp_path / "trace.csv").read_text() == "iter,objective,max_change\n"
    i2, w2 = load_weights(tmp_path / "weights.csv")
    assert np.array_equal(i2, idx) and np.array_equal(w2, w)
    raw = (tmp_path / "weights.csv").read_bytes()
    assert b"\r" not in raw


def test_save_results_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        save_results(blocker / "sub", EmbeddingResult(np.zeros((1, 1)), np.zeros(2)),
                     np.zeros((1, 1)), EMTrace(), np.zeros((1, 1), dtype=int))
