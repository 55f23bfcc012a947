import math

import numpy as np
import pytest

from flowdistill.data import (
    DEFAULT_SPLIT,
    dequantize,
    integer_dataset,
    load_csv,
    make_dataset,
    read_csv,
    toy_dataset,
    toy_density,
    toy_sample,
)
from flowdistill.errors import DataError, DegenerateDataError, ParseError


class ZeroNoise:
    def uniform(self, low, high, size):
        return np.zeros(size)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_ten_rows_split_8_1_1(tmp_path, rng):
    rows = "\n".join(",".join(f"{v:.6f}" for v in row) for row in rng.standard_normal((10, 3)))
    ds = load_csv(write(tmp_path / "d.csv", "a,b,c\n" + rows + "\n"), (0.8, 0.1, 0.1))
    assert (len(ds.train), len(ds.val), len(ds.test)) == (8, 1, 1)


def test_splits_disjoint_and_standardized(rng):
    raw = rng.standard_normal((200, 4)) * [1, 2, 3, 4] + 7
    ds = make_dataset(raw, DEFAULT_SPLIT, seed=3)
    np.testing.assert_allclose(ds.train.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(ds.train.std(axis=0), 1, atol=1e-9)
    rows = [tuple(r) for r in np.vstack([ds.train, ds.val, ds.test]) * ds.std + ds.mean]
    assert len(rows) == 200
    restored = {tuple(np.round(r, 9)) for r in rows}
    assert restored == {tuple(np.round(r, 9)) for r in raw}


def test_constant_column_is_degenerate(tmp_path):
    text = "\n".join(f"{i},5" for i in range(10)) + "\n"
    with pytest.raises(DegenerateDataError):
        load_csv(write(tmp_path / "c.csv", text))


def test_reload_is_bitwise_identical(tmp_path, rng):
    rows = "\n".join(",".join(repr(float(v)) for v in row) for row in rng.standard_normal((50, 2)))
    path = write(tmp_path / "d.csv", rows + "\n")
    a, b = load_csv(path, seed=4), load_csv(path, seed=4)
    for split in ("train", "val", "test"):
        assert np.array_equal(getattr(a, split), getattr(b, split))
    assert not np.array_equal(load_csv(path, seed=5).train, a.train)


def test_parse_error_location(tmp_path):
    with pytest.raises(ParseError) as info:
        read_csv(write(tmp_path / "bad.csv", "x,y\n1,2\n3,oops\n"))
    assert (info.value.row, info.value.column) == (3, 2)
    with pytest.raises(ParseError):
        read_csv(write(tmp_path / "ragged.csv", "1,2\n3\n"))


def test_too_few_rows(tmp_path):
    with pytest.raises(DataError):
        load_csv(write(tmp_path / "short.csv", "1,2\n3,4\n"))


def test_dequantize_examples(rng):
    assert dequantize(np.array([[0]]), ZeroNoise())[0, 0] == 0.0
    top = dequantize(np.full((1000, 1), 255), rng)
    assert np.all(top >= 255 / 256) and np.all(top < 1)
    mid = dequantize(np.full((200000,), 128), rng)
    # std of the mean is (1/sqrt(12))/256/sqrt(n)
    assert abs(mid.mean() - 128.5 / 256) < 5 * (1 / math.sqrt(12)) / 256 / math.sqrt(mid.size)


def test_dequantize_floor_recovers_integers(rng):
    x = rng.integers(0, 256, size=(500, 3))
    assert np.array_equal(np.floor(dequantize(x, rng) * 256).astype(int), x)


@pytest.mark.parametrize("bad", [[-1], [256], [3.5]])
def test_dequantize_rejects_out_of_range(bad, rng):
    with pytest.raises(DataError):
        dequantize(np.array(bad), rng)


def test_integer_dataset_keeps_unit_range(rng):
    ds = integer_dataset(rng.integers(0, 256, size=(100, 2)))
    assert ds.dequantized and ds.mean is None
    assert all(np.all((s >= 0) & (s < 1)) for s in (ds.train, ds.val, ds.test))


def test_single_gaussian_mean(rng):
    x = toy_sample(toy_density("gaussian_mixture"), 100000, rng)
    assert np.abs(x.mean(axis=0)).max() < 0.015


def test_two_rings_radii_within_six_sigma(rng):
    density = toy_density("two_rings")
    r = np.hypot(*toy_sample(density, 20000, rng).T)
    near = np.min(np.abs(r[:, None] - density.radii[None]), axis=1)
    assert near.max() < 6 * density.width


@pytest.mark.parametrize("kind", ["gaussian_mixture", "two_rings", "checkerboard"])
def test_fixed_seed_reproducible(kind):
    density = toy_density(kind)
    a = toy_sample(density, 100, np.random.default_rng(9))
    b = toy_sample(density, 100, np.random.default_rng(9))
    assert np.array_equal(a, b)


def quadrature_entropy(density, lim=6.0, n=1200):
    edges = np.linspace(-lim, lim, n + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    gx, gy = np.meshgrid(mid, mid)
    logp = density.log_prob(np.column_stack([gx.ravel(), gy.ravel()]))
    p = np.exp(logp)
    area = (edges[1] - edges[0]) ** 2
    mass = p.sum() * area
    ok = p > 0
    return float(-(p[ok] * logp[ok]).sum() * area), mass


@pytest.mark.parametrize("kind", ["gaussian_mixture", "two_rings", "checkerboard"])
def test_sample_nll_matches_entropy(kind, rng):
    density = toy_density(kind)
    entropy, mass = quadrature_entropy(density)
    assert mass == pytest.approx(1.0, abs=1e-3)
    nll = -density.log_prob(toy_sample(density, 100000, rng)).mean()
    assert nll == pytest.approx(entropy, rel=0.02)


def test_checkerboard_entropy_is_log_area():
    entropy, _ = quadrature_entropy(toy_density("checkerboard"), lim=4.0, n=800)
    assert entropy == pytest.approx(math.log(32), rel=1e-9)


def test_toy_dataset_standardized():
    ds = toy_dataset("two_rings", n=1000, seed=1)
    assert ds.dim == 2 and ds.meta["density"] == "two_rings"
    np.testing.assert_allclose(ds.train.std(axis=0), 1, atol=1e-9)
    with pytest.raises(DataError):
        toy_dataset("spiral")
