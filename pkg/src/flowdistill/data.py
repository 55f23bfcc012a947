"""Datasets: CSV ingestion, standardization, dequantization and 2-D toy densities."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import DataError, DegenerateDataError, ParseError

# Default split follows the usual UCI flow benchmarks: 10% test, then 10% of
# the remainder for validation.
DEFAULT_SPLIT = (0.81, 0.09, 0.10)


@dataclass
class Dataset:
    name: str
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    mean: np.ndarray = None
    std: np.ndarray = None
    dequantized: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.train.shape[1]


def standardize(train, *others):
    """z-score every split with statistics from ``train`` only."""
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    bad = np.flatnonzero(std < 1e-12)
    if bad.size:
        raise DegenerateDataError(f"constant columns {bad.tolist()} cannot be standardized")
    return mean, std, [(a - mean) / std for a in (train,) + others]


def split_sizes(n, fractions):
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"{n} rows are too few for split {fractions}")
    return n_train, n_val, n_test


def make_dataset(array, fractions=DEFAULT_SPLIT, seed=0, name="data", standardized=True):
    """Shuffle rows with a seeded permutation and cut train/val/test."""
    array = np.asarray(array, dtype=np.float64)
    if array.ndim != 2:
        raise DataError(f"expected a 2-D array, got shape {array.shape}")
    n_train, n_val, _ = split_sizes(len(array), fractions)
    order = np.random.default_rng(seed).permutation(len(array))
    shuffled = array[order]
    train = shuffled[:n_train]
    val = shuffled[n_train:n_train + n_val]
    test = shuffled[n_train + n_val:]
    if not standardized:
        return Dataset(name, train, val, test)
    mean, std, (train, val, test) = standardize(train, val, test)
    return Dataset(name, train, val, test, mean, std)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_csv(path):
    """Parse a numeric CSV with an optional single header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DataError(f"{path} is empty")
    start = 0
    first = [cell.strip() for cell in rows[0]]
    if not all(_is_number(c) for c in first):
        if any(_is_number(c) for c in first):
            col = next(j for j, c in enumerate(first) if not _is_number(c))
            raise ParseError(f"non-numeric cell {first[col]!r}", row=1, column=col + 1)
        start = 1
    width = len(rows[0])
    values = []
    for i, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise ParseError(f"expected {width} cells, found {len(row)}", row=i, column=len(row))
        parsed = []
        for j, cell in enumerate(row):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", row=i, column=j + 1) from None
        values.append(parsed)
    return np.array(values, dtype=np.float64).reshape(len(values), width)


def load_csv(path, split_fractions=DEFAULT_SPLIT, seed=0, name=None):
    array = read_csv(path)
    if len(array) < 3:
        raise DataError(f"{path} has {len(array)} data rows; need at least 3")
    return make_dataset(array, split_fractions, seed, name or str(path))


def dequantize(x_int, rng):
    """Map integers in [0, 255] to [0, 1) by adding uniform noise and dividing by 256."""
    x_int = np.asarray(getattr(x_int, "data", x_int), dtype=np.float64)
    if np.any(x_int < 0) or np.any(x_int > 255) or np.any(x_int != np.floor(x_int)):
        raise DataError("dequantize expects integers in [0, 255]")
    return (x_int + rng.uniform(0.0, 1.0, size=x_int.shape)) / 256.0


def integer_dataset(x_int, fractions=DEFAULT_SPLIT, seed=0, name="integers"):
    """Dequantize once with a seeded stream and split; no standardization."""
    rng = np.random.default_rng(seed)
    ds = make_dataset(dequantize(x_int, rng), fractions, seed, name, standardized=False)
    ds.dequantized = True
    return ds


# -- toy densities -----------------------------------------------------------


class ToyDensity:
    kind = None

    def sample(self, n, rng):
        raise NotImplementedError

    def log_prob(self, x):
        raise NotImplementedError


class GaussianMixture(ToyDensity):
    kind = "gaussian_mixture"

    def __init__(self, means=((0.0, 0.0),), std=1.0, weights=None):
        self.means = np.asarray(means, dtype=np.float64)
        self.std = float(std)
        k = len(self.means)
        self.weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)

    def sample(self, n, rng):
        comp = rng.choice(len(self.means), size=n, p=self.weights)
        return self.means[comp] + self.std * rng.standard_normal((n, 2))

    def log_prob(self, x):
        x = np.asarray(x, dtype=np.float64)
        sq = ((x[:, None, :] - self.means[None]) ** 2).sum(-1)
        comp = -0.5 * sq / self.std**2 - math.log(2 * math.pi * self.std**2)
        return special.logsumexp(comp + np.log(self.weights), axis=1)


class TwoRings(ToyDensity):
    """Uniform angle, radius from a two-component normal mixture truncated to r > 0."""

    kind = "two_rings"

    def __init__(self, radii=(1.0, 2.5), width=0.15, weights=(0.5, 0.5)):
        self.radii = np.asarray(radii, dtype=np.float64)
        self.width = float(width)
        self.weights = np.asarray(weights, dtype=np.float64)

    def sample(self, n, rng):
        comp = rng.choice(len(self.radii), size=n, p=self.weights)
        r = np.empty(n)
        for k, radius in enumerate(self.radii):
            idx = comp == k
            r[idx] = stats.truncnorm.rvs(-radius / self.width, np.inf, loc=radius, scale=self.width,
                                         size=int(idx.sum()), random_state=rng)
        theta = rng.uniform(0.0, 2 * math.pi, n)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)

    def log_prob(self, x):
        x = np.asarray(x, dtype=np.float64)
        r = np.hypot(x[:, 0], x[:, 1])
        with np.errstate(divide="ignore"):
            parts = [
                np.log(w) + stats.norm.logpdf(r, radius, self.width) - stats.norm.logcdf(radius / self.width)
                for w, radius in zip(self.weights, self.radii)
            ]
            return special.logsumexp(np.stack(parts), axis=0) - np.log(2 * math.pi * r)


class Checkerboard(ToyDensity):
    """Uniform over the dark cells of a 4x4 board covering [-4, 4]^2."""

    kind = "checkerboard"
    cells = 4
    half_width = 4.0

    def __init__(self):
        self.size = 2 * self.half_width / self.cells
        ij = [(i, j) for i in range(self.cells) for j in range(self.cells) if (i + j) % 2 == 0]
        self.dark = np.array(ij)
        self.log_density = -math.log(len(ij) * self.size**2)

    def sample(self, n, rng):
        cell = self.dark[rng.integers(len(self.dark), size=n)]
        offset = rng.uniform(0.0, self.size, (n, 2))
        return -self.half_width + cell * self.size + offset

    def log_prob(self, x):
        x = np.asarray(x, dtype=np.float64)
        idx = np.floor((x + self.half_width) / self.size).astype(int)
        inside = np.all((idx >= 0) & (idx < self.cells), axis=1) & (idx.sum(axis=1) % 2 == 0)
        return np.where(inside, self.log_density, -np.inf)


TOY_DENSITIES = {cls.kind: cls for cls in (GaussianMixture, TwoRings, Checkerboard)}


def toy_density(kind, **params):
    try:
        return TOY_DENSITIES[kind](**params)
    except KeyError:
        raise DataError(f"unknown toy density {kind!r}; choose from {sorted(TOY_DENSITIES)}") from None


def toy_sample(density, n, rng):
    if n < 1:
        raise DataError("n must be at least 1")
    return density.sample(n, rng)


def toy_dataset(kind, n=20000, seed=0, fractions=DEFAULT_SPLIT, **params):
    density = toy_density(kind, **params)
    ds = make_dataset(toy_sample(density, n, np.random.default_rng(seed)), fractions, seed, kind)
    ds.meta["density"] = kind
    return ds
