"""Normalizing flow = bijector chain + fixed standard-normal base."""

import copy
import math

import numpy as np

from . import tensor as T
from .bijectors import ActNorm, AffineCoupling, InvLinear, MAFLayer, Permute, compose_forward, compose_inverse
from .errors import ConfigError, ContractError, DegenerateInterpolantError, ShapeError
from .tensor import Tensor

LOG_2PI = math.log(2.0 * math.pi)
ARCHITECTURES = ("glow_tabular", "maf")


class FlowModel:
    """Ordered bijector chain mapping data (forward) to a N(0, I) latent.

    ``tap_indices`` lists chain positions (number of steps applied) whose
    outputs are exposed as intermediate latents. Taps are reported in the
    data's coordinate order: any fixed permutations applied before a tap are
    undone, so taps of models with different depths stay comparable.
    """

    def __init__(self, steps, dim, tap_indices=None, spec=None):
        self.steps = list(steps)
        self.dim = dim
        for step in self.steps:
            if step.dim != dim:
                raise ConfigError(f"step {step!r} has dim {step.dim}, model has {dim}", "dim")
        if tap_indices is None:
            tap_indices = [len(self.steps)] if self.steps else []
        for k in tap_indices:
            if not 1 <= k <= len(self.steps):
                raise ConfigError(f"tap index {k} outside chain of length {len(self.steps)}", "tap_indices")
        self.tap_indices = list(tap_indices)
        self.spec = dict(spec or {})
        self._tap_frames = self._coordinate_frames()

    def _coordinate_frames(self):
        frames = {}
        order = np.arange(self.dim)
        wanted = set(self.tap_indices) | {len(self.steps)}
        for k, step in enumerate(self.steps, start=1):
            if isinstance(step, Permute):
                order = order[step.perm]
            if k in wanted and not np.array_equal(order, np.arange(self.dim)):
                undo = np.zeros((self.dim, self.dim))
                undo[np.arange(self.dim), order] = 1.0
                frames[k] = undo
        return frames

    @property
    def depth(self):
        return self.spec.get("depth", len(self.steps))

    @property
    def initialized(self):
        return all(s.initialized for s in self.steps if isinstance(s, ActNorm))

    def parameters(self):
        params = {}
        for i, step in enumerate(self.steps):
            for name, p in step.parameters().items():
                params[f"step{i}.{name}"] = p
        return params

    def param_count(self):
        return sum(step.trainable_count() for step in self.steps)

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def initialize(self, batch):
        """Data-initialize every uninitialized ActNorm using ``batch``."""
        with T.no_grad():
            h = T.as_tensor(batch)
            for step in self.steps:
                if isinstance(step, ActNorm) and not step.initialized:
                    step.initialize(h)
                h, _ = step.forward(h)

    def _check(self, x):
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"expected events of shape (n, {self.dim}), got {x.shape}")

    def forward(self, x):
        """Map data to latent. Returns (u, log_det, taps)."""
        x = T.as_tensor(x)
        self._check(x)
        u, log_det, taps = compose_forward(x, self.steps, self.tap_indices)
        taps = [
            tap @ Tensor(self._tap_frames[k]) if k in self._tap_frames else tap
            for k, tap in zip(self.tap_indices, taps)
        ]
        return u, log_det, taps

    def canonical_latent(self, u):
        """Final latent expressed in the data's coordinate order."""
        frame = self._tap_frames.get(len(self.steps))
        return u if frame is None else u @ Tensor(frame)

    def inverse(self, u):
        """Map latent to data. Returns (x, log_det of the inverse map)."""
        u = T.as_tensor(u)
        self._check(u)
        return compose_inverse(u, self.steps)

    def log_prob(self, x):
        u, log_det, taps = self.forward(x)
        base = T.sum_(T.square(u), axis=1) * -0.5 - 0.5 * self.dim * LOG_2PI
        return base + log_det, taps

    def sample(self, n, temperature=1.0, rng=None):
        return sample(n, temperature, self, rng)

    def copy(self):
        return copy.deepcopy(self)

    def __repr__(self):
        return f"FlowModel(dim={self.dim}, steps={len(self.steps)}, spec={self.spec})"


def log_prob(x, model):
    return model.log_prob(x)


def nll_loss(batch, model):
    """Mean negative log-likelihood of ``batch`` in nats."""
    batch = T.as_tensor(batch)
    if batch.shape[0] < 1:
        raise ContractError("nll_loss needs at least one event")
    logp, _ = model.log_prob(batch)
    return -T.mean(logp)


def sample(n, temperature, model, rng=None):
    """Draw ``u ~ N(0, T^2 I)`` and return its image under the inverse chain."""
    if temperature < 0:
        raise ContractError(f"temperature must be non-negative, got {temperature}")
    rng = rng if rng is not None else np.random.default_rng()
    u = rng.standard_normal((n, model.dim)) * temperature
    with T.no_grad():
        x, _ = model.inverse(Tensor(u))
    return x


def preserved_norm_latent(fu, fv, alpha):
    """Linear latent interpolation rescaled to the linearly interpolated norm."""
    mix = (1.0 - alpha) * fu + alpha * fv
    norm = np.linalg.norm(mix)
    if norm == 0.0:
        raise DegenerateInterpolantError("interpolated latent has zero norm")
    target = (1.0 - alpha) * np.linalg.norm(fu) + alpha * np.linalg.norm(fv)
    return mix * (target / norm)


def latent_interpolate(u_img, v_img, alpha, model):
    """Interpolate two events through the model's latent space, preserving norm."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    pair = np.stack([np.asarray(T.as_tensor(u_img).data), np.asarray(T.as_tensor(v_img).data)])
    with T.no_grad():
        latents, _, _ = model.forward(Tensor(pair))
        mixed = preserved_norm_latent(latents.data[0], latents.data[1], alpha)
        out, _ = model.inverse(Tensor(mixed[None, :]))
    return Tensor(out.data[0])


def interpolation_path(u_img, v_img, steps, model):
    """Events and latent norms at ``steps + 1`` evenly spaced alphas in [0, 1]."""
    if steps < 1:
        raise ContractError("steps must be at least 1")
    pair = np.stack([np.asarray(u_img, dtype=np.float64), np.asarray(v_img, dtype=np.float64)])
    with T.no_grad():
        latents, _, _ = model.forward(Tensor(pair))
        fu, fv = latents.data
        alphas = np.linspace(0.0, 1.0, steps + 1)
        mixed = np.stack([preserved_norm_latent(fu, fv, a) for a in alphas])
        out, _ = model.inverse(Tensor(mixed))
    return alphas, out.data, np.linalg.norm(mixed, axis=1)


def param_count(model):
    return model.param_count()


# -- builders -------------------------------------------------------------


def coupling_mask(dim, block):
    """Alternate even/odd dimensions between consecutive blocks."""
    return (np.arange(dim) + block) % 2 == 0


def build_glow(dim, depth, hidden=32, n_hidden=2, rng=None):
    """Tabular GLOW: ``depth`` blocks of actnorm -> inv_linear -> affine coupling."""
    if dim < 2:
        raise ConfigError("coupling flows need at least two dimensions", "dim")
    rng = rng if rng is not None else np.random.default_rng(0)
    steps = []
    for k in range(depth):
        steps.append(ActNorm(dim))
        steps.append(InvLinear(dim, rng=rng))
        steps.append(AffineCoupling(dim, coupling_mask(dim, k), hidden, n_hidden, rng=rng))
    spec = dict(architecture="glow_tabular", dim=dim, depth=depth, hidden=hidden, n_hidden=n_hidden)
    return FlowModel(steps, dim, [3 * (k + 1) for k in range(depth)], spec)


def build_maf(dim, depth, hidden=32, n_hidden=2, rng=None):
    """MAF: ``depth`` blocks of maf_layer -> reverse permutation."""
    rng = rng if rng is not None else np.random.default_rng(0)
    steps = []
    for _ in range(depth):
        steps.append(MAFLayer(dim, hidden, n_hidden, rng=rng))
        steps.append(Permute(dim))
    spec = dict(architecture="maf", dim=dim, depth=depth, hidden=hidden, n_hidden=n_hidden)
    return FlowModel(steps, dim, [2 * (k + 1) for k in range(depth)], spec)


def build_model(spec, rng=None):
    arch = spec.get("architecture")
    kwargs = dict(dim=int(spec["dim"]), depth=int(spec["depth"]),
                  hidden=int(spec.get("hidden", 32)), n_hidden=int(spec.get("n_hidden", 2)), rng=rng)
    if arch == "glow_tabular":
        return build_glow(**kwargs)
    if arch == "maf":
        return build_maf(**kwargs)
    raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}", "architecture")
