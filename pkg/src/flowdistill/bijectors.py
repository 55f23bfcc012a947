"""Invertible layers.

Every bijector maps a batch ``z`` of shape (n, d) to ``x`` and reports the
per-event log absolute Jacobian determinant, shape (n,). ``inverse`` undoes
``forward`` and reports the negated log-det at the mapped point.

In a :class:`~flowdistill.flow_model.FlowModel` the forward direction runs
data to latent.
"""

import numpy as np
import scipy.linalg

from . import tensor as T
from .errors import ConfigError, ContractError, DegenerateDataError, ShapeError, SingularError
from .nn import MLP
from .tensor import Tensor

SCALE_BOUND = 7.0


def soft_clamp(raw, bound=SCALE_BOUND):
    """Smoothly squash ``raw`` into (-bound, bound)."""
    return T.tanh(raw / bound) * bound


def _zeros(n):
    return Tensor(np.zeros(n))


def _check_input(z, dim):
    if z.ndim != 2 or z.shape[1] != dim:
        raise ShapeError(f"expected events of shape (n, {dim}), got {z.shape}")


class Bijector:
    kind = None
    dim = None

    def parameters(self):
        return {}

    def parameter_masks(self):
        """Fixed 0/1 masks marking which entries of a parameter are trainable."""
        return {}

    def buffers(self):
        """Non-trainable persistent state, as numpy arrays."""
        return {}

    def load_buffers(self, buffers):
        pass

    def trainable_count(self):
        masks = self.parameter_masks()
        total = 0
        for name, p in self.parameters().items():
            total += int(masks[name].sum()) if name in masks else p.data.size
        return total

    def forward(self, z):
        raise NotImplementedError

    def inverse(self, x):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class ActNorm(Bijector):
    """Per-dimension affine map ``x = s * z + b`` with data-dependent init.

    ``s`` is stored as ``log|s|`` so it can never reach zero during training.
    """

    kind = "actnorm"

    def __init__(self, dim, scale=None, bias=None):
        self.dim = dim
        self.log_scale = Tensor(np.zeros(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.initialized = False
        if scale is not None or bias is not None:
            self.set(scale if scale is not None else np.ones(dim),
                     bias if bias is not None else np.zeros(dim))

    @property
    def scale(self):
        return np.exp(self.log_scale.data)

    def set(self, scale, bias):
        scale = np.asarray(scale, dtype=np.float64)
        if np.any(scale <= 0):
            raise ConfigError("ActNorm scales must be positive", "scale")
        self.log_scale.data = np.log(scale)
        self.bias.data = np.array(bias, dtype=np.float64)
        self.initialized = True

    def initialize(self, batch):
        """Pick s, b so that ``batch`` maps to zero mean and unit std per dimension."""
        if self.initialized:
            raise ContractError("ActNorm is already initialized")
        data = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
        _check_input(Tensor(data), self.dim)
        if data.shape[0] < 2:
            raise ContractError("ActNorm initialization needs at least two events")
        mu = data.mean(axis=0)
        sd = data.std(axis=0)
        if np.any(sd < 1e-12):
            raise DegenerateDataError(f"zero variance in dimensions {np.flatnonzero(sd < 1e-12).tolist()}")
        self.set(1.0 / sd, -mu / sd)

    def parameters(self):
        return {"log_scale": self.log_scale, "bias": self.bias}

    def buffers(self):
        return {"initialized": np.array(self.initialized)}

    def load_buffers(self, buffers):
        self.initialized = bool(buffers["initialized"])

    def _log_det(self, n):
        return T.expand_rows(T.sum_(self.log_scale), n)

    def forward(self, z):
        if not self.initialized:
            raise ContractError("ActNorm used before initialization")
        _check_input(z, self.dim)
        n = z.shape[0]
        x = z * T.expand_rows(T.exp(self.log_scale), n) + T.expand_rows(self.bias, n)
        return x, self._log_det(n)

    def inverse(self, x):
        if not self.initialized:
            raise ContractError("ActNorm used before initialization")
        _check_input(x, self.dim)
        n = x.shape[0]
        z = (x - T.expand_rows(self.bias, n)) * T.expand_rows(T.exp(-self.log_scale), n)
        return z, -self._log_det(n)


class InvLinear(Bijector):
    """Invertible linear map ``x = W z`` with ``W = P L (U + diag(s))``.

    P is fixed at construction. L is unit lower triangular, U strictly upper
    triangular, and ``s = sign * exp(log_s)`` with a fixed sign vector.
    """

    kind = "inv_linear"

    def __init__(self, dim, rng=None, weight=None):
        self.dim = dim
        if weight is None:
            if rng is None:
                weight = np.eye(dim)
            else:
                weight, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        perm, lower, upper = scipy.linalg.lu(np.asarray(weight, dtype=np.float64))
        s = np.diag(upper).copy()
        if np.any(s == 0):
            raise SingularError("weight matrix is singular")
        self.perm = perm
        self.sign = np.sign(s)
        self.lower_mask = np.tril(np.ones((dim, dim)), -1)
        self.upper_mask = np.triu(np.ones((dim, dim)), 1)
        self.lower = Tensor(lower * self.lower_mask, requires_grad=True)
        self.upper = Tensor(upper * self.upper_mask, requires_grad=True)
        self.log_s = Tensor(np.log(np.abs(s)), requires_grad=True)
        self._eye = np.eye(dim)

    def parameters(self):
        return {"lower": self.lower, "upper": self.upper, "log_s": self.log_s}

    def parameter_masks(self):
        return {"lower": self.lower_mask, "upper": self.upper_mask}

    def buffers(self):
        return {"perm": self.perm, "sign": self.sign}

    def load_buffers(self, buffers):
        self.perm = np.asarray(buffers["perm"], dtype=np.float64)
        self.sign = np.asarray(buffers["sign"], dtype=np.float64)

    def weight(self):
        """Reconstruct W as a graph tensor."""
        s = np.exp(self.log_s.data)
        if np.any(s == 0) or not np.all(np.isfinite(s)):
            raise SingularError("InvLinear diagonal has a zero or non-finite entry")
        d = self.dim
        lower = self.lower * Tensor(self.lower_mask) + Tensor(self._eye)
        diag = T.expand_rows(T.exp(self.log_s) * Tensor(self.sign), d) * Tensor(self._eye)
        upper = self.upper * Tensor(self.upper_mask) + diag
        return Tensor(self.perm) @ (lower @ upper)

    def _log_det(self, n):
        return T.expand_rows(T.sum_(self.log_s), n)

    def forward(self, z):
        _check_input(z, self.dim)
        return z @ self.weight().T, self._log_det(z.shape[0])

    def inverse(self, x):
        _check_input(x, self.dim)
        return x @ T.inv(self.weight()).T, -self._log_det(x.shape[0])


class AffineCoupling(Bijector):
    """Affine coupling: dims with ``mask == 1`` pass through and condition the rest.

    ``x_B = z_B * exp(log_scale(z_A)) + shift(z_A)``; log_scale is soft-clamped
    to (-7, 7).
    """

    kind = "affine_coupling"

    def __init__(self, dim, mask, hidden=32, n_hidden=2, rng=None):
        mask = np.asarray(mask).astype(bool)
        if mask.shape != (dim,):
            raise ConfigError(f"mask must have length {dim}", "mask")
        if mask.all() or not mask.any():
            raise ConfigError("coupling mask must split dimensions into two non-empty parts", "mask")
        self.dim = dim
        self.mask = mask
        eye = np.eye(dim)
        self._select_a = eye[:, mask]
        self._select_b = eye[:, ~mask]
        rng = rng if rng is not None else np.random.default_rng(0)
        n_b = int((~mask).sum())
        self.net = MLP(int(mask.sum()), hidden, n_hidden, heads=[n_b, n_b], rng=rng)

    def parameters(self):
        return self.net.parameters()

    def parameter_masks(self):
        return {}

    def buffers(self):
        return {"mask": self.mask.astype(np.float64)}

    def load_buffers(self, buffers):
        mask = np.asarray(buffers["mask"]).astype(bool)
        if not np.array_equal(mask, self.mask):
            raise ConfigError("checkpoint coupling mask does not match architecture", "mask")

    def _conditioner(self, part_a):
        shift, raw = self.net(part_a)
        return shift, soft_clamp(raw)

    def forward(self, z):
        _check_input(z, self.dim)
        sa, sb = Tensor(self._select_a), Tensor(self._select_b)
        part_a = z @ sa
        shift, log_scale = self._conditioner(part_a)
        part_b = (z @ sb) * T.exp(log_scale) + shift
        return part_a @ sa.T + part_b @ sb.T, T.sum_(log_scale, axis=1)

    def inverse(self, x):
        _check_input(x, self.dim)
        sa, sb = Tensor(self._select_a), Tensor(self._select_b)
        part_a = x @ sa
        shift, log_scale = self._conditioner(part_a)
        part_b = (x @ sb - shift) * T.exp(-log_scale)
        return part_a @ sa.T + part_b @ sb.T, -T.sum_(log_scale, axis=1)


def made_degrees(dim, hidden, n_hidden):
    """Degrees for inputs, each hidden layer and outputs (natural ordering).

    Hidden units cycle through 1..d-1 round-robin.
    """
    inputs = np.arange(1, dim + 1)
    span = max(dim - 1, 1)
    layers = [np.arange(hidden) % span + 1 for _ in range(n_hidden)]
    return inputs, layers, inputs.copy()


def made_masks(dim, hidden, n_hidden):
    inputs, layers, outputs = made_degrees(dim, hidden, n_hidden)
    masks = {}
    prev = inputs
    for i, deg in enumerate(layers):
        masks[("hidden", i)] = (deg[None, :] >= prev[:, None]).astype(np.float64)
        prev = deg
    out = (outputs[None, :] > prev[:, None]).astype(np.float64)
    masks[("head", 0)] = out
    masks[("head", 1)] = out.copy()
    return masks


def _check_autoregressive(masks, n_hidden, dim):
    # reach[j, i]: input j feeds output i; must vanish whenever j >= i.
    reach = np.eye(dim)
    for i in range(n_hidden):
        reach = (reach @ masks[("hidden", i)] > 0).astype(np.float64)
    reach = (reach @ masks[("head", 0)] > 0)
    if np.any(np.tril(reach)):
        raise ConfigError("MADE masks violate the autoregressive property", "masks")


class MAFLayer(Bijector):
    """Masked autoregressive affine layer.

    ``x_i = z_i * exp(alpha_i) + mu_i`` with ``(mu_i, alpha_i)`` depending on
    ``z_{1:i-1}`` only. Forward is one masked pass; inverse needs d passes.
    """

    kind = "maf_layer"

    def __init__(self, dim, hidden=32, n_hidden=2, rng=None):
        if n_hidden < 1:
            raise ConfigError("MADE needs at least one hidden layer", "n_hidden")
        self.dim = dim
        self.masks = made_masks(dim, hidden, n_hidden)
        _check_autoregressive(self.masks, n_hidden, dim)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.net = MLP(dim, hidden, n_hidden, heads=[dim, dim], rng=rng, masks=self.masks)
        self.n_hidden = n_hidden

    def parameters(self):
        return self.net.parameters()

    def parameter_masks(self):
        named = {}
        for (where, i), mask in self.masks.items():
            named[f"{where}{i}.weight"] = mask
        return named

    def _conditioner(self, z):
        mu, raw = self.net(z)
        return mu, soft_clamp(raw)

    def forward(self, z):
        _check_input(z, self.dim)
        mu, alpha = self._conditioner(z)
        return z * T.exp(alpha) + mu, T.sum_(alpha, axis=1)

    def inverse(self, x):
        _check_input(x, self.dim)
        z = Tensor(np.zeros(x.shape))
        alpha = None
        for _ in range(self.dim):
            mu, alpha = self._conditioner(z)
            z = (x - mu) * T.exp(-alpha)
        if not np.all(np.isfinite(z.data)):
            raise SingularError("MAF inverse produced non-finite values")
        return z, -T.sum_(alpha, axis=1)


class Permute(Bijector):
    """Fixed coordinate permutation: ``x[:, j] = z[:, perm[j]]``."""

    kind = "permute"

    def __init__(self, dim, perm=None):
        self.dim = dim
        perm = np.arange(dim)[::-1] if perm is None else np.asarray(perm)
        if sorted(perm.tolist()) != list(range(dim)):
            raise ConfigError("not a permutation", "perm")
        self.perm = perm.astype(np.int64)
        self._matrix = np.zeros((dim, dim))
        self._matrix[self.perm, np.arange(dim)] = 1.0

    def buffers(self):
        return {"perm": self.perm.astype(np.float64)}

    def load_buffers(self, buffers):
        self.__init__(self.dim, np.asarray(buffers["perm"]).astype(np.int64))

    def forward(self, z):
        _check_input(z, self.dim)
        return z @ Tensor(self._matrix), _zeros(z.shape[0])

    def inverse(self, x):
        _check_input(x, self.dim)
        return x @ Tensor(self._matrix.T), _zeros(x.shape[0])


def bijector_inverse(x, step):
    return step.inverse(x)


def compose_forward(z, chain, tap_indices=()):
    """Apply ``chain`` in order.

    Returns the output, the summed log-det and the intermediate outputs
    captured after ``k`` steps for each ``k`` in ``tap_indices``.
    """
    dims = {step.dim for step in chain}
    if len(dims) > 1:
        raise ConfigError(f"chain mixes event dimensions {sorted(dims)}", "chain")
    wanted = set(tap_indices)
    taps = {}
    total = _zeros(z.shape[0])
    h = z
    for k, step in enumerate(chain, start=1):
        h, log_det = step.forward(h)
        total = total + log_det
        if k in wanted:
            taps[k] = h
    return h, total, [taps[k] for k in tap_indices]


def compose_inverse(x, chain):
    total = _zeros(x.shape[0])
    h = x
    for step in reversed(chain):
        h, log_det = step.inverse(h)
        total = total + log_det
    return h, total
