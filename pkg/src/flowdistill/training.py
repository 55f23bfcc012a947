"""Optimization loop, evaluation metrics and the inference benchmark."""

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .distill import combined_loss
from .errors import ContractError, DivergenceError
from .flow_model import nll_loss
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 512
    lr: float = 5e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_frac: float = 0.05
    clip_norm: float = 10.0
    max_bad_steps: int = 10
    seed: int = 0
    # when > 0, score the val split every ``select_every`` steps and keep the best parameters
    select_every: int = 0

    @property
    def warmup_steps(self):
        return int(round(self.warmup_frac * self.iterations))


class AdamW:
    """Adam with decoupled weight decay and a linear-warmup-then-constant LR."""

    def __init__(self, params, lr, weight_decay=1e-5, betas=(0.9, 0.999), eps=1e-8, warmup=0):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.warmup = warmup
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def lr_at(self, step):
        if self.warmup > 0 and step < self.warmup:
            return self.lr * step / self.warmup
        return self.lr

    def step(self):
        lr = self.lr_at(self.step_count)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.data = p.data - lr * self.weight_decay * p.data
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def global_norm(params):
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))


def clip_grad_norm(params, max_norm):
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(params)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad = p.grad * scale
    return norm


@dataclass
class RunReport:
    seed: int
    iterations: int
    param_count: int
    epoch_losses: list = field(default_factory=list)
    test_log_likelihood: float = None
    val_log_likelihood: float = None
    test_bpd: float = None
    skd_skipped: int = 0
    selected_iteration: int = None
    inference_ms_mean: float = None
    inference_ms_std: float = None
    wall_clock_s: float = None

    TIMING_FIELDS = ("inference_ms_mean", "inference_ms_std", "wall_clock_s")

    def to_dict(self, timing=True):
        out = asdict(self)
        if not timing:
            for key in self.TIMING_FIELDS:
                out.pop(key)
        return out


def _batches(n, batch_size, rng):
    """Endless stream of index batches; reshuffles every epoch."""
    size = min(batch_size, n)
    epoch = 0
    while True:
        order = rng.permutation(n)
        for start in range(0, n - size + 1, size):
            yield epoch, order[start:start + size]
        epoch += 1


def train(model, dataset, config=None, teacher=None, plan=None, benchmark_batch=None):
    """Fit ``model`` to ``dataset.train``; distill from ``teacher`` when ``plan`` is given."""
    config = config or TrainConfig()
    if plan is not None and teacher is None:
        raise ContractError("a distillation plan needs a teacher")
    if plan is not None:
        plan.validate(teacher, model)
    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    train_x = dataset.train
    stream = _batches(len(train_x), config.batch_size, rng)

    _, first = next(stream)
    if not model.initialized:
        model.initialize(train_x[first])
    params = list(model.parameters().values())
    opt = AdamW(params, config.lr, config.weight_decay, (config.beta1, config.beta2), config.eps,
                warmup=config.warmup_steps)

    report = RunReport(seed=config.seed, iterations=config.iterations, param_count=model.param_count())
    epoch_sum, epoch_count, current_epoch = 0.0, 0, 0
    bad_steps = 0
    best_val, best_params, best_iteration = -math.inf, None, None
    idx = first
    for it in range(config.iterations):
        if config.select_every and it % config.select_every == 0:
            best_val, best_params, best_iteration = _track_best(
                model, dataset, it, (best_val, best_params, best_iteration))
        if it > 0:
            epoch, idx = next(stream)
            if epoch != current_epoch:
                report.epoch_losses.append(epoch_sum / max(epoch_count, 1))
                epoch_sum, epoch_count, current_epoch = 0.0, 0, epoch
        x = Tensor(train_x[idx])
        opt.zero_grad()
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if plan is None:
                loss = nll_loss(x, model)
            else:
                z = None
                if plan.lambda_skd > 0:
                    z = rng.standard_normal((plan.skd_batch, model.dim)) * plan.skd_temperature
                loss = combined_loss(teacher, model, x, z, plan, step=it)
        value = float(loss.data)
        if not math.isfinite(value):
            bad_steps += 1
            if bad_steps >= config.max_bad_steps:
                raise DivergenceError(
                    f"loss non-finite for {bad_steps} consecutive steps at iteration {it}",
                    {"iteration": it, "last_loss": value, "lr": opt.lr_at(opt.step_count)},
                )
            continue
        bad_steps = 0
        T.backward(loss)
        clip_grad_norm(params, config.clip_norm)
        opt.step()
        epoch_sum += value
        epoch_count += 1
    if epoch_count:
        report.epoch_losses.append(epoch_sum / epoch_count)
    if config.select_every:
        best_val, best_params, best_iteration = _track_best(
            model, dataset, config.iterations, (best_val, best_params, best_iteration))
        if best_params is not None:
            for p, value in zip(params, best_params):
                p.data = value
            report.selected_iteration = best_iteration

    metrics = evaluate(model, dataset)
    report.test_log_likelihood = metrics["log_likelihood"]
    report.test_bpd = metrics.get("bpd")
    report.val_log_likelihood = evaluate(model, dataset, split="val")["log_likelihood"]
    if plan is not None:
        report.skd_skipped = plan.stats.get("skd_skipped", 0)
    if benchmark_batch:
        report.inference_ms_mean, report.inference_ms_std, _ = benchmark(model, benchmark_batch)
    report.wall_clock_s = time.perf_counter() - started
    log.info("trained %s: test log-likelihood %.4f nats", model.spec.get("architecture"), report.test_log_likelihood)
    return report


def _track_best(model, dataset, iteration, best):
    val = mean_log_prob(model, dataset.val)
    if math.isfinite(val) and val > best[0]:
        return val, [p.data.copy() for p in model.parameters().values()], iteration
    return best


def mean_log_prob(model, x, batch_size=4096):
    x = np.asarray(x, dtype=np.float64)
    total = 0.0
    with T.no_grad():
        for start in range(0, len(x), batch_size):
            logp, _ = model.log_prob(Tensor(x[start:start + batch_size]))
            total += float(logp.data.sum())
    return total / len(x)


def bits_per_dim(log_likelihood, dim):
    """bpd of data dequantized to [0, 1) by dividing integer values by 256."""
    return -log_likelihood / (dim * math.log(2.0)) + math.log2(256)


def evaluate(model, dataset, split="test"):
    """Mean log-likelihood in nats (higher is better), plus bpd for dequantized data."""
    data = getattr(dataset, split)
    ll = mean_log_prob(model, data)
    out = {"log_likelihood": ll, "nll": -ll}
    if dataset.dequantized:
        out["bpd"] = bits_per_dim(ll, dataset.dim)
    return out


def benchmark(model, batch_shape, repeats=30, warmup=5, seed=0):
    """Wall-clock of one forward log-density pass. Returns (mean_ms, std_ms, params)."""
    if repeats < 10:
        raise ContractError("benchmark needs at least 10 timed repeats")
    n = batch_shape if isinstance(batch_shape, int) else batch_shape[0]
    x = Tensor(np.random.default_rng(seed).standard_normal((n, model.dim)))
    times = []
    with threadpool_limits(limits=1), T.no_grad():
        for i in range(warmup + repeats):
            start = time.perf_counter()
            model.log_prob(x)
            elapsed = (time.perf_counter() - start) * 1e3
            if i >= warmup:
                times.append(elapsed)
    return float(np.mean(times)), float(np.std(times)), model.param_count()
