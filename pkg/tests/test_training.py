import math

import numpy as np
import pytest

from flowdistill import tensor as T
from flowdistill import training
from flowdistill.data import make_dataset, toy_dataset, toy_density
from flowdistill.distill import make_plan
from flowdistill.errors import ContractError, DivergenceError
from flowdistill.flow_model import FlowModel, build_glow, build_maf
from flowdistill.tensor import Tensor
from flowdistill.training import AdamW, TrainConfig, benchmark, clip_grad_norm, evaluate, global_norm

LOG_2PI = math.log(2 * math.pi)


def gaussian_dataset(dim, n, seed=0):
    data = np.random.default_rng(seed).standard_normal((n, dim))
    return make_dataset(data, seed=seed, standardized=False)


def test_zero_gradient_step_is_noop(rng):
    p = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    before = p.data.copy()
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    for _ in range(3):
        opt.zero_grad()
        opt.step()
    assert np.array_equal(p.data, before)


def test_lr_zero_at_first_warmup_step(rng):
    p = Tensor(rng.standard_normal(4), requires_grad=True)
    before = p.data.copy()
    opt = AdamW([p], lr=0.1, warmup=10)
    assert opt.lr_at(0) == 0.0
    assert opt.lr_at(5) == pytest.approx(0.05)
    assert opt.lr_at(10) == 0.1
    p.grad = np.ones(4)
    opt.step()
    assert np.array_equal(p.data, before)
    assert TrainConfig(iterations=1000).warmup_steps == 50


def test_adamw_first_step_matches_hand_computation():
    p = Tensor([1.0, -2.0], requires_grad=True)
    opt = AdamW([p], lr=0.1, weight_decay=0.01)
    p.grad = np.array([0.5, -0.25])
    opt.step()
    # bias-corrected first step is lr * sign(g) up to eps; decay uses the pre-update value
    expected = np.array([1.0, -2.0]) * (1 - 0.1 * 0.01) - 0.1 * np.sign([0.5, -0.25])
    np.testing.assert_allclose(p.data, expected, rtol=1e-7)


def test_clipping(rng):
    params = [Tensor(np.zeros(5), requires_grad=True), Tensor(np.zeros((2, 2)), requires_grad=True)]
    params[0].grad = rng.standard_normal(5) * 30
    params[1].grad = rng.standard_normal((2, 2)) * 30
    pre = clip_grad_norm(params, 10.0)
    assert pre > 10
    assert global_norm(params) <= 10.0 + 1e-9
    small = [Tensor(np.zeros(2), requires_grad=True)]
    small[0].grad = np.array([0.3, 0.4])
    clip_grad_norm(small, 10.0)
    assert np.array_equal(small[0].grad, [0.3, 0.4])


def test_identity_model_on_standard_normal_is_near_optimal():
    # 10k test events keep the Monte-Carlo error of the entropy near 0.3%
    ds = gaussian_dataset(2, 100000)
    model = build_glow(2, 1, hidden=8, rng=np.random.default_rng(0))
    report = training.train(model, ds, TrainConfig(iterations=200))
    entropy = 1 + LOG_2PI
    assert -report.test_log_likelihood == pytest.approx(entropy, rel=0.01)


def test_evaluate_identity_d6():
    ds = gaussian_dataset(6, 200000)
    ll = evaluate(FlowModel([], 6), ds)["log_likelihood"]
    assert ll == pytest.approx(-3 * (1 + LOG_2PI), abs=0.02)
    assert ll == pytest.approx(-8.51, abs=0.02)
    assert evaluate(FlowModel([], 6), ds) == evaluate(FlowModel([], 6), ds)


def test_bpd_reported_for_dequantized_data(rng):
    from flowdistill.data import integer_dataset

    ds = integer_dataset(rng.integers(0, 256, size=(300, 2)))
    metrics = evaluate(FlowModel([], 2), ds)
    assert metrics["bpd"] == pytest.approx(-metrics["log_likelihood"] / (2 * math.log(2)) + 8)


@pytest.fixture(scope="module")
def two_rings():
    return toy_dataset("two_rings", n=10000, seed=0)


def test_teacher_beats_standard_normal_baseline(two_rings):
    teacher = build_glow(2, 6, hidden=32, rng=np.random.default_rng(0))
    report = training.train(teacher, two_rings, TrainConfig(iterations=1500, lr=5e-3))
    baseline = evaluate(FlowModel([], 2), two_rings)["log_likelihood"]
    assert report.test_log_likelihood - baseline >= 0.25


def test_one_nat_margin_exceeds_entropy_bound(two_rings):
    # Even the exact density beats N(0, I) by under a nat on standardized two_rings,
    # so a one-nat teacher margin is unattainable there (see the decisions ledger).
    density = toy_density("two_rings")
    x = two_rings.test * two_rings.std + two_rings.mean
    exact = density.log_prob(x).mean() + np.log(two_rings.std).sum()
    baseline = evaluate(FlowModel([], 2), two_rings)["log_likelihood"]
    assert 0.85 < exact - baseline < 1.0


def run(two_rings, seed=0, **kwargs):
    model = build_maf(2, 2, hidden=8, rng=np.random.default_rng(seed))
    return training.train(model, two_rings, TrainConfig(iterations=60, batch_size=128, seed=seed), **kwargs)


def test_training_is_deterministic(two_rings):
    a = run(two_rings).to_dict(timing=False)
    b = run(two_rings).to_dict(timing=False)
    assert a == b
    assert run(two_rings, seed=1).test_log_likelihood != a["test_log_likelihood"]


def test_distilled_run_is_deterministic(two_rings):
    teacher = build_maf(2, 4, hidden=8, rng=np.random.default_rng(5))
    teacher.initialize(two_rings.train[:256])
    reports = []
    for _ in range(2):
        student = build_maf(2, 2, hidden=8, rng=np.random.default_rng(0))
        plan = make_plan("skd", teacher, student, skd_batch=32)
        reports.append(training.train(student, two_rings, TrainConfig(iterations=30, batch_size=128),
                                      teacher=teacher, plan=plan).to_dict(timing=False))
    assert reports[0] == reports[1]


def test_epoch_losses_recorded(two_rings):
    report = training.train(build_maf(2, 1, hidden=8), two_rings,
                            TrainConfig(iterations=150, batch_size=4000))
    # 8100 training rows at 4000 per batch: two batches per epoch
    assert len(report.epoch_losses) == 75
    assert report.param_count > 0


def test_divergence_raises_with_diagnostics(two_rings):
    model = build_glow(2, 1, hidden=8)
    model.initialize(two_rings.train[:100])
    model.steps[0].bias.data[:] = np.nan
    with pytest.raises(DivergenceError) as info:
        training.train(model, two_rings, TrainConfig(iterations=50, max_bad_steps=10))
    assert info.value.diagnostics["iteration"] == 9


def test_plan_requires_teacher(two_rings):
    student = build_maf(2, 1)
    plan = make_plan("ilkd", build_maf(2, 2), student)
    with pytest.raises(ContractError):
        training.train(student, two_rings, TrainConfig(iterations=1), plan=plan)


def test_benchmark_contract(rng):
    model = build_glow(3, 2, hidden=8, rng=rng)
    model.initialize(rng.standard_normal((50, 3)))
    mean_ms, std_ms, params = benchmark(model, 256, repeats=10)
    assert mean_ms > 0 and std_ms >= 0 and params == model.param_count()
    with pytest.raises(ContractError):
        benchmark(model, 256, repeats=5)


def timed(depth):
    model = build_maf(4, depth, hidden=32, rng=np.random.default_rng(0))
    best = min(benchmark(model, 512, repeats=20)[0] for _ in range(3))
    return best, benchmark(model, 512, repeats=30)


def test_benchmark_scaling_and_stability():
    shallow, _ = timed(3)
    deep, (mean_ms, std_ms, _) = timed(6)
    assert 1.0 <= deep / shallow <= 3.0
    assert std_ms / mean_ms < 0.3
