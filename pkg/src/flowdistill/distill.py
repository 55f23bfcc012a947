"""Teacher -> student distillation objectives.

All reconstruction terms use a mean-absolute (L1) distance, averaged over
events and dimensions so loss weights do not depend on batch size. The
teacher is always evaluated with graph recording disabled, so no gradient
can reach its parameters.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericalInstabilityError, ShapeError, SingularError
from .flow_model import nll_loss

MODES = ("none", "lkd", "ilkd", "skd")

# (nll weight, latent weight, synthesized weight)
PRESETS = {
    "none": (1.0, 0.0, 0.0),
    "lkd": (1.0, 0.0, 0.0),
    "ilkd": (0.9, 0.1, 0.0),
    "skd": (0.85, 0.075, 0.075),
}


@dataclass
class DistillPlan:
    correspondence: list
    lambda_nll: float = 1.0
    lambda_latent: float = 0.0
    lambda_skd: float = 0.0
    skd_batch: int = 256
    skd_temperature: float = 1.0
    skd_warmup: int = 0
    mode: str = "ilkd"
    stats: dict = field(default_factory=lambda: {"skd_skipped": 0})

    @property
    def weights(self):
        return self.lambda_nll, self.lambda_latent, self.lambda_skd

    def validate(self, teacher=None, student=None):
        if any(w < 0 for w in self.weights):
            raise ConfigError("loss weights must be non-negative", "lambdas")
        if sum(self.weights) <= 0:
            raise ConfigError("at least one loss weight must be positive", "lambdas")
        if self.skd_temperature < 0:
            raise ConfigError("must be non-negative", "skd_temperature")
        if teacher is not None and student is not None:
            if teacher.dim != student.dim:
                raise ShapeError(f"teacher dim {teacher.dim} != student dim {student.dim}")
            check_pairs(self.correspondence, len(teacher.tap_indices), len(student.tap_indices))
        return self


def check_pairs(pairs, n_teacher, n_student):
    for t_idx, s_idx in pairs:
        if not (0 <= t_idx < n_teacher and 0 <= s_idx < n_student):
            raise ConfigError(
                f"pair ({t_idx}, {s_idx}) outside teacher taps 0..{n_teacher - 1} / student taps 0..{n_student - 1}",
                "correspondence",
            )


def default_correspondence(teacher, student):
    """Student tap i learns from teacher tap r*(i+1)-1, r = teacher/student depth.

    For a depth-2K teacher and depth-K student every student block matches
    every other teacher block, ending with the two final latents.
    """
    n_t, n_s = len(teacher.tap_indices), len(student.tap_indices)
    if n_s == 0 or n_t % n_s:
        raise ConfigError(f"teacher taps ({n_t}) must be a multiple of student taps ({n_s})", "correspondence")
    ratio = n_t // n_s
    return [(ratio * (i + 1) - 1, i) for i in range(n_s)]


def final_correspondence(teacher, student):
    return [(len(teacher.tap_indices) - 1, len(student.tap_indices) - 1)]


def make_plan(mode, teacher, student, weights=None, **kwargs):
    """Plan for ``mode`` with the preset weights unless ``weights`` overrides them."""
    if mode not in MODES or mode == "none":
        raise ConfigError(f"distillation mode must be one of lkd, ilkd, skd; got {mode!r}", "mode")
    pairs = final_correspondence(teacher, student) if mode == "lkd" else default_correspondence(teacher, student)
    w = PRESETS[mode] if weights is None else tuple(weights)
    plan = DistillPlan(pairs, *w, mode=mode, **kwargs)
    return plan.validate(teacher, student)


def l1(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare latents of shapes {a.shape} and {b.shape}")
    return T.mean(T.abs_(a - b))


def _teacher_taps(teacher, x):
    with T.no_grad():
        _, _, taps = teacher.forward(x)
    return taps


def _teacher_latent(teacher, x):
    with T.no_grad():
        u, _, _ = teacher.forward(x)
        return teacher.canonical_latent(u)


def lkd_loss(teacher, student, x):
    """L1 distance between teacher and student final latents of ``x``."""
    x = T.as_tensor(x)
    if teacher.dim != student.dim:
        raise ShapeError(f"teacher dim {teacher.dim} != student dim {student.dim}")
    u, _, _ = student.forward(x)
    return l1(_teacher_latent(teacher, x), student.canonical_latent(u))


def _pair_sum(t_taps, s_taps, pairs):
    check_pairs(pairs, len(t_taps), len(s_taps))
    total = None
    for t_idx, s_idx in pairs:
        term = l1(t_taps[t_idx], s_taps[s_idx])
        total = term if total is None else total + term
    return total


def ilkd_loss(teacher, student, x, plan):
    """Sum of L1 distances over the plan's paired intermediate latents."""
    if not plan.correspondence:
        raise ConfigError("ILKD needs at least one tap pair", "correspondence")
    x = T.as_tensor(x)
    _, _, s_taps = student.forward(x)
    return _pair_sum(_teacher_taps(teacher, x), s_taps, plan.correspondence)


def skd_loss(teacher, student, z):
    """L1 distance between teacher and student samples generated from shared latents ``z``."""
    z = T.as_tensor(z)
    try:
        with T.no_grad(), np.errstate(over="ignore", invalid="ignore"):
            t_x, _ = teacher.inverse(z)
        with np.errstate(over="ignore", invalid="ignore"):
            s_x, _ = student.inverse(z)
    except SingularError as exc:
        raise NumericalInstabilityError(str(exc)) from exc
    if not (np.all(np.isfinite(t_x.data)) and np.all(np.isfinite(s_x.data))):
        raise NumericalInstabilityError("generated samples contain non-finite values")
    loss = l1(t_x, s_x)
    if not np.isfinite(loss.data):
        raise NumericalInstabilityError("SKD loss is non-finite")
    return loss


def combined_loss(teacher, student, x, z, plan, step=None):
    """``lambda_nll * NLL + lambda_latent * (I)LKD + lambda_skd * SKD``.

    Terms with zero weight are not evaluated. A non-finite SKD term is
    dropped for this call and counted in ``plan.stats["skd_skipped"]``; the
    same happens to SKD before ``plan.skd_warmup`` steps have elapsed, minus
    the counting.
    """
    x = T.as_tensor(x)
    lam_nll, lam_latent, lam_skd = plan.weights
    if lam_nll == 1.0 and lam_latent == 0.0 and lam_skd == 0.0:
        return nll_loss(x, student)

    logp, s_taps = student.log_prob(x)
    loss = -T.mean(logp) * lam_nll
    if lam_latent > 0:
        loss = loss + _pair_sum(_teacher_taps(teacher, x), s_taps, plan.correspondence) * lam_latent
    if lam_skd > 0 and z is not None and (step is None or step >= plan.skd_warmup):
        try:
            loss = loss + skd_loss(teacher, student, z) * lam_skd
        except NumericalInstabilityError:
            plan.stats["skd_skipped"] = plan.stats.get("skd_skipped", 0) + 1
    return loss
