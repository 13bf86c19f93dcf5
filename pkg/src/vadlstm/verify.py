"""Oracle suites: finite-difference gradients, reductions, SSIM, AUC and scoring.

Every check compares an observed deviation with a tolerance and never raises
on a mismatch; `ensure_passed` turns failures into an exception.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass

import numpy as np
import torch

from .attention import AttentionParams, attention_weights, min_max_mask
from .cells import CellParams, CellState, conv_lstm_step, sho_conv_lstm_step
from .const import L1Filter, Suite
from .exceptions import VerificationFailedException
from .losses import filtered_error, gaussian_window, l1_loss, mixed_loss, ssim_loss, ssim_value
from .model import LossConfig
from .scoring import normalize_scores, roc_auc

_LOGGER = logging.getLogger(__name__)

FD_EPSILON = 1e-5
GRADIENT_TOLERANCE = 1e-4
GRADIENT_INSTANCES = 10
REDUCTION_TOLERANCE = 1e-12
SSIM_TOLERANCE = 1e-6
SSIM_CLOSED_FORM_TOLERANCE = 1e-9
AUC_TOLERANCE = 1e-9
CORRUPTION = 1e-2

Objective = Callable[..., torch.Tensor]


@dataclass
class CheckResult:
    """Outcome of one named property check."""

    suite: Suite
    name: str
    passed: bool
    observed: float
    expected: float
    tolerance: float

    def describe(self) -> str:
        """Return a one line report."""
        status = "ok" if self.passed else "FAILED"
        return (
            f"[{self.suite}] {self.name}: {status} "
            f"(observed {self.observed:.3e}, expected {self.expected:.3e} "
            f"within {self.tolerance:.1e})"
        )


def _deviation_check(
    suite: Suite, name: str, deviation: float, tolerance: float
) -> CheckResult:
    return CheckResult(
        suite=suite,
        name=name,
        passed=bool(deviation <= tolerance),
        observed=deviation,
        expected=0.0,
        tolerance=tolerance,
    )


def gradient_error(
    objective: Objective,
    inputs: Sequence[torch.Tensor],
    *,
    eps: float = FD_EPSILON,
    corrupt: bool = False,
) -> float:
    """Return the relative error between autograd and central differences.

    `objective` must return a scalar; inputs are float64 leaves.
    """
    leaves = [tensor.detach().clone().requires_grad_(True) for tensor in inputs]
    analytic = torch.autograd.grad(objective(*leaves), leaves)
    if corrupt:
        analytic = tuple(grad * (1 + CORRUPTION) for grad in analytic)
    numeric = []
    with torch.no_grad():
        for leaf in leaves:
            estimate = torch.zeros_like(leaf)
            flat, target = leaf.view(-1), estimate.view(-1)
            for position in range(flat.numel()):
                original = flat[position].item()
                flat[position] = original + eps
                upper = objective(*leaves).item()
                flat[position] = original - eps
                lower = objective(*leaves).item()
                flat[position] = original
                target[position] = (upper - lower) / (2 * eps)
            numeric.append(estimate)
    analytic_flat = torch.cat([grad.reshape(-1) for grad in analytic])
    numeric_flat = torch.cat([grad.reshape(-1) for grad in numeric])
    scale = max(analytic_flat.norm().item(), numeric_flat.norm().item(), 1e-12)
    return (analytic_flat - numeric_flat).norm().item() / scale


def _projection(generator: torch.Generator, *shape: int) -> torch.Tensor:
    return torch.randn(*shape, generator=generator, dtype=torch.float64)


def _cell_instance(
    generator: torch.Generator, encoder_channels: int
) -> tuple[Objective, list[torch.Tensor]]:
    batch, inputs, hidden, size, kernel = 1, 2, 2, 4, 3
    stack = inputs + hidden + encoder_channels
    tensors = [
        _projection(generator, batch, inputs, size, size),
        _projection(generator, batch, hidden, size, size),
        _projection(generator, batch, hidden, size, size),
        *(_projection(generator, hidden, stack, kernel, kernel) * 0.3 for _ in range(4)),
        *(_projection(generator, hidden) * 0.1 for _ in range(4)),
    ]
    if encoder_channels:
        tensors.append(_projection(generator, batch, encoder_channels, size, size))
    hidden_weight = _projection(generator, batch, hidden, size, size)
    cell_weight = _projection(generator, batch, hidden, size, size)

    def objective(x, h_prev, c_prev, *rest):  # type: ignore[no-untyped-def]
        params = CellParams(*rest[:8])
        prev = CellState(hidden=h_prev, cell=c_prev)
        if encoder_channels:
            state = sho_conv_lstm_step(x, prev, rest[8], params)
        else:
            state = conv_lstm_step(x, prev, params)
        return (state.hidden * hidden_weight).sum() + (state.cell * cell_weight).sum()

    return objective, tensors


def _attention_instance(generator: torch.Generator) -> tuple[Objective, list[torch.Tensor]]:
    channels, middle, size, kernel = 2, 3, 4, 3
    tensors = [
        _projection(generator, 1, channels, size, size),
        _projection(generator, 1, channels, size, size),
        _projection(generator, middle, 2 * channels, kernel, kernel) * 0.3,
        _projection(generator, middle) * 0.1,
        _projection(generator, channels, middle, kernel, kernel) * 0.3,
    ]
    weight = _projection(generator, 1, channels, size, size)

    def objective(x_t, x_prev, w1, b1, w2):  # type: ignore[no-untyped-def]
        z = attention_weights(x_t, x_prev, AttentionParams(w1=w1, b1=b1, w2=w2))
        return (z * weight).sum()

    return objective, tensors


def _frame_pair(generator: torch.Generator, size: int) -> list[torch.Tensor]:
    return [
        torch.rand(1, 1, size, size, generator=generator, dtype=torch.float64) * 2 - 1
        for _ in range(2)
    ]


def gradient_suite(*, seed: int = 0, corrupt: bool = False) -> list[CheckResult]:
    """Check autograd against central differences on random small instances."""
    generator = torch.Generator().manual_seed(seed)
    cfg = LossConfig()
    frame = cfg.ssim_window + 1
    builders: dict[str, Callable[[], tuple[Objective, list[torch.Tensor]]]] = {
        "conv_lstm_step": lambda: _cell_instance(generator, 0),
        "sho_conv_lstm_step": lambda: _cell_instance(generator, 2),
        "attention_weights": lambda: _attention_instance(generator),
        "ssim_loss": lambda: (
            lambda p, p_hat: ssim_loss(p, p_hat, cfg),
            _frame_pair(generator, frame),
        ),
        "l1_loss": lambda: (l1_loss, _frame_pair(generator, frame)),
        "mixed_loss": lambda: (
            lambda p, p_hat: mixed_loss(p, p_hat, cfg),
            _frame_pair(generator, frame),
        ),
    }
    results = []
    for name, build in builders.items():
        worst = max(
            gradient_error(*build(), corrupt=corrupt) for _ in range(GRADIENT_INSTANCES)
        )
        results.append(_deviation_check(Suite.GRADIENTS, name, worst, GRADIENT_TOLERANCE))
    return results


def reduction_suite(*, seed: int = 0) -> list[CheckResult]:
    """Check the degenerate configurations against their simpler counterparts."""
    generator = torch.Generator().manual_seed(seed)
    inputs, hidden, size = 2, 3, 6
    stacked = _projection(generator, 4 * hidden, inputs + 2 * hidden, 5, 5) * 0.2
    stacked[:, inputs + hidden :] = 0
    bias = _projection(generator, 4 * hidden)
    x = _projection(generator, 2, inputs, size, size)
    prev = CellState(
        hidden=_projection(generator, 2, hidden, size, size),
        cell=_projection(generator, 2, hidden, size, size),
    )
    h_enc = _projection(generator, 2, hidden, size, size)
    sho = sho_conv_lstm_step(x, prev, h_enc, CellParams.from_stacked(stacked, bias))
    plain = conv_lstm_step(
        x, prev, CellParams.from_stacked(stacked[:, : inputs + hidden], bias)
    )
    cell_gap = max(
        (sho.hidden - plain.hidden).abs().max().item(),
        (sho.cell - plain.cell).abs().max().item(),
    )

    identity = LossConfig(l1_filter=L1Filter.IDENTITY)
    p, p_hat = _frame_pair(generator, 16)
    l1_gap = abs(filtered_error(p, p_hat, identity).mean().item() - l1_loss(p, p_hat).item())

    constant = torch.full((1, 1, 16, 16), 0.25, dtype=torch.float64)
    blur_gap = (
        filtered_error(constant, torch.zeros_like(constant), LossConfig()) - 0.25
    ).abs().max().item()

    z = torch.randint(-16, 16, (2, 3, 8, 8), generator=generator).to(torch.float64) / 4
    shift_gap = (min_max_mask(z + 2.5).values - min_max_mask(z).values).abs().max().item()

    return [
        _deviation_check(
            Suite.REDUCTIONS, "sho_with_zero_encoder_kernels", cell_gap, REDUCTION_TOLERANCE
        ),
        _deviation_check(Suite.REDUCTIONS, "identity_l1_filter", l1_gap, REDUCTION_TOLERANCE),
        _deviation_check(Suite.REDUCTIONS, "gaussian_l1_constant_map", blur_gap, REDUCTION_TOLERANCE),
        _deviation_check(Suite.REDUCTIONS, "mask_shift_invariance", shift_gap, 0.0),
    ]


def direct_ssim(p: np.ndarray, p_hat: np.ndarray, cfg: LossConfig) -> float:
    """Evaluate windowed SSIM of two H x W frames with explicit loops."""
    window = gaussian_window(cfg.ssim_window, cfg.ssim_sigma).numpy()
    size = cfg.ssim_window
    c1, c2 = cfg.c1 or 0.0, cfg.c2 or 0.0
    values = []
    for row in range(p.shape[0] - size + 1):
        for col in range(p.shape[1] - size + 1):
            a = p[row : row + size, col : col + size]
            b = p_hat[row : row + size, col : col + size]
            mu_a, mu_b = float((window * a).sum()), float((window * b).sum())
            var_a = float((window * (a - mu_a) ** 2).sum())
            var_b = float((window * (b - mu_b) ** 2).sum())
            cov = float((window * (a - mu_a) * (b - mu_b)).sum())
            values.append(
                (2 * mu_a * mu_b + c1)
                * (2 * cov + c2)
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(values))


def ssim_suite(*, seed: int = 0) -> list[CheckResult]:
    """Compare the convolutional SSIM with a direct evaluation and the constant closed form."""
    rng = np.random.default_rng(seed)
    cfg = LossConfig()
    direct_gap = 0.0
    for _ in range(20):
        p, p_hat = rng.uniform(-1, 1, (2, 16, 16))
        fast = ssim_value(torch.from_numpy(p), torch.from_numpy(p_hat), cfg).item()
        direct_gap = max(direct_gap, abs(fast - direct_ssim(p, p_hat, cfg)))

    closed_gap = 0.0
    c1 = cfg.c1 or 0.0
    for a, b in rng.uniform(-1, 1, (20, 2)):
        frames = [torch.full((16, 16), value, dtype=torch.float64) for value in (a, b)]
        expected = (2 * a * b + c1) / (a**2 + b**2 + c1)
        closed_gap = max(closed_gap, abs(ssim_value(*frames, cfg).item() - expected))
    return [
        _deviation_check(Suite.SSIM, "direct_evaluation", direct_gap, SSIM_TOLERANCE),
        _deviation_check(
            Suite.SSIM, "constant_closed_form", closed_gap, SSIM_CLOSED_FORM_TOLERANCE
        ),
    ]


def pairwise_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Count abnormal-over-normal pairs, ties as one half."""
    positives = [s for s, label in zip(scores, labels, strict=True) if label == 1]
    negatives = [s for s, label in zip(scores, labels, strict=True) if label == 0]
    wins = sum(
        1.0 if pos > neg else 0.5 if pos == neg else 0.0
        for pos in positives
        for neg in negatives
    )
    return wins / (len(positives) * len(negatives))


def auc_suite(*, seed: int = 0) -> list[CheckResult]:
    """Compare roc_auc with the pairwise oracle on random instances with ties."""
    rng = np.random.default_rng(seed)
    gap = 0.0
    for _ in range(200):
        size = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, size)
        labels[0], labels[-1] = 0, 1
        scores = rng.integers(0, 8, size) / 4
        gap = max(gap, abs(roc_auc(scores, labels).auc - pairwise_auc(scores, labels)))

    scores = rng.uniform(0, 1, 40)
    labels = np.r_[np.zeros(20, dtype=int), np.ones(20, dtype=int)]
    reference = roc_auc(scores, labels).auc
    transformed = max(
        abs(roc_auc(np.exp(scores), labels).auc - reference),
        abs(roc_auc(2 * scores + 1, labels).auc - reference),
    )
    return [
        _deviation_check(Suite.AUC, "pairwise_oracle", gap, AUC_TOLERANCE),
        _deviation_check(Suite.AUC, "monotone_invariance", transformed, AUC_TOLERANCE),
    ]


def scoring_suite(*, seed: int = 0) -> list[CheckResult]:
    """Check per-video min-max normalization."""
    rng = np.random.default_rng(seed)
    example_gap = float(np.abs(normalize_scores([0.1, 0.3, 0.2]) - [0.0, 1.0, 0.5]).max())
    constant_gap = float(np.abs(normalize_scores([0.2] * 7)).max())
    extremes_gap = 0.0
    for _ in range(20):
        mae = rng.uniform(0, 1, int(rng.integers(2, 60)))
        scores = normalize_scores(mae)
        extremes_gap = max(
            extremes_gap,
            abs(scores[mae.argmin()]),
            abs(scores[mae.argmax()] - 1.0),
            float(max(0.0, -scores.min(), scores.max() - 1.0)),
        )
    return [
        _deviation_check(Suite.SCORING, "normalization_example", example_gap, 1e-12),
        _deviation_check(Suite.SCORING, "constant_series", constant_gap, 0.0),
        _deviation_check(Suite.SCORING, "exact_extremes", extremes_gap, 0.0),
    ]


def run_suites(
    suites: Iterable[Suite | str] | None = None,
    *,
    seed: int = 0,
    corrupt_gradient: bool = False,
) -> list[CheckResult]:
    """Run the selected suites (all by default) in declaration order."""
    selected = list(Suite) if suites is None else [Suite(suite) for suite in suites]
    results: list[CheckResult] = []
    for suite in Suite:
        if suite not in selected:
            continue
        _LOGGER.info("Running %s checks", suite)
        if suite is Suite.GRADIENTS:
            results += gradient_suite(seed=seed, corrupt=corrupt_gradient)
        elif suite is Suite.REDUCTIONS:
            results += reduction_suite(seed=seed)
        elif suite is Suite.SSIM:
            results += ssim_suite(seed=seed)
        elif suite is Suite.AUC:
            results += auc_suite(seed=seed)
        else:
            results += scoring_suite(seed=seed)
    for result in results:
        _LOGGER.debug("%s", result.describe())
    return results


def ensure_passed(results: Sequence[CheckResult]) -> None:
    """Raise VerificationFailedException naming every failed property."""
    failures = [result for result in results if not result.passed]
    if failures:
        raise VerificationFailedException(
            "; ".join(result.describe() for result in failures)
        )
