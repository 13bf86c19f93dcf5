"""Tests for the oracle suites."""

import numpy as np
import pytest
import torch

from vadlstm.const import Suite
from vadlstm.exceptions import VerificationFailedException
from vadlstm.losses import ssim_value
from vadlstm.model import LossConfig
from vadlstm.verify import (
    CheckResult,
    direct_ssim,
    ensure_passed,
    gradient_error,
    pairwise_auc,
    run_suites,
)


def test_gradient_error_of_polynomial() -> None:
    """Test the finite-difference check and its negative control."""
    x = torch.linspace(-1, 1, 7, dtype=torch.float64)

    def objective(value: torch.Tensor) -> torch.Tensor:
        return (value**3).sum()

    assert gradient_error(objective, [x]) < 1e-8
    assert gradient_error(objective, [x], corrupt=True) > 1e-3


def test_direct_ssim_matches_convolution() -> None:
    """Test the loop evaluation against the convolutional one."""
    rng = np.random.default_rng(2)
    p, p_hat = rng.uniform(-1, 1, (2, 13, 15))
    cfg = LossConfig()
    fast = ssim_value(torch.from_numpy(p), torch.from_numpy(p_hat), cfg).item()
    assert direct_ssim(p, p_hat, cfg) == pytest.approx(fast, abs=1e-9)


def test_pairwise_auc() -> None:
    """Test pair counting with a tie."""
    assert pairwise_auc([0.3, 0.5, 0.5], [0, 0, 1]) == pytest.approx(0.75)


@pytest.mark.parametrize("suite", [suite for suite in Suite if suite is not Suite.GRADIENTS])
def test_suite_passes(suite: Suite) -> None:
    """Test that every property holds for the shipped implementation."""
    results = run_suites([suite], seed=3)
    assert results
    assert {result.suite for result in results} == {suite}
    failed = [result.describe() for result in results if not result.passed]
    assert not failed


def test_gradient_suite_passes_and_catches_corruption() -> None:
    """Test autograd against central differences, then the negative control."""
    results = run_suites(["gradients"])
    assert [result.name for result in results] == [
        "conv_lstm_step",
        "sho_conv_lstm_step",
        "attention_weights",
        "ssim_loss",
        "l1_loss",
        "mixed_loss",
    ]
    ensure_passed(results)
    corrupted = run_suites(["gradients"], corrupt_gradient=True)
    assert not any(result.passed for result in corrupted)


def test_ensure_passed_names_failures() -> None:
    """Test the failure message."""
    results = [
        CheckResult(Suite.AUC, "pairwise_oracle", True, 0.0, 0.0, 1e-9),
        CheckResult(Suite.SSIM, "direct_evaluation", False, 0.5, 0.0, 1e-6),
    ]
    with pytest.raises(VerificationFailedException, match=r"\[ssim\] direct_evaluation: FAILED"):
        ensure_passed(results)
    ensure_passed(results[:1])
