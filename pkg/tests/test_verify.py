import numpy as np
import pytest

from cffnet.collab import gamma_grad_batch
from cffnet.errors import ContractError
from cffnet.mathcore import Rng
from cffnet.verify import (
    finite_diff_scalar,
    grad_check_gamma,
    grad_check_layer,
    random_tiny_case,
    relative_error,
    run_check_suite,
)


def test_fd_square():
    assert finite_diff_scalar(lambda x: x * x, 3.0) == pytest.approx(6.0, abs=1e-9)


def test_fd_constant():
    assert finite_diff_scalar(lambda x: 5.0, 1.0) == 0.0


@pytest.mark.parametrize("h", [0.0, -1e-5])
def test_fd_rejects_bad_step(h):
    with pytest.raises(ContractError):
        finite_diff_scalar(lambda x: x, 0.0, h)


def test_fd_second_order():
    # central differences on exp(x): error shrinks ~4x when h halves
    errs = [abs(finite_diff_scalar(np.exp, 0.5, h) - np.exp(0.5)) for h in (1e-2, 5e-3)]
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_relative_error_floor():
    assert relative_error(1e-7, 2e-7) == pytest.approx(1e-5)
    assert relative_error(2.0, 1.0) == 0.5


def test_dead_layer_passes_trivially():
    net, batch = random_tiny_case(Rng(0))
    net.layers[1].W[:] = 0.0
    net.layers[1].b[:] = -1.0
    r = grad_check_layer(net, batch, 1)
    assert r.passed and r.max_relative_error == 0.0


def test_layer_and_gamma_checks_pass():
    net, batch = random_tiny_case(Rng(1))
    for l in range(3):
        assert grad_check_layer(net, batch, l).passed
        assert grad_check_gamma(net, batch, l).passed


def test_kinks_are_excluded_and_counted():
    net, batch = random_tiny_case(Rng(2))
    # put one unit of layer 0 exactly on its kink for the first positive sample
    layer = net.layers[0]
    x0 = batch.x_pos[0] / (np.linalg.norm(batch.x_pos[0]) + 1e-8)
    layer.b[0] = -float(layer.W[0] @ x0)
    r = grad_check_layer(net, batch, 0)
    assert r.excluded > 0
    assert r.checked + r.excluded == layer.W.size + layer.b.size


def test_suite_small():
    s = run_check_suite(cases=4, seed=3)
    assert s.passed
    assert s.report.cases_run == 4 and len(s.layer_reports) == 12
    assert s.report.full_mode_max_relative_error >= s.report.max_relative_error


def test_suite_deterministic():
    a, b = run_check_suite(cases=3, seed=9), run_check_suite(cases=3, seed=9)
    assert a.report.max_relative_error == b.report.max_relative_error
    assert a.report.worst_parameter_index == b.report.worst_parameter_index


def test_tiny_tolerance_fails():
    assert not run_check_suite(cases=2, tol=1e-12).passed


def test_mutated_gamma_gradient_is_caught():
    def flipped(*args):
        return -gamma_grad_batch(*args)

    s = run_check_suite(cases=3, gamma_grad_fn=flipped)
    assert not s.gamma_report.passed and not s.passed


def test_suite_rejects_zero_cases():
    with pytest.raises(ContractError):
        run_check_suite(cases=0)
