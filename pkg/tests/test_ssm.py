import math

import numpy as np
import pytest

from voxmamba.autodiff import tensor as T
from voxmamba.autodiff.module import initialize
from voxmamba.autodiff.tensor import Tensor
from voxmamba.errors import ConfigurationError, ContractError, SingularDiscretizationError
from voxmamba.ssm import bench
from voxmamba.ssm.bench import benchmark_scans
from voxmamba.ssm.discretize import (
    DiscretizedParams,
    default_state_size,
    discretize_zoh,
    select_params,
)
from voxmamba.ssm.s6 import S6, s6_forward
from voxmamba.ssm.scan import (
    scan_chunked,
    scan_sequential,
    selective_scan,
    states_chunked,
    states_sequential,
)


def random_scan_inputs(rng, batch, length, channels, n_state, requires_grad=False):
    x = Tensor(rng.normal(size=(batch, length, channels)), requires_grad=requires_grad)
    a_bar = Tensor(rng.uniform(0.1, 0.99, size=(batch, length, channels, n_state)), requires_grad=requires_grad)
    b_bar = Tensor(rng.normal(size=(batch, length, channels, n_state)), requires_grad=requires_grad)
    c = Tensor(rng.normal(size=(batch, length, n_state)), requires_grad=requires_grad)
    return x, DiscretizedParams(a_bar, b_bar), c


def selective_inputs(rng, batch=2, length=6, channels=3, n_state=4):
    x = Tensor(rng.normal(size=(batch, length, channels)), requires_grad=True)
    delta = Tensor(rng.uniform(0.05, 0.5, size=(batch, length, channels)), requires_grad=True)
    a = Tensor(-rng.uniform(0.5, 2.0, size=(channels, n_state)), requires_grad=True)
    b = Tensor(rng.normal(size=(batch, length, n_state)), requires_grad=True)
    c = Tensor(rng.normal(size=(batch, length, n_state)), requires_grad=True)
    return x, delta, a, b, c


# Discrétisation

def test_zoh_golden_value(float64):
    params = discretize_zoh(Tensor([[-1.0]]), Tensor([[1.0]]), Tensor([[math.log(2.0)]]))
    assert abs(params.A_bar.data.item() - 0.5) < 1e-12
    assert abs(params.B_bar.data.item() - 0.5) < 1e-12


def test_zoh_shapes(float64, rng):
    A = Tensor(-rng.uniform(0.5, 1.0, size=(3, 4)))
    B = Tensor(rng.normal(size=(2, 5, 4)))
    delta = Tensor(rng.uniform(0.1, 1.0, size=(2, 5, 3)))
    params = discretize_zoh(A, B, delta)
    assert params.A_bar.shape == (2, 5, 3, 4)
    assert params.B_bar.shape == (2, 5, 3, 4)
    assert np.all((params.A_bar.data > 0) & (params.A_bar.data < 1))


def test_zoh_rejects_zero_state_and_non_positive_step():
    with pytest.raises(SingularDiscretizationError):
        discretize_zoh(Tensor([[0.0]]), Tensor([[1.0]]), Tensor([[0.1]]))
    with pytest.raises(ContractError):
        discretize_zoh(Tensor([[-1.0]]), Tensor([[1.0]]), Tensor([[0.0]]))


def test_zoh_gradient(float64, seeded_rng, grad_error):
    A = Tensor(-seeded_rng.uniform(0.5, 1.5, size=(2, 3)), requires_grad=True)
    B = Tensor(seeded_rng.normal(size=(4, 3)), requires_grad=True)
    delta = Tensor(seeded_rng.uniform(0.1, 1.0, size=(4, 2)), requires_grad=True)

    def loss():
        params = discretize_zoh(A, B, delta)
        return T.sum(T.add(T.square(params.A_bar), params.B_bar))

    assert grad_error(loss, [A, B, delta]) < 1e-4


def test_default_state_size_is_capped():
    assert default_state_size(16) == 16
    assert default_state_size(512) == 256


# Balayage

def test_scan_hand_unrolled_recurrence(float64):
    ones = np.ones((3, 1, 1))
    params = DiscretizedParams(Tensor(0.5 * ones), Tensor(0.5 * ones))
    y = scan_sequential(Tensor(np.ones((3, 1))), params, Tensor(np.ones((3, 1))))
    np.testing.assert_allclose(y.data[:, 0], [0.5, 0.75, 0.875], atol=1e-15)


def test_chunked_matches_sequential_on_random_cases(float64):
    rng = np.random.default_rng(0)
    for _ in range(50):
        length = int(rng.integers(1, 1025))
        n_state = int(rng.integers(1, 33))
        chunk = int(rng.integers(1, 129))
        x, params, c = random_scan_inputs(rng, 1, length, 2, n_state)
        ref = scan_sequential(x, params, c).data
        out = scan_chunked(x, params, c, chunk=chunk).data
        assert np.max(np.abs(out - ref)) < 1e-10


@pytest.mark.parametrize("chunk", [1, 7, 64])
def test_chunk_bounds_reproduce_sequential_bitwise(float64, rng, chunk):
    a = rng.uniform(0.1, 0.99, size=(1, 7, 2, 3))
    u = rng.normal(size=(1, 7, 2, 3))
    np.testing.assert_array_equal(states_chunked(a, u, chunk=chunk), states_sequential(a, u))


def test_chunked_with_workers_matches_single_worker(float64, rng):
    a = rng.uniform(0.1, 0.99, size=(1, 100, 6, 3))
    u = rng.normal(size=(1, 100, 6, 3))
    np.testing.assert_array_equal(
        states_chunked(a, u, chunk=16, workers=3), states_chunked(a, u, chunk=16, workers=1)
    )


def test_chunk_must_be_positive(rng):
    x, params, c = random_scan_inputs(rng, 1, 4, 1, 2)
    with pytest.raises(ContractError):
        scan_chunked(x, params, c, chunk=0)


def test_scan_gradient(float64, seeded_rng, grad_error):
    x, params, c = random_scan_inputs(seeded_rng, 2, 9, 2, 3, requires_grad=True)
    leaves = [x, params.A_bar, params.B_bar, c]
    assert grad_error(lambda: T.sum(T.square(scan_chunked(x, params, c, chunk=4))), leaves) < 1e-4


def test_scan_is_causal(float64, rng):
    x, params, c = random_scan_inputs(rng, 1, 12, 2, 3)
    base = scan_sequential(x, params, c).data
    x.data[0, 8] += 1.0
    moved = scan_sequential(x, params, c).data
    np.testing.assert_array_equal(moved[0, :8], base[0, :8])
    assert np.any(moved[0, 8:] != base[0, 8:])


def test_selective_scan_matches_discretize_then_scan(float64, rng):
    x, delta, a, b, c = selective_inputs(rng)
    fused = selective_scan(x, delta, a, b, c).data
    reference = scan_sequential(x, discretize_zoh(a, b, delta), c).data
    np.testing.assert_allclose(fused, reference, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(selective_scan(x, delta, a, b, c, chunk=4).data, reference, atol=1e-12)


@pytest.mark.parametrize("chunk", [None, 4])
def test_selective_scan_gradient(float64, seeded_rng, grad_error, chunk):
    leaves = selective_inputs(seeded_rng)
    target = Tensor(seeded_rng.normal(size=(2, 6, 3)))
    assert grad_error(lambda: T.sum(T.mul(selective_scan(*leaves, chunk=chunk), target)), list(leaves)) < 1e-4


def test_selective_scan_large_step_is_memoryless(float64, rng):
    x, _, _, b, c = selective_inputs(rng)
    delta = Tensor(np.full(x.shape, 50.0))
    a = Tensor(np.full((3, 4), -10.0))
    y = selective_scan(x, delta, a, b, c).data
    gain = np.expm1(-500.0) / -10.0
    expected = np.einsum("bln,bld->bld", c.data * b.data * gain, x.data)
    np.testing.assert_allclose(y, expected, atol=1e-12)


def test_states_stay_bounded_on_long_stream():
    rng = np.random.default_rng(5)
    length = 100_000
    a = rng.uniform(0.0, 0.9, size=(1, length, 1, 1))
    u = rng.uniform(-1.0, 1.0, size=(1, length, 1, 1))
    h = states_sequential(a, u)
    assert np.max(np.abs(h)) <= np.max(np.abs(u)) / (1.0 - 0.9) + 1e-9


# S6

def test_s6_initialisation():
    s6 = initialize(S6(4, 3), seed=0, dtype=np.float64)
    np.testing.assert_allclose(np.exp(s6.a_log.data), np.tile([1.0, 2.0, 3.0], (4, 1)))
    dt = np.logaddexp(0.0, s6.dt_bias.data)
    assert np.all((dt >= 1e-3 - 1e-12) & (dt <= 1e-1 + 1e-12))


def test_select_params_contract(float64, rng):
    s6 = initialize(S6(4, 3), seed=0)
    params = select_params(Tensor(rng.normal(size=(2, 5, 4))), s6)
    assert params.B.shape == (2, 5, 3) and params.C.shape == (2, 5, 3)
    assert params.delta.shape == (2, 5, 4)
    assert np.all(params.delta.data > 0)
    assert np.all(params.A.data < 0)
    assert params.n_state == 3 and params.d_model == 4


def test_s6_single_token_reduces_to_pointwise_map(float64, rng):
    s6 = initialize(S6(3, 2), seed=1)
    x = Tensor(rng.normal(size=(1, 1, 3)))
    params = select_params(x, s6)
    disc = discretize_zoh(params.A, params.B, params.delta)
    expected = np.einsum("n,dn,d->d", params.C.data[0, 0], disc.B_bar.data[0, 0], x.data[0, 0])
    np.testing.assert_allclose(s6_forward(x, s6).data[0, 0], expected, rtol=1e-12)


def test_s6_gradient(float64, seeded_rng, grad_error):
    s6 = initialize(S6(3, 2), seed=2)
    x = Tensor(seeded_rng.normal(size=(2, 5, 3)), requires_grad=True)
    leaves = [x, s6.b_proj.weight, s6.dt_proj.weight, s6.dt_bias, s6.a_log]
    assert grad_error(lambda: T.sum(T.square(s6_forward(x, s6))), leaves) < 1e-4


def test_s6_chunked_matches_sequential(float64, rng):
    x = Tensor(rng.normal(size=(1, 40, 4)))
    seq = initialize(S6(4, 3), seed=3)
    chunked = initialize(S6(4, 3, chunk=8, workers=2), seed=3)
    np.testing.assert_allclose(chunked(x).data, seq(x).data, atol=1e-10)


# Banc d'essai

def test_benchmark_report_contract():
    report = benchmark_scans([64, 128, 256], repeats=2, chunk=16)
    assert [r["length"] for r in report.rows] == [64, 128, 256]
    assert all(r["max_abs_diff"] < 1e-10 for r in report.rows)
    assert 0.0 <= report.r_squared <= 1.0
    assert set(report.to_dict()) == {"rows", "sequential_fit", "chunked_fit", "settings"}


def test_benchmark_times_the_public_scan_operations(monkeypatch):
    calls = {"sequential": 0, "chunked": 0}

    def counted(name, op):
        def wrapper(*args, **kwargs):
            calls[name] += 1
            return op(*args, **kwargs)
        return wrapper

    monkeypatch.setattr(bench, "scan_sequential", counted("sequential", bench.scan_sequential))
    monkeypatch.setattr(bench, "scan_chunked", counted("chunked", bench.scan_chunked))
    benchmark_scans([32, 64], repeats=3, chunk=8)
    # un appel de contrôle plus les répétitions chronométrées, par longueur
    assert calls == {"sequential": 8, "chunked": 8}


def test_benchmark_needs_two_lengths():
    with pytest.raises(ConfigurationError):
        benchmark_scans([64], repeats=1)


@pytest.mark.slow
def test_sequential_scan_time_is_linear_in_length():
    report = benchmark_scans([2 ** e for e in range(10, 21)], repeats=10)
    assert report.r_squared > 0.99


@pytest.mark.slow
def test_chunked_scan_keeps_up_with_sequential_at_a_million_tokens():
    report = benchmark_scans([2 ** 19, 2 ** 20], repeats=3, workers=2)
    longest = report.rows[-1]
    assert longest["length"] == 2 ** 20
    assert longest["chunked_s"] <= longest["sequential_s"]


@pytest.mark.slow
def test_states_stay_bounded_on_million_token_stream():
    rng = np.random.default_rng(6)
    a = rng.uniform(0.0, 0.9, size=(1, 1_000_000, 1, 1))
    u = rng.uniform(-1.0, 1.0, size=(1, 1_000_000, 1, 1))
    assert np.max(np.abs(states_sequential(a, u))) <= 10.0 + 1e-9
