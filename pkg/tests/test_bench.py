import pytest

from hanlab.ahe import AheConfig
from hanlab.bench import BenchResult, bench, comm_estimate
from hanlab.bench.reference import COMM_REFERENCE_MB, comm_reference_frame, security_reference_frame
from hanlab.errors import InvalidArgumentError


def test_comm_estimate_single_parameter():
    estimate = comm_estimate(1, AheConfig(ciphertext_len=28))
    assert estimate.bytes_hans == 116
    assert estimate.bytes_plain == 4


@pytest.mark.parametrize("model_size", [1, 616420, 7027860])
def test_comm_ratio_does_not_depend_on_model_size(model_size):
    assert comm_estimate(model_size, AheConfig()).ratio == pytest.approx(29.0)


def test_comm_estimate_rejects_empty_model():
    with pytest.raises(InvalidArgumentError):
        comm_estimate(0, AheConfig())


def test_bench_result_needs_five_trials():
    with pytest.raises(InvalidArgumentError):
        BenchResult("encrypt", 10, 0.1, 4, "cpu")
    with pytest.raises(InvalidArgumentError):
        BenchResult("encrypt", 10, 0.0, 5, "cpu")


@pytest.mark.parametrize("op", ["keygen", "encrypt", "aggregate"])
def test_bench_reports_median(op, bundle):
    results = bench(op, [100, 200], bundle, trials=5, warmup=1)
    assert [r.batch_size for r in results] == [100, 200]
    for r in results:
        assert r.op == op and r.trials == 5 and r.wall_seconds > 0
        assert len(r.all_seconds) == 5
        assert min(r.all_seconds) <= r.wall_seconds <= max(r.all_seconds) or r.wall_seconds == 1e-9


def test_bench_rejects_bad_arguments(bundle):
    with pytest.raises(InvalidArgumentError):
        bench("decrypt", [10], bundle)
    with pytest.raises(InvalidArgumentError):
        bench("encrypt", [10], bundle, trials=3)
    with pytest.raises(InvalidArgumentError):
        bench("encrypt", [0], bundle)


def test_reference_frames():
    frame = security_reference_frame("trained")
    assert list(frame.index) == ["Average", "Maximum differences"]
    assert len(comm_reference_frame()) == len(COMM_REFERENCE_MB)


def _seconds(op, sizes, bundle):
    return {r.batch_size: r.wall_seconds for r in bench(op, sizes, bundle, trials=5, warmup=2)}


@pytest.mark.slow
def test_timings_scale_linearly(trained_micro):
    bundle, _ = trained_micro
    keygen = _seconds("keygen", [100000, 300000], bundle)
    per_scalar = (keygen[300000] / 300000) / (keygen[100000] / 100000)
    assert 0.5 <= per_scalar <= 2.0

    encrypt = _seconds("encrypt", [100000, 300000], bundle)
    assert encrypt[300000] / encrypt[100000] <= 3.5

    aggregate = _seconds("aggregate", [300000], bundle)
    assert encrypt[300000] + aggregate[300000] < 5.0
