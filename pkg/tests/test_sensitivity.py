import math

import numpy as np
import pytest

from intradistill.model import MlpConfig, ParameterSubset, init, zero_out
from intradistill.sensitivity import (
    SensitivityReport,
    approx_sensitivity,
    balance_std,
    exact_sensitivity,
    format_summary,
    histogram,
    loss_and_gradient,
    mean_loss,
    per_parameter_scores,
    read_report,
    summarize,
    top_bottom_track,
    trim_and_sample,
    write_histogram,
    write_report,
)

from oracles import central_difference, mlp_numpy


def setup(seed=0, task="classification"):
    out = 3 if task == "classification" else 1
    params = init(MlpConfig(4, (6,), out, task), seed)
    rng = np.random.default_rng(seed)
    batches = []
    for _ in range(3):
        x = rng.normal(size=(8, 4))
        y = rng.integers(0, 3, size=8) if task == "classification" else rng.normal(size=8)
        batches.append((x, y))
    return params, batches


def oracle_loss(params, batches, flat=None):
    p = params if flat is None else params.with_flat(flat)
    segs = [a for _, a in p.segments]
    losses = []
    for x, y in batches:
        out = mlp_numpy(segs, x, p.config.task == "classification")
        if p.config.task == "classification":
            losses.append(-out[np.arange(len(y)), y].mean())
        else:
            losses.append(((out[:, 0] - y) ** 2).mean())
    return float(np.mean(losses))


def test_single_parameter_hand_example():
    params = init(MlpConfig(1, (), 1, "regression"), 0)
    params = params.with_flat(np.array([2.0, 0.0]))
    assert approx_sensitivity(params, [0.3, 9.0], ParameterSubset([0])) == pytest.approx(0.6)


def test_zero_gradient_gives_zero():
    params, _ = setup()
    zeros = np.zeros(params.total_count)
    assert approx_sensitivity(params, zeros, ParameterSubset(range(10))) == 0.0


def test_approx_rejects_misaligned():
    params, _ = setup()
    with pytest.raises(ValueError):
        approx_sensitivity(params, np.zeros(3), ParameterSubset([0]))


@pytest.mark.parametrize("task", ["classification", "regression"])
def test_mean_loss_and_gradient_match_oracle(task):
    params, batches = setup(1, task)
    loss, grad = loss_and_gradient(params, batches)
    assert loss == pytest.approx(oracle_loss(params, batches), rel=1e-12)
    assert mean_loss(params, batches) == pytest.approx(loss, rel=1e-12)
    num = central_difference(lambda f: oracle_loss(params, batches, f), params.flat())
    np.testing.assert_allclose(grad, num, rtol=1e-5, atol=1e-8)


def test_exact_sensitivity_matches_brute_force():
    params, batches = setup(2)
    subset = ParameterSubset([0, 5, 30])
    brute = abs(oracle_loss(params, batches) - oracle_loss(zero_out(params, subset), batches))
    assert exact_sensitivity(params, subset, batches) == pytest.approx(brute, rel=1e-12)
    with pytest.raises(ValueError):
        exact_sensitivity(params, ParameterSubset([]), batches)


def test_first_order_gap_shrinks_with_scale():
    params, batches = setup(3)
    idx = 7
    gaps = []
    for eps in (1e-1, 1e-2, 1e-3):
        flat = params.flat()
        flat[idx] *= eps
        scaled = params.with_flat(flat)
        _, grad = loss_and_gradient(scaled, batches)
        s = ParameterSubset([idx])
        gaps.append(abs(exact_sensitivity(scaled, s, batches) - approx_sensitivity(scaled, grad, s)) / eps)
    assert gaps[0] > gaps[1] > gaps[2]


def test_scores_definition_and_singleton_agreement():
    params, batches = setup(4)
    report = per_parameter_scores(params, batches)
    _, grad = loss_and_gradient(params, batches)
    np.testing.assert_array_equal(report.scores, np.abs(params.flat() * grad))
    for i in (0, 12, params.total_count - 1):
        assert report.scores[i] == approx_sensitivity(params, grad, ParameterSubset([i]))
    assert report.batch_count == 3


def test_zero_model_has_zero_scores():
    params, batches = setup()
    zero = params.with_flat(np.zeros(params.total_count))
    assert not per_parameter_scores(zero, batches).scores.any()


def test_balance_std_is_population_std():
    rep = SensitivityReport(np.array([0.0, 2.0]), 1)
    assert balance_std(rep) == 1.0
    with pytest.raises(ValueError):
        SensitivityReport(np.array([-1.0]), 1)


def test_visualization_summary_uses_trimmed_sample():
    params, batches = setup(5)
    rep = per_parameter_scores(params, batches, visualization=True, trim=0.1, sample=0.5, seed=1)
    assert rep.visualization
    n = params.total_count
    kept = n - math.floor(0.1 * n)
    assert rep.summary.count == round(0.5 * kept)
    assert rep.scores.size == n
    assert rep.summary_scores.max() <= np.sort(rep.scores)[kept - 1]


def test_trim_and_sample():
    s = np.arange(100, dtype=float)
    assert trim_and_sample(s, 0.01, 1.0, 0).max() == 98.0
    a = trim_and_sample(s, 0.0, 0.1, 3)
    assert a.size == 10 and np.array_equal(a, trim_and_sample(s, 0.0, 0.1, 3))
    with pytest.raises(ValueError):
        trim_and_sample(s, 1.0, 0.5, 0)


def test_summarize():
    s = summarize(np.array([1.0, 1.0, 1.0, 1.0, 6.0]))
    assert s.count == 5 and s.mean == 2.0 and s.std == 2.0
    assert s.top_share == pytest.approx(0.6)
    assert s.percentiles[50] == 1.0
    with pytest.raises(ValueError):
        summarize(np.array([]))
    assert "std" in format_summary(s)


def test_top_bottom_track():
    reps = [SensitivityReport(np.array([5.0, 1.0, 1.0, 1.0, 1.0]), 1)]
    assert top_bottom_track(reps) == [(5.0, 1.0)]
    top, rest = top_bottom_track([SensitivityReport(np.array([3.0]), 1)])[0]
    assert top == 3.0 and math.isnan(rest)
    with pytest.raises(ValueError):
        top_bottom_track([])


def test_report_roundtrip(tmp_path):
    params, batches = setup(6)
    rep = per_parameter_scores(params, batches)
    write_report(tmp_path / "r.tsv", rep, params)
    back = read_report(tmp_path / "r.tsv")
    np.testing.assert_array_equal(back.scores, rep.scores)
    first = (tmp_path / "r.tsv").read_text().splitlines()[1]
    assert first.split("\t")[:2] == ["0", "layer0.weight"]


def test_histogram(tmp_path):
    rows = histogram(np.array([0.0, 0.5, 1.0, 1.0]), bins=2)
    assert [r[2] for r in rows] == [1, 3]
    text = write_histogram(tmp_path / "h.csv", rows).read_text()
    assert text.startswith("bin_left,bin_right,count")
