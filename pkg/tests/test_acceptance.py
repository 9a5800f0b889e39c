"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Directional criteria (6-9) train on the bundled ``toy_classification``
config with seeds fixed in advance (0..N-1); nothing here searches seeds.
"""
import itertools
import time

import numpy as np
import pytest

from intradistill.analysis import prune_sweep
from intradistill.autodiff import Graph, RngStream
from intradistill.config import apply_overrides, load_config, with_seed
from intradistill.model import MlpConfig, ParameterSubset, draw_masks, forward, init
from intradistill.objective import (
    DistributionBatch,
    divergence_halves,
    generalized_jeffrey,
    intra_node,
    kl,
    mean_of,
    nll_node,
    x_divergence,
)
from intradistill.schedule import AlphaSchedule, alpha_at
from intradistill.sensitivity import (
    approx_sensitivity,
    balance_std,
    exact_sensitivity,
    loss_and_gradient,
    per_parameter_scores,
)
from intradistill.trainer import train_intra_distill, train_self_distill, train_standard

from oracles import central_difference, dirichlet_batch, grad_mismatch, mlp_numpy, preactivations, xdiv_loop


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[acceptance] criterion {number:>2}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, f"criterion {number}: {detail}"

    return emit


def test_c01_divergence_bound(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_total = worst_fwd = worst_rev = -np.inf
    for _ in range(1000):
        k, dims = int(rng.integers(2, 7)), int(rng.integers(2, 11))
        d = DistributionBatch(dirichlet_batch(rng, k, 3, dims, conc=float(rng.choice([0.3, 1.0, 3.0]))))
        worst_total = max(worst_total, x_divergence(d) - generalized_jeffrey(d) / k**2)
        h = divergence_halves(d)
        worst_fwd = max(worst_fwd, h.forward - h.forward_bound)
        worst_rev = max(worst_rev, h.reverse - h.reverse_bound)
    elapsed = time.perf_counter() - start
    ok = max(worst_total, worst_fwd, worst_rev) <= 1e-9 and elapsed < 5.0
    report(1, ok, f"max slack violation total={worst_total:.3g} fwd={worst_fwd:.3g} rev={worst_rev:.3g}, {elapsed:.2f}s")


def test_c02_divergence_identities(report):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    single = dirichlet_batch(rng, 1, 5, 6)
    same = abs(x_divergence(DistributionBatch(np.repeat(single, 4, axis=0))))
    u = np.full(6, 1 / 6)
    self_kl = kl(u, u)
    d = DistributionBatch(dirichlet_batch(rng, 3, 5, 6))
    base = x_divergence(d)
    perm_gap = max(abs(x_divergence(d.permuted(o)) - base) for o in itertools.permutations(range(3)))
    elapsed = time.perf_counter() - start
    ok = same <= 1e-12 and self_kl == 0.0 and perm_gap <= 1e-12 and elapsed < 1.0
    report(2, ok, f"identical={same:.1e} kl(u,u)={self_kl} perm_gap={perm_gap:.1e}, {elapsed:.3f}s")


def test_c03_schedule_anchors(report):
    start = time.perf_counter()
    s = AlphaSchedule(5.0, 5.0, 10.0, 50000)
    a0, a5k = alpha_at(s, 0), alpha_at(s, 5000)
    flat = all(alpha_at(s, x) == 5.0 for x in range(10000, 50001, 97))
    grid = [alpha_at(s, int(x)) for x in np.linspace(0, 50000, 1000).round()]
    monotone = all(b >= a for a, b in zip(grid, grid[1:]))
    lin = AlphaSchedule(5.0, 5.0, 25.0, 50000)
    vals = np.array([alpha_at(lin, x) for x in range(0, 10000, 10)])
    second = float(np.max(np.abs(np.diff(vals, 2))))
    elapsed = time.perf_counter() - start
    ok = a0 == 0.0 and abs(a5k - 1.0) <= 5e-3 and flat and monotone and second < 1e-9 and elapsed < 1.0
    report(3, ok, f"a(0)={a0} a(5000)={a5k:.6f} flat={flat} monotone={monotone} lin2nd={second:.1e}, {elapsed:.3f}s")


def _random_problem(rng):
    """A random small classifier with a kink-free batch and two fixed mask sets."""
    input_dim = int(rng.integers(2, 5))
    hidden = tuple(int(h) for h in rng.integers(2, 6, size=int(rng.integers(1, 3))))
    classes = int(rng.integers(2, 5))
    cfg = MlpConfig(input_dim, hidden, classes, "classification", 0.3)
    params = init(cfg, int(rng.integers(0, 2**31)))
    # nonzero biases so the check also covers bias gradients in general position
    params = params.with_flat(params.flat() + rng.normal(scale=0.3, size=params.total_count))
    segs = [a for _, a in params.segments]
    while True:
        x = rng.normal(size=(int(rng.integers(2, 6)), input_dim))
        if all(np.min(np.abs(z)) > 1e-3 for z in preactivations(segs, x)):
            break
    y = rng.integers(0, classes, size=len(x))
    masks = [draw_masks(cfg, len(x), RngStream(int(rng.integers(0, 2**31)), i)) for i in range(2)]
    alpha = float(rng.uniform(0.5, 5.0))
    return params, x, y, masks, alpha


def _oracle_objective(params, flat, x, y, masks, alpha):
    segs = [a for _, a in params.with_flat(flat).segments]
    outs = [mlp_numpy(segs, x, True, [m.scaled() for m in ms]) for ms in masks]
    task = np.mean([-o[np.arange(len(y)), y].mean() for o in outs])
    return task + alpha * xdiv_loop(np.exp(np.stack(outs)))


def test_c04_gradient_correctness(report):
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    bad_models = bad_entries = checked = 0
    for _ in range(100):
        params, x, y, masks, alpha = _random_problem(rng)
        g = Graph()
        leaves = [g.leaf(a) for _, a in params.segments]
        outs = [forward(params, x, ms, g, leaves) for ms in masks]
        task = mean_of(g, [nll_node(g, o, y) for o in outs])
        root = g.add(task, g.scale(intra_node(g, outs, "x"), alpha))
        grads = g.backward(root, wrt=leaves)
        analytic = np.concatenate([grads[t].reshape(-1) for t in leaves])
        numeric = central_difference(lambda f: _oracle_objective(params, f, x, y, masks, alpha), params.flat())
        wrong = int(grad_mismatch(analytic, numeric, rel=1e-4, floor=1e-8).sum())
        bad_entries += wrong
        bad_models += wrong > 0
        checked += analytic.size
    elapsed = time.perf_counter() - start
    ok = bad_entries == 0 and elapsed < 30.0
    report(4, ok, f"{bad_entries}/{checked} entries off in {bad_models}/100 models, {elapsed:.1f}s")


def test_c05_sensitivity_consistency(report):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    cfg = MlpConfig(6, (12,), 4, "classification")
    base = init(cfg, 3)
    base = base.with_flat(base.flat() + rng.normal(scale=0.1, size=base.total_count))
    batches = [(rng.normal(size=(16, 6)), rng.integers(0, 4, size=16)) for _ in range(4)]
    eps_values = (1e-1, 1e-2, 1e-3)
    gaps = {e: [] for e in eps_values}
    for idx in rng.choice(base.total_count, 50, replace=False):
        subset = ParameterSubset([int(idx)])
        for e in eps_values:
            flat = base.flat()
            flat[idx] *= e
            scaled = base.with_flat(flat)
            _, grad = loss_and_gradient(scaled, batches)
            approx = approx_sensitivity(scaled, grad, subset)
            exact = exact_sensitivity(scaled, subset, batches)
            gaps[e].append(abs(exact - approx) / approx if approx > 0 else np.inf)
    medians = [float(np.median(gaps[e])) for e in eps_values]
    elapsed = time.perf_counter() - start
    ok = medians[0] > medians[1] > medians[2] and elapsed < 30.0
    report(5, ok, "median rel gap " + " > ".join(f"{m:.2e}" for m in medians) + f", {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# paired toy runs shared by criteria 6 and 7

PAIR_SEEDS = range(5)


@pytest.fixture(scope="module")
def paired_runs():
    base_cfg = load_config("toy_classification")
    rows = []
    for seed in PAIR_SEEDS:
        started = time.perf_counter()
        cfg = with_seed(base_cfg, seed)
        data = cfg.make_data()
        pool = data.valid.sample_batches(cfg.analysis.eval_batches, cfg.analysis.eval_batch_size, cfg.analysis.pool_seed)
        baseline = train_standard(cfg.train_config(), data).params
        intra = train_intra_distill(apply_overrides(cfg, ["mode=intra"]).train_config(), data).params
        row = {"seed": seed}
        for tag, params in (("base", baseline), ("intra", intra)):
            rep = per_parameter_scores(params, pool)
            row[f"{tag}_std"] = balance_std(rep)
            row[f"{tag}_drop"] = prune_sweep(params, rep, data.valid, [0.0, 0.5]).drop_at(0.5)
        row["seconds"] = time.perf_counter() - started
        rows.append(row)
    return rows


@pytest.mark.slow
def test_c06_balance_effect(report, paired_runs):
    wins = sum(r["intra_std"] < r["base_std"] for r in paired_runs)
    slowest = max(r["seconds"] for r in paired_runs)
    ratios = ", ".join(f"{r['intra_std'] / r['base_std']:.2f}" for r in paired_runs)
    report(6, wins >= 4 and slowest <= 120.0, f"intra std lower in {wins}/5 pairs (ratios {ratios}), slowest pair {slowest:.1f}s")


@pytest.mark.slow
def test_c07_pruning_contrast(report, paired_runs):
    wins = sum(r["intra_drop"] > r["base_drop"] for r in paired_runs)
    drops = ", ".join(f"{r['base_drop']:.3f}/{r['intra_drop']:.3f}" for r in paired_runs)
    report(7, wins >= 4, f"intra drop larger in {wins}/5 pairs (base/intra drop at 0.5: {drops})")


@pytest.mark.slow
def test_c08_adaptive_alpha_convergence(report):
    base_cfg = apply_overrides(load_config("toy_classification"), ["mode=intra", "alpha=5"])
    at = base_cfg.trainer.steps // 10
    diffs = []
    for seed in range(3):
        cfg = with_seed(base_cfg, seed)
        data = cfg.make_data()
        adaptive = train_intra_distill(cfg.train_config(), data).metrics.valid_loss_at(at)
        constant = train_intra_distill(apply_overrides(cfg, ["adaptive=false"]).train_config(), data).metrics.valid_loss_at(at)
        diffs.append(adaptive - constant)
    med = float(np.median(diffs))
    report(8, med < 0, f"median(adaptive - constant) valid loss at update {at} = {med:.4f} over 3 seeds")


@pytest.mark.slow
def test_c09_self_distillation_balance(report):
    base_cfg = load_config("toy_classification")
    per_seed = []
    for seed in range(5):
        cfg = with_seed(base_cfg, seed)
        data = cfg.make_data()
        pool = data.valid.sample_batches(cfg.analysis.eval_batches, cfg.analysis.eval_batch_size, cfg.analysis.pool_seed)
        tc = cfg.train_config()
        model = train_standard(tc, data).params
        stds = [balance_std(per_parameter_scores(model, pool))]
        for _ in range(2):
            model = train_self_distill(tc, data, model).params
            stds.append(balance_std(per_parameter_scores(model, pool)))
        per_seed.append(stds)
    med = np.median(np.array(per_seed), axis=0)
    ok = bool(med[0] >= med[1] >= med[2])
    report(9, ok, "median std teacher/round1/round2 = " + " / ".join(f"{m:.3e}" for m in med))


def test_c10_degenerate_reductions(report):
    cfg = load_config("toy_classification")
    data = cfg.make_data()
    std_metrics = train_standard(cfg.train_config(), data).metrics
    intra_cfg = apply_overrides(cfg, ["mode=intra", "alpha=0", "trainer.shared_masks=true"])
    intra_metrics = train_intra_distill(intra_cfg.train_config(), data).metrics
    same_steps = [(s.step, s.task_loss) for s in std_metrics.steps] == [(s.step, s.task_loss) for s in intra_metrics.steps]
    same_ckpt = std_metrics.checkpoints == intra_metrics.checkpoints
    nodrop = apply_overrides(cfg, ["mode=intra", "dropout=0", "k=3"])
    worst_intra = max(s.intra_loss for s in train_intra_distill(nodrop.train_config(), data).metrics.steps)
    ok = same_steps and same_ckpt and worst_intra < 1e-10
    report(10, ok, f"step losses identical={same_steps} checkpoints identical={same_ckpt} max intra at rate 0={worst_intra:.1e}")
