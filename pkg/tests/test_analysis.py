import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chi2_contingency

from skipdiff.analysis import (
    ContingencyTable2x2,
    accumulation_curve,
    bound_inputs,
    build_contingency,
    chi2_2x2,
    error_bound_report,
    h_coefficient,
    k_step_error_bound,
    one_step_skip_error_exact,
    path_histogram,
    third_order_relation_trace,
    write_histogram_csv,
)
from skipdiff.controller import RunReport, run_baseline
from skipdiff.denoisers import GmmDenoiser, GmmModel
from skipdiff.latent import Trajectory, path_from_string
from skipdiff.schedulers import build_ddim_plan, build_euler_ve_plan, initial_latent

from conftest import scalar_plan


def test_one_step_identity_examples():
    plan = scalar_plan(1.0, 0.5)
    v = np.array([0.2, -1.0])
    assert one_step_skip_error_exact(plan, 1, v, v) == 0.0
    assert one_step_skip_error_exact(plan, 1, [2.0, 2.0], [0.0, 0.0]) == 1.0


def test_h_coefficient():
    plan = build_ddim_plan(10)
    assert h_coefficient(plan, 5, 1) == abs(plan.g[5])
    assert h_coefficient(plan, 5, 3) == pytest.approx(abs(plan.g[5] * plan.f[4] * plan.f[3]), rel=1e-15)


def test_k1_bound_reduces_to_single_term():
    plan = build_euler_ve_plan(20)
    b = k_step_error_bound(plan, [0.3], [0.7], 2.0, 10, 1, L_t=2.0)
    assert b == pytest.approx(abs(plan.g[9]) * 2.0 * (0.3 + 0.7), rel=1e-15)


def test_bound_zero_for_zero_differences():
    plan = build_ddim_plan(20)
    assert k_step_error_bound(plan, [0.0] * 4, [0.0] * 4, 3.0, 10, 4) == 0.0


def test_bound_errors():
    plan = build_ddim_plan(20)
    with pytest.raises(ValueError):
        k_step_error_bound(plan, [1.0], [1.0], 1.0, 10, 2)
    with pytest.raises(ValueError):
        k_step_error_bound(plan, [1.0], [1.0], 1.0, 10, 0)


@pytest.mark.parametrize("plan", [build_ddim_plan(30), build_euler_ve_plan(30)], ids=["ddim", "euler"])
def test_bound_holds_single_gaussian(plan):
    rng = np.random.default_rng(7)
    for _ in range(12):
        model = GmmModel.single(4, float(rng.uniform(0.2, 1.5)), rng.standard_normal(4))
        k = int(rng.integers(1, 7))
        i = int(rng.integers(k, 29))
        rep = error_bound_report(plan, model, initial_latent(plan, int(rng.integers(1000)), 4), i, k)
        assert rep.holds, rep
        if k == 1:
            assert rep.measured == pytest.approx(rep.exact_one_step, rel=1e-8)


def test_bound_inputs_single_gaussian_constant():
    plan = build_euler_ve_plan(20)
    model = GmmModel.single(3, 0.5)
    ref, _ = run_baseline(plan, GmmDenoiser(model), initial_latent(plan, 0, 3))
    _, _, L, _ = bound_inputs(plan, model, ref, 8, 2)
    sig = plan.schedule.values
    assert L == max(s / (0.25 + s * s) for s in (sig[9], sig[8]))


def test_accumulation_curve(model):
    plan = build_euler_ve_plan(30)
    x_T = initial_latent(plan, 0, model.dim)
    zero = accumulation_curve(plan, GmmDenoiser(model), x_T, np.ones(30, bool))
    assert len(zero) == 31 and all(e == 0.0 for _, e in zero)

    path = np.ones(30, bool)
    path[12] = False  # update leaving step 18 reuses the prediction from step 19
    curve = accumulation_curve(plan, GmmDenoiser(model), x_T, path)
    assert all(e == 0.0 for _, e in curve[:13])
    ref, _ = run_baseline(plan, GmmDenoiser(model), x_T)
    exact = one_step_skip_error_exact(plan, 18, ref.noises[11], ref.noises[12])
    assert curve[13][0] == 17
    assert curve[13][1] == pytest.approx(exact, rel=1e-8)


def test_accumulation_grows_over_skip_run(model):
    plan = build_euler_ve_plan(50)
    for seed in range(5):
        path = path_from_string("EEEEEEEEEEEEEEEEEEEEEEEEEEEESSSSEEEEEEEEEEEEEEEEEE")
        curve = accumulation_curve(plan, GmmDenoiser(model), initial_latent(plan, seed, model.dim), path)
        run = [e for _, e in curve[29:33]]
        assert run[-1] >= run[0] > 0


def test_relation_trace(model):
    plan = build_euler_ve_plan(50)
    traj, _ = run_baseline(plan, GmmDenoiser(model), initial_latent(plan, 0, model.dim))
    rows, corr = third_order_relation_trace(traj)
    assert len(rows) == 48
    assert rows[0][0] == 47 and rows[-1][0] == 0
    assert corr > 0


def test_relation_trace_single_gaussian_positive():
    plan = build_ddim_plan(50)
    model = GmmModel.single(4, 0.6)
    traj, _ = run_baseline(plan, GmmDenoiser(model), initial_latent(plan, 0, 4))
    rows, _ = third_order_relation_trace(traj)
    arr = np.array([r[1:] for r in rows])
    assert np.all(arr > 0) and np.all(np.isfinite(arr))


def test_relation_trace_degenerate():
    T, D = 12, 3
    traj = Trajectory(np.ones((T + 1, D)), np.zeros((T, D)), np.ones(T, bool))
    rows, corr = third_order_relation_trace(traj)
    assert all(r[1] == 0.0 and r[2] == 0.0 for r in rows)
    assert math.isnan(corr)
    traj.evaluated[3] = False
    with pytest.raises(ValueError):
        third_order_relation_trace(traj)


def test_contingency_examples():
    t = build_contingency(path_from_string("ESES"), path_from_string("ESES"))
    assert t.counts.tolist() == [[2, 0], [0, 2]]
    t = build_contingency(path_from_string("ESES"), path_from_string("SESE"))
    assert t.counts[0, 0] == 0 and t.counts[1, 1] == 0
    est = np.ones(50, bool)
    orc = np.ones(50, bool)
    est[:25] = False
    orc[5:30] = False
    assert build_contingency(est, orc).counts.tolist() == [[20, 5], [5, 20]]


def test_contingency_errors():
    with pytest.raises(ValueError):
        build_contingency(path_from_string("ESE"), path_from_string("ESES"))
    with pytest.raises(ValueError):
        build_contingency(path_from_string("ESSE"), path_from_string("ESEE"))
    with pytest.raises(ValueError):
        ContingencyTable2x2(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ContingencyTable2x2(np.array([[1, -1], [0, 0]]))


def test_chi2_examples():
    assert chi2_2x2(ContingencyTable2x2([[5, 5], [5, 5]])) == (0.0, 1.0)
    c, p = chi2_2x2(ContingencyTable2x2([[10, 20], [20, 10]]))
    assert c == pytest.approx(6.6667, abs=1e-3) and p == pytest.approx(0.00982, abs=1e-4)
    c, p = chi2_2x2(ContingencyTable2x2([[20, 5], [5, 20]]))
    assert c == pytest.approx(18.0, abs=1e-3) and p < 3e-5
    with pytest.raises(ValueError):
        chi2_2x2(ContingencyTable2x2([[3, 0], [4, 0]]))


tables = st.lists(st.integers(1, 200), min_size=4, max_size=4).map(lambda v: np.array(v).reshape(2, 2))


@given(tables)
def test_chi2_matches_reference_implementation(c):
    ours = chi2_2x2(ContingencyTable2x2(c))
    ref = chi2_contingency(c, correction=False)
    assert ours[0] == pytest.approx(ref[0], rel=1e-10, abs=1e-12)
    assert ours[1] == pytest.approx(ref[1], rel=1e-8, abs=1e-15)


@given(tables)
def test_chi2_permutation_invariant(c):
    a = chi2_2x2(ContingencyTable2x2(c))
    b = chi2_2x2(ContingencyTable2x2(c[::-1, ::-1]))
    assert a[0] == pytest.approx(b[0], rel=1e-12, abs=1e-12)
    assert a[0] >= 0 and 0 <= a[1] <= 1


def test_p_decreases_in_chi2():
    ps = [chi2_2x2(ContingencyTable2x2([[10 + k, 10 - k], [10 - k, 10 + k]]))[1] for k in range(10)]
    assert all(a > b for a, b in zip(ps, ps[1:]))


def _report(evals, T=50):
    return RunReport(0, "euler-ve", 0.01, 4, evals, "E" * evals + "S" * (T - evals), T / evals, 0.0, 0.0, 200.0)


def test_histogram(tmp_path):
    assert path_histogram([_report(26)]) == {26: 1}
    assert path_histogram([_report(50)] * 7) == {50: 7}
    h = path_histogram(_report(20 + k % 7) for k in range(100))
    assert sum(h.values()) == 100 and list(h) == sorted(h)
    with pytest.raises(ValueError):
        path_histogram([])
    write_histogram_csv({26: 3, 30: 1}, tmp_path / "h.csv", comment="config_sha256=abc")
    assert (tmp_path / "h.csv").read_text().splitlines() == [
        "# config_sha256=abc", "eval_count,frequency", "26,3", "30,1"]


def test_paired_run_gap_within_rounding_envelope():
    """Single reused prediction: the measured gap matches g||Δε|| up to float64 rounding of one update."""
    from skipdiff.controller import roll_out
    from skipdiff.latent import latent_norm
    from skipdiff.schedulers import build_sde_euler_plan

    rng = np.random.default_rng(0)
    builders = [build_ddim_plan, build_euler_ve_plan, lambda T: build_sde_euler_plan(T, churn=1.0)]
    eps = np.finfo(np.float64).eps
    T = 50
    for _ in range(100):
        plan = builders[int(rng.integers(3))](T)
        model = GmmModel.random(int(rng.integers(2 ** 31)))
        seed = int(rng.integers(2 ** 31))
        i = int(rng.integers(1, T))
        x_T = initial_latent(plan, seed, model.dim)
        ref, _ = run_baseline(plan, GmmDenoiser(model), x_T, seed)
        j = T - i
        path = np.ones(T, dtype=bool)
        path[j] = False
        skipped = roll_out(plan, GmmDenoiser(model), x_T, seed, lambda r: bool(path[r]))
        measured = latent_norm(skipped.latents[j + 1] - ref.latents[j + 1])
        exact = one_step_skip_error_exact(plan, i, ref.noises[j - 1], ref.noises[j])
        f, g = plan.coeffs(i)
        envelope = eps * (abs(f) * latent_norm(ref.latents[j]) + abs(g) * latent_norm(ref.noises[j])
                          + latent_norm(ref.latents[j + 1]))
        assert abs(measured - exact) <= envelope
