"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the lines
are repeated in the terminal summary. Heavy suites read their settings from the
committed files under ``configs/``.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from drmanifold.cli import main
from drmanifold.config import load_config
from drmanifold.continuous import choose_num_intervals, c_dr_learn
from drmanifold.env import EnvironmentConfig, sine_environment, true_policy_value
from drmanifold.evaluate import (
    run_dimension_sweep,
    run_discretization_check,
    run_dr_robustness,
    run_rate_ladder,
)
from drmanifold.nn import MlpNetwork, MlpSpec, loss_and_grad
from drmanifold.pipeline import run_pipeline
from drmanifold.stage2 import LearnedPolicy, build_scores, policy_loss_and_grad, policy_objective

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def elapsed_since(start):
    return time.perf_counter() - start


# -- 1: gradients ----------------------------------------------------------------

def _central_difference(net, objective, step=1e-5):
    out = []
    for p in net.parameters():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + step
            up = objective()
            p[i] = orig - step
            down = objective()
            p[i] = orig
            g[i] = (up - down) / (2 * step)
        out.append(g)
    return np.concatenate([g.ravel() for g in out])


def _rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def test_gradient_suite(criterion):
    start = time.perf_counter()
    worst = {"squared": 0.0, "multinomial-logistic": 0.0, "policy": 0.0}
    instances = 50
    for seed in range(instances):
        r = np.random.default_rng(seed)
        spec = MlpSpec(depth=int(r.integers(1, 4)), width=int(r.integers(2, 7)), input_dim=int(r.integers(1, 4)),
                       output_dim=int(r.integers(1, 4)))
        net = MlpNetwork.initialize(spec, r)
        for b in net.biases:
            b[:] = r.normal(scale=0.3, size=b.shape)
        x = r.normal(size=(int(r.integers(3, 10)), spec.input_dim))
        n, k = x.shape[0], spec.output_dim

        y = r.normal(size=(n, k))
        _, g = loss_and_grad(net, x, y, "squared")
        fd = _central_difference(net, lambda: loss_and_grad(net, x, y, "squared")[0])
        worst["squared"] = max(worst["squared"], _rel_err(np.concatenate([a.ravel() for a in g.arrays()]), fd))

        a = r.integers(0, k + 1, n)
        _, g = loss_and_grad(net, x, a, "multinomial-logistic")
        fd = _central_difference(net, lambda: loss_and_grad(net, x, a, "multinomial-logistic")[0])
        worst["multinomial-logistic"] = max(worst["multinomial-logistic"],
                                            _rel_err(np.concatenate([v.ravel() for v in g.arrays()]), fd))

        s = r.normal(size=(n, k))
        h = float(r.uniform(0.2, 2.0))
        _, g = policy_loss_and_grad(net, h, x, s)
        fd = _central_difference(net, lambda: policy_loss_and_grad(net, h, x, s)[0])
        worst["policy"] = max(worst["policy"], _rel_err(np.concatenate([v.ravel() for v in g.arrays()]), fd))
    runtime = elapsed_since(start)
    passed = max(worst.values()) < 1e-5 and runtime < 30
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items())
    assert criterion(1, "gradient suite", passed, f"{instances} instances each; {detail}; {runtime:.1f}s")


# -- 2: unbiasedness -------------------------------------------------------------

def test_oracle_scores_unbiased(criterion):
    start = time.perf_counter()
    env = sine_environment(noise_sigma=0.5)
    policy = LearnedPolicy(MlpNetwork.initialize(MlpSpec(2, 8, env.ambient_dim, 2), np.random.default_rng(2)), 1.0)
    q = true_policy_value(env, policy).value
    estimates = []
    for rep in range(200):
        data = env.draw(2000, 0.5, np.random.default_rng([17, rep]))
        s2 = data.second_stage
        scores = build_scores(s2.actions, s2.rewards, env.mean_rewards(s2.intrinsic), env.propensities(s2.intrinsic),
                              "ORACLE-TILDE")
        estimates.append(policy_objective(policy, s2.covariates, scores))
    est = np.array(estimates)
    se = est.std(ddof=1) / np.sqrt(est.size)
    runtime = elapsed_since(start)
    z = abs(est.mean() - q) / se
    passed = z <= 4 and runtime < 120
    assert criterion(2, "unbiasedness of oracle scores", passed,
                     f"mean {est.mean():.5f} vs Q {q:.5f}, {z:.2f} standard errors, n2=1000 x 200; {runtime:.1f}s")


# -- 3: reduction identities ----------------------------------------------------

def test_reduction_identities(criterion):
    start = time.perf_counter()
    noisy = sine_environment(noise_sigma=0.5)
    s2 = noisy.draw(2000, 0.5, np.random.default_rng(3)).second_stage
    e = noisy.propensities(s2.intrinsic)
    dr0 = build_scores(s2.actions, s2.rewards, np.zeros_like(e), e, "DR").scores
    ipw = build_scores(s2.actions, s2.rewards, None, e, "IPW").scores
    ipw_ok = dr0.tobytes() == ipw.tobytes()

    clean = sine_environment(noise_sigma=0.0)
    c2 = clean.draw(2000, 0.5, np.random.default_rng(4)).second_stage
    mu, ec = clean.mean_rewards(c2.intrinsic), clean.propensities(c2.intrinsic)
    dr = build_scores(c2.actions, c2.rewards, mu, ec, "DR").scores
    dm = build_scores(c2.actions, c2.rewards, mu, ec, "DM").scores
    dm_ok = dr.tobytes() == dm.tobytes()
    runtime = elapsed_since(start)
    passed = ipw_ok and dm_ok and runtime < 1
    assert criterion(3, "DR reduction identities", passed,
                     f"DR(mu=0)==IPW bitwise: {ipw_ok}; DR(exact, sigma=0)==DM bitwise: {dm_ok}; {runtime:.2f}s")


# -- 4-7: experiment suites -----------------------------------------------------

@pytest.mark.slow
def test_double_robustness_e_side(criterion):
    cfg = load_config(CONFIGS / "dr_robustness.toml")
    exp = cfg.experiment
    start = time.perf_counter()
    res = run_dr_robustness(cfg.environment, exp["n_list"], exp["replications"], cfg.pipeline, cfg.seed,
                            exp["corrupt"], threads=cfg.threads)
    runtime = elapsed_since(start)
    dr = [c for c in res.summary["cells"] if c["estimator"] == "DR"]
    means = [c["mean_regret"] for c in dr]
    complete = all(c["complete"] for c in dr)
    passed = res.summary["decreasing"]["DR"] and complete and runtime < 20 * 60
    assert criterion(4, "double robustness (zero reward model, exact propensities)", passed,
                     f"DR mean regret {[round(m, 5) for m in means]} at n={exp['n_list']}; "
                     f"{runtime:.0f}s")


@pytest.mark.slow
def test_rate_ladder(criterion):
    cfg = load_config(CONFIGS / "rate_ladder.toml")
    exp = cfg.experiment
    start = time.perf_counter()
    res = run_rate_ladder(cfg.environment, exp["n_list"], exp["replications"], cfg.pipeline, cfg.seed, cfg.threads)
    runtime = elapsed_since(start)
    means = [c["mean_regret"] for c in res.summary["cells"]]
    slope = res.summary["slope"]
    passed = res.summary["strictly_decreasing"] and slope <= 0 and runtime < 30 * 60
    assert criterion(5, "rate ladder", passed,
                     f"mean regret {[round(m, 5) for m in means]} at n={exp['n_list']}, log-log slope {slope:.3f} "
                     f"(reference {res.summary['reference_exponent']:.3f}); {runtime:.0f}s")


@pytest.mark.slow
def test_intrinsic_dimension(criterion):
    cfg = load_config(CONFIGS / "dim_sweep.toml")
    exp = cfg.experiment
    start = time.perf_counter()
    res = run_dimension_sweep(cfg.environment, exp["D_list"], exp["n"], exp["replications"], cfg.pipeline,
                              cfg.seed, cfg.threads)
    runtime = elapsed_since(start)
    means = [c["mean_regret"] for c in res.summary["cells"]]
    ratio = res.summary["ratio"]
    passed = ratio <= 2.0 and res.summary["identical_intrinsic"] and runtime < 45 * 60
    assert criterion(6, "ambient-dimension robustness", passed,
                     f"mean regret {[round(m, 5) for m in means]} at D={exp['D_list']}, max/min {ratio:.2f}; "
                     f"{runtime:.0f}s")


def test_discretization_bound(criterion):
    cfg = load_config(CONFIGS / "discretization_check.toml")
    exp = cfg.experiment
    start = time.perf_counter()
    res = run_discretization_check(cfg.environment, exp["V_list"], exp["policies_per_V"], cfg.seed)
    runtime = elapsed_since(start)
    rows = res.rows
    passed = (len(rows) == 4 * 5 and all(r["gap"] <= r["bound"] + 1e-6 for r in rows) and runtime < 60)
    assert criterion(7, "discretization bound", passed,
                     f"{len(rows)} policies, max gap/bound {res.summary['max_gap_over_bound']:.3f} "
                     f"with Lipschitz constant {res.summary['lipschitz']}; {runtime:.1f}s")


# -- 8-9: trained-network invariants -------------------------------------------

@pytest.fixture(scope="module")
def trained():
    cfg = load_config(CONFIGS / "sine.toml")
    env = cfg.build_environment()
    data = env.draw(2000, 0.5, np.random.default_rng(cfg.seed))
    fit = run_pipeline(data, env.num_actions, env.d, cfg.pipeline, np.random.default_rng(cfg.seed + 1))
    return cfg, env, fit


def test_temperature_limit(criterion, trained):
    start = time.perf_counter()
    _, env, fit = trained
    x = env.embedding.embed(np.linspace(0, 1, 10_000, endpoint=False)[:, None])
    logits = fit.policy.logits(x)
    top2 = np.sort(logits, axis=1)[:, -2:]
    wide = (top2[:, 1] - top2[:, 0]) >= 0.5
    temps = [1.0, 0.1, 0.01]
    maxprob = [fit.policy.with_temperature(h)(x).max(axis=1) for h in temps]
    monotone = all(np.all(b >= a) for a, b in zip(maxprob, maxprob[1:]))
    sharp = bool(np.all(maxprob[-1][wide] >= 1 - 1e-6))
    greedy = [fit.policy.with_temperature(h).greedy(x) for h in temps]
    same = all(np.array_equal(greedy[0], g) for g in greedy[1:])
    runtime = elapsed_since(start)
    passed = monotone and sharp and same and wide.sum() > 0 and runtime < 10
    assert criterion(8, "temperature limit", passed,
                     f"max-prob monotone: {monotone}; >=1-1e-6 at H=0.01 on {int(wide.sum())} wide-gap points: "
                     f"{sharp}; greedy identical: {same}; {runtime:.2f}s")


def test_simplex_and_overlap(criterion, trained):
    start = time.perf_counter()
    cfg, env, fit = trained
    t = np.linspace(0, 1, 10_000, endpoint=False)[:, None]
    x = env.embedding.embed(t)
    floor = cfg.pipeline.propensity_floor
    e_hat = fit.propensity.predict(x)
    checks = {
        "e_hat sums": np.abs(e_hat.sum(axis=1) - 1).max() <= 1e-12,
        "e_hat floor": e_hat.min() >= floor,
        "logging overlap": env.propensities(t).min() >= env.overlap_floor,
    }
    for h in (fit.temperature, 1.0, 0.01):
        p = fit.policy.with_temperature(h)(x)
        checks[f"policy H={h:.3g}"] = np.abs(p.sum(axis=1) - 1).max() <= 1e-12 and p.min() >= 0

    dose = EnvironmentConfig.from_dict(load_config(CONFIGS / "dose.toml").environment).build()
    dd = dose.draw(3000, 0.5, np.random.default_rng(0))
    v = choose_num_intervals(3000, 1.0, 1)
    quick = replace(cfg.pipeline, stage1=replace(cfg.pipeline.stage1, epochs=50),
                    stage2=replace(cfg.pipeline.stage2, epochs=20))
    cont = c_dr_learn(dd, v, 1, quick, np.random.default_rng(1))
    xd = dose.embedding.embed(t)
    ec = cont.fit.propensity.predict(xd)
    checks["interval e_hat sums"] = np.abs(ec.sum(axis=1) - 1).max() <= 1e-12
    checks["interval e_hat floor"] = ec.min() >= floor
    checks["interval policy sums"] = np.abs(cont(xd).sum(axis=1) - 1).max() <= 1e-12
    checks["interval logging overlap"] = dose.interval_propensities(t, v).min() >= dose.overlap / v
    runtime = elapsed_since(start)
    failed = [k for k, ok in checks.items() if not ok]
    passed = not failed and runtime < 10
    assert criterion(9, "simplex and overlap invariants", passed,
                     f"{len(checks)} checks on a 10^4-point grid, failed: {failed or 'none'}; {runtime:.2f}s")


# -- 10: determinism -------------------------------------------------------------

def test_pipeline_determinism(criterion, tmp_path):
    start = time.perf_counter()
    outs = [tmp_path / "first", tmp_path / "second"]
    codes = [main(["pipeline", "--config", str(CONFIGS / "sine.toml"), "--out", str(o)]) for o in outs]
    names = sorted(p.name for p in outs[0].iterdir())
    same = names == sorted(p.name for p in outs[1].iterdir()) and all(
        (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    runtime = elapsed_since(start)
    passed = codes == [0, 0] and same and runtime < 300
    assert criterion(10, "determinism", passed, f"exit codes {codes}; {names} byte-identical: {same}; {runtime:.1f}s")
