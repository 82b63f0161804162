"""End-to-end acceptance suite.

Each criterion prints one [PASS]/[FAIL] line (run pytest with -s to see
them live). The benchmark training in criterion 6 is the long pole; its
fixture is module-scoped so the policy is trained once and reused by the
four sub-criteria.
"""

import time

import numpy as np
import pytest

from qfeedback import cli, qmath, systems
from qfeedback.baseline import BaselineController
from qfeedback.config import config_from_dict
from qfeedback.cost import CostSpec, ShapeSpec
from qfeedback.evaluate import evaluate_ensemble
from qfeedback.gass import (
    GassConfig,
    SamplingDistribution,
    gradient_estimate,
    make_rollout_objective,
    optimize,
    search,
)
from qfeedback.policy import Policy, PolicySpec, init_params, param_count
from qfeedback.simulator import (
    SeedSpec,
    SimConfig,
    ZeroController,
    _Kernel,
    _project,
    lindblad_propagate,
    propagate_batch,
)

pytestmark = pytest.mark.filterwarnings("error::RuntimeWarning")


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# -- criterion 1: degeneracy reproduction ------------------------------------


def test_criterion_1_degeneracy():
    t0 = time.monotonic()
    sys4 = systems.two_qubit_system()
    rho_des = qmath.symmetric_bell_density()
    bnorm = float(np.linalg.norm(systems.diffusion(sys4, rho_des)))
    eigs = np.sort(np.linalg.eigvalsh(sys4.V))
    elapsed = time.monotonic() - t0
    ok = bnorm < 1e-12 and np.allclose(eigs, [-2.0, 0.0, 0.0, 2.0], atol=1e-12) and elapsed < 1.0
    report(
        "criterion 1 (degeneracy)",
        ok,
        f"|B(rho_des)|={bnorm:.2e}, eigs={eigs.tolist()}, {elapsed:.3f}s",
    )


# -- criterion 2: conservation suite ------------------------------------------


def _random_state_batch(dim, n, rng):
    half = n // 2
    psi = rng.normal(size=(half, dim)) + 1j * rng.normal(size=(half, dim))
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    pure = np.einsum("bi,bj->bij", psi, psi.conj())
    m = rng.normal(size=(n - half, dim, dim)) + 1j * rng.normal(size=(n - half, dim, dim))
    mixed = m @ m.conj().transpose(0, 2, 1)
    mixed /= np.einsum("bii->b", mixed).real[:, None, None]
    return np.concatenate([pure, mixed], axis=0)


def test_criterion_2_conservation():
    rng = np.random.default_rng(2024)
    dt = 1e-3
    worst_trace, worst_herm = 0.0, 0.0
    for sys_obj in (systems.two_qubit_system(), systems.homodyne_system(5, eta=0.8, gamma=1.2)):
        n = 100_000
        rho = _random_state_batch(sys_obj.dim, n, rng)
        u = rng.uniform(-2.0, 2.0, size=(n, max(sys_obj.control_dim, 1)))[
            :, : sys_obj.control_dim
        ]
        dw = rng.normal(0.0, np.sqrt(dt), size=n)
        kernel = _Kernel(sys_obj)
        a, b = kernel.increments(rho, u)
        out = rho + a * dt + b * dw[:, None, None]
        tr = np.einsum("bii->b", out)
        worst_trace = max(worst_trace, float(np.max(np.abs(tr - 1.0))))
        worst_herm = max(
            worst_herm, float(np.max(np.abs(out - out.conj().transpose(0, 2, 1))))
        )

    # eigenstate projectors are exact fixed points for every noise value
    sys4 = systems.two_qubit_system()
    kernel = _Kernel(sys4)
    fixed_ok = True
    states = [qmath.basis_projector(4, i) for i in range(4)] + [qmath.symmetric_bell_density()]
    dws = rng.normal(0.0, np.sqrt(dt), size=1000)
    for rho0 in states:
        batch = np.broadcast_to(rho0, (1000, 4, 4)).copy()
        a, b = kernel.increments(batch, np.zeros((1000, 2)))
        stepped = _project(batch + a * dt + b * dws[:, None, None], True, True)
        if not np.array_equal(stepped, np.broadcast_to(rho0, stepped.shape)):
            fixed_ok = False

    ok = worst_trace < 1e-12 and worst_herm < 1e-12 and fixed_ok
    report(
        "criterion 2 (conservation)",
        ok,
        f"trace drift {worst_trace:.2e}, herm defect {worst_herm:.2e}, "
        f"fixed points exact: {fixed_ok}",
    )


# -- criterion 3: Lindblad oracle ---------------------------------------------


class _CheckpointCollector:
    def __init__(self, every, n_steps, dim, batch):
        self.every = every
        self.n_steps = n_steps
        self.sum = {}
        self.sumsq_re = {}
        self.sumsq_im = {}
        self.batch = batch

    def _acc(self, t, rho):
        self.sum[t] = rho.sum(axis=0)
        self.sumsq_re[t] = (rho.real**2).sum(axis=0)
        self.sumsq_im[t] = (rho.imag**2).sum(axis=0)

    def on_step(self, t, rho, u, dw_t):
        if t > 0 and t % self.every == 0:
            self._acc(t, rho)

    def on_final(self, rho):
        self._acc(self.n_steps, rho)


def test_criterion_3_lindblad_oracle():
    t0 = time.monotonic()
    sys4 = systems.two_qubit_system()
    seed = SeedSpec(31415)
    m, n_steps = 10_000, 1000
    # raw Euler-Maruyama (no nonlinear repair): its ensemble mean obeys the
    # deterministic recursion exactly, so the only gap is Monte Carlo error
    cfg = SimConfig(dt=1e-3, n_steps=n_steps, renormalize=False, psd_projection=False)
    rho0 = qmath.random_pure_state(4, 271828)

    dw = np.stack([seed.wiener_path((0, r), n_steps, cfg.dt) for r in range(m)])
    col = _CheckpointCollector(100, n_steps, 4, m)
    propagate_batch(sys4, ZeroController(2), np.broadcast_to(rho0, (m, 4, 4)), dw, cfg, [col])
    oracle = lindblad_propagate(sys4, rho0, None, cfg)

    worst_sigma = 0.0
    for t in range(100, n_steps + 1, 100):
        mean = col.sum[t] / m
        var_re = np.clip(col.sumsq_re[t] / m - mean.real**2, 0.0, None)
        var_im = np.clip(col.sumsq_im[t] / m - mean.imag**2, 0.0, None)
        se_re = np.sqrt(var_re / m)
        se_im = np.sqrt(var_im / m)
        # 1e-12 floor guards structurally-zero entries against rounding
        n_sig_re = np.abs(mean.real - oracle[t].real) / (5.0 * se_re + 1e-12)
        n_sig_im = np.abs(mean.imag - oracle[t].imag) / (5.0 * se_im + 1e-12)
        worst_sigma = max(worst_sigma, float(n_sig_re.max()), float(n_sig_im.max()))
    elapsed = time.monotonic() - t0
    ok = worst_sigma <= 1.0 and elapsed < 120.0
    report(
        "criterion 3 (Lindblad oracle)",
        ok,
        f"worst deviation {worst_sigma:.3f} x (5 SE) over {m} rollouts, {elapsed:.0f}s",
    )


# -- criterion 4: synthetic optimizer convergence ------------------------------


def test_criterion_4_synthetic_optimizer():
    t0 = time.monotonic()
    dim, P, sigma, lr, kappa = 10, 64, 0.3, 0.8, 1.0
    hits = []
    for master in range(10):
        phi_star = np.random.default_rng(1000 + master).normal(size=dim)

        def objective(k, params):
            return np.sum((params - phi_star) ** 2, axis=1, keepdims=True)

        errs = []
        dist = SamplingDistribution(mu=np.zeros(dim), sigma=sigma)
        cfg = GassConfig(
            iterations=200, param_samples=P, rollouts=1, step_size=lr,
            shape=ShapeSpec(kappa=kappa),
        )
        out, _ = search(
            objective,
            dist,
            cfg,
            SeedSpec(master),
            callback=lambda st, d: errs.append(np.linalg.norm(d.mu - phi_star)),
        )
        hits.append(min(errs) < 1e-2)
    elapsed = time.monotonic() - t0
    ok = all(hits) and elapsed < 10.0
    report(
        "criterion 4 (synthetic optimizer)",
        ok,
        f"{sum(hits)}/10 seeds reached 1e-2 within 200 iterations, {elapsed:.1f}s",
    )


# -- criterion 5: score-function gradient -------------------------------------


def test_criterion_5_score_function_gradient():
    mu, sigma, n = 0.3, 0.6, 100_000
    dist = SamplingDistribution(mu=np.array([mu]), sigma=np.array([sigma]))
    rng = np.random.default_rng(5150)
    phi = mu + sigma * rng.normal(size=(n, 1))
    costs = phi**2
    grad = gradient_estimate(costs, phi, dist, ShapeSpec(kappa=1.0))[0]

    # analytic smoothed objective: < exp(-phi^2) > under N(mu, sigma^2)
    def log_smoothed(x):
        return -0.5 * np.log(1.0 + 2.0 * sigma**2) - x**2 / (1.0 + 2.0 * sigma**2)

    h = 1e-4
    fd = (log_smoothed(mu + h) - log_smoothed(mu - h)) / (2.0 * h)
    s = np.exp(-costs[:, 0])
    infl = s * ((phi[:, 0] - mu) / sigma**2 - grad)
    se = np.std(infl) / (np.mean(s) * np.sqrt(n))
    ok = abs(grad - fd) < 3.0 * se
    report(
        "criterion 5 (score-function gradient)",
        ok,
        f"estimate {grad:.5f} vs finite difference {fd:.5f}, |diff|/SE = {abs(grad - fd) / se:.2f}",
    )


# -- criterion 6: two-qubit benchmark -----------------------------------------

BENCHMARK_CONFIG = {
    "system": {"kind": "two_qubit", "eta": 1.0},
    "policy": {"kind": "linear"},
    "cost": {"q_s": 1.0, "q_u": [0.01, 0.01], "alpha": 1.0, "beta": 9.0},
    "gass": {
        "iterations": 300,
        "param_samples": 64,
        "rollouts": 16,
        "step_size": 1.0,
        "kappa": 30.0,
        "sigma": 1.0,
        "sigma_decay": 0.99,
        "master_seed": 0,
    },
    "sim": {"dt": 1e-3, "n_steps": 1000, "eval_steps": 1000, "n_eval_trajectories": 1000},
}


@pytest.fixture(scope="module")
def benchmark():
    cfg = config_from_dict(BENCHMARK_CONFIG)
    sys_obj = cfg.build_system()
    policy_spec = cfg.build_policy_spec(sys_obj)
    cost_spec = cfg.build_cost_spec(sys_obj)
    seed = cfg.seed_spec()

    t0 = time.monotonic()
    mu0 = init_params(policy_spec, seed.policy_init_generator())
    dist0 = SamplingDistribution(mu=mu0, sigma=cfg.sigma_vector(param_count(policy_spec)))
    dist, stats = optimize(
        sys_obj,
        policy_spec,
        cost_spec,
        cfg.build_sim_config(),
        cfg.build_gass_config(),
        seed,
        dist0=dist0,
    )
    train_time = time.monotonic() - t0

    controller = Policy(policy_spec, dist.mu)
    baseline_ctrl = BaselineController(cfg.build_baseline_spec(sys_obj), sys_obj, cost_spec.rho_des)
    eval_cfg = cfg.build_sim_config(n_steps=cfg.eval_steps)
    pol_stats = evaluate_ensemble(
        sys_obj, controller, 1000, cost_spec, eval_cfg, seed, with_basis=False
    )
    base_stats = evaluate_ensemble(
        sys_obj, baseline_ctrl, 1000, cost_spec, eval_cfg, seed, with_basis=False
    )
    long_cfg = cfg.build_sim_config(n_steps=10_000)
    long_stats = evaluate_ensemble(
        sys_obj, controller, 1000, cost_spec, long_cfg, seed, with_basis=False
    )
    total_time = time.monotonic() - t0
    return {
        "policy": pol_stats,
        "baseline": base_stats,
        "long": long_stats,
        "train_time": train_time,
        "total_time": total_time,
        "training_stats": stats,
    }


class TestCriterion6Benchmark:
    def test_a_final_fidelity(self, benchmark):
        fid = benchmark["policy"].final_fidelity_mean
        report(
            "criterion 6a (mean final fidelity >= 0.9)",
            fid >= 0.9,
            f"fidelity {fid:.4f} over 1000 unseen trajectories",
        )

    def test_b_state_cost_bands(self, benchmark):
        pol, base = benchmark["policy"], benchmark["baseline"]
        pol_hi = pol.jstate_mean[-1] + pol.jstate_std[-1]
        base_lo = base.jstate_mean[-1] - base.jstate_std[-1]
        ok = pol.jstate_mean[-1] < base.jstate_mean[-1] and pol_hi < base_lo
        report(
            "criterion 6b (J_state below baseline, disjoint 1-sigma bands)",
            ok,
            f"policy {pol.jstate_mean[-1]:.3f}+-{pol.jstate_std[-1]:.3f} vs "
            f"baseline {base.jstate_mean[-1]:.3f}+-{base.jstate_std[-1]:.3f}",
        )

    def test_c_control_effort_ratio(self, benchmark):
        pol, base = benchmark["policy"], benchmark["baseline"]
        ratio = base.control_effort_mean / max(pol.control_effort_mean, 1e-12)
        report(
            "criterion 6c (baseline/policy control effort > 2)",
            ratio > 2.0,
            f"effort ratio {ratio:.2f} "
            f"(baseline {base.control_effort_mean:.4f}, policy {pol.control_effort_mean:.4f})",
        )

    def test_d_long_horizon(self, benchmark):
        fid = benchmark["long"].final_fidelity_mean
        report(
            "criterion 6d (fidelity >= 0.85 over 10000 steps)",
            fid >= 0.85,
            f"fidelity {fid:.4f} at step 10000 "
            f"(tail minimum {benchmark['long'].fid_mean[1000:].min():.4f})",
        )

    def test_runtime_budget(self, benchmark):
        ok = benchmark["total_time"] < 7200.0
        report(
            "criterion 6 (runtime budget < 2 h)",
            ok,
            f"train {benchmark['train_time'] / 60:.1f} min, "
            f"total {benchmark['total_time'] / 60:.1f} min",
        )


# -- criterion 7: throughput ---------------------------------------------------


def test_criterion_7_throughput():
    sys4 = systems.two_qubit_system()
    rho_des = qmath.symmetric_bell_density()
    cost_spec = CostSpec(rho_des=rho_des, q_u=np.array([0.01, 0.01]))
    spec = PolicySpec(kind="linear", control_dim=2, feature_dim=16)
    seed = SeedSpec(7)
    objective = make_rollout_objective(
        sys4, spec, cost_spec, SimConfig(dt=1e-3, n_steps=1000), seed, rollouts=50
    )
    dist = SamplingDistribution(
        mu=init_params(spec, seed.policy_init_generator()), sigma=np.full(34, 0.1)
    )
    cfg = GassConfig(iterations=1, param_samples=200, rollouts=50, shape=ShapeSpec(kappa=1.0))
    t0 = time.monotonic()
    _, stats = search(objective, dist, cfg, seed)
    elapsed = time.monotonic() - t0
    ok = elapsed <= 60.0 and len(stats) == 1 and np.isfinite(stats[0].mean_cost)
    report(
        "criterion 7 (throughput)",
        ok,
        f"one iteration at 200 policies x 50 rollouts x 1000 steps: {elapsed:.1f}s",
    )


# -- criterion 8: byte determinism ---------------------------------------------


def test_criterion_8_determinism(tmp_path):
    import yaml

    raw = {
        "system": {"kind": "two_qubit"},
        "policy": {"kind": "linear"},
        "cost": {"q_u": [0.01, 0.01]},
        "gass": {"iterations": 3, "param_samples": 8, "rollouts": 4, "master_seed": 99},
        "sim": {"dt": 1e-3, "n_steps": 100, "eval_steps": 100, "n_eval_trajectories": 4},
    }
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump(raw))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        rc = cli.main(["train", "--config", str(cfg_path), "--output-dir", str(out)])
        assert rc == 0
    same_stats = (out_a / "training_stats.csv").read_bytes() == (
        out_b / "training_stats.csv"
    ).read_bytes()
    same_ck = (out_a / "checkpoint.bin").read_bytes() == (out_b / "checkpoint.bin").read_bytes()
    report(
        "criterion 8 (determinism)",
        same_stats and same_ck,
        f"stats CSV identical: {same_stats}, checkpoint identical: {same_ck}",
    )
