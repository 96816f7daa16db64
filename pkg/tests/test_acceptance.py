"""Acceptance gate.

Criteria 1-8 form the always-runnable property suite (default pytest run,
well under ten minutes).  Criteria 9-10 are the scaled experiment suite
(hours; `pytest -m scaled`).  Criteria 11-13 reproduce the headline
experimental results at publication scale (days; `pytest -m full_profile`);
criterion 14 runs at the scaled tier.  Each test emits exactly one
"[criterion NN] PASS/FAIL" line (visible with -s or in captured output).
"""

import os

import numpy as np
import pytest

from kscontrol import analysis, pnn, transfer
from kscontrol import autodiff as ad
from kscontrol import nets
from kscontrol.errors import NoCrossing
from kscontrol.harness import ExperimentConfig, RunBlock, TransferBlock, run_experiment
from kscontrol.sac import Agent, ReplayBuffer, SACConfig, Transition, evaluate
from kscontrol.spectral import (
    KSConfig,
    SpectralField,
    grid_norm,
    integrate,
    noise_initial_condition,
    rhs,
    step_solver,
)

from oracles import central_diff, etdrk4_step, gram_singular_values, naive_pnn


def report(num, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:02d}] {status}: {detail}")
    assert ok, f"criterion {num:02d} FAIL: {detail}"


def saturate(cfg, seed=42, t=100.0):
    fld = noise_initial_condition(cfg, np.random.default_rng(seed))
    return integrate(fld, cfg, int(round(t / cfg.dt_solution)))


# ---------------------------------------------------------------------------
# Property suite (criteria 1-8)


def test_criterion_01_solver_matches_etdrk4_oracle():
    worst = 0.0
    for N in (16, 128):
        for lam in (1.0, 1.4):
            cfg = KSConfig(N=N, hyperviscosity=lam)
            fld = saturate(cfg)
            ours = step_solver(fld, None, cfg).coeffs
            ref = etdrk4_step(fld.coeffs, cfg)
            rel = np.linalg.norm(ours - ref) / np.linalg.norm(ref)
            worst = max(worst, rel)
    report(1, worst <= 1e-5, f"one-step rel L2 vs ETDRK4, worst {worst:.2e} (<= 1e-5)")


def test_criterion_02_steady_states(equilibria128, cfg128):
    res128 = max(
        grid_norm(rhs(s.profile, None, cfg128).grid_values, cfg128.dx)
        for s in equilibria128
    )
    cfg32 = KSConfig(N=32)
    res32 = max(
        grid_norm(rhs(s.at_fidelity(cfg32).profile, None, cfg32).grid_values, cfg32.dx)
        for s in equilibria128
    )
    mags = np.abs(equilibria128[1].profile.coeffs)
    mode2 = int(np.argmax(mags[1:]) + 1) == 2
    ok = res128 < 1e-9 and res32 < 1e-6 and mode2
    report(
        2,
        ok,
        f"u1-u3 residuals: N=128 {res128:.1e} (<1e-9), N=32 {res32:.1e} (<1e-6), "
        f"u2 dominant mode 2: {mode2}",
    )


def test_criterion_03_chaotic_growth(cfg128):
    # u(x,0) = 1e-8 * N(0,1): the infinitesimal state amplifies to O(1)
    rng = np.random.default_rng(7)
    fld = SpectralField.from_grid(1e-8 * rng.standard_normal(cfg128.N))
    steps_per_5 = int(round(5.0 / cfg128.dt_solution))
    reached = None
    rms_at = {}
    t = 0.0
    for _ in range(28):  # to t = 140
        fld = integrate(fld, cfg128, steps_per_5)
        t += 5.0
        rms_at[t] = float(np.sqrt(np.mean(fld.grid_values**2)))
        if reached is None and rms_at[t] > 0.5:
            reached = t
    ok = reached is not None and 80.0 <= reached <= 120.0
    report(
        3,
        ok,
        f"1e-8 noise state reaches O(1) RMS at t={reached} (target 100 +/- 20); "
        f"RMS(t=100)={rms_at[100.0]:.2f}",
    )


def test_criterion_04_gradient_checks():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(50):
        kind = trial % 3
        obs_dim, act_dim, hidden = 3, 2, 4
        if kind in (0, 1):
            specs = nets.actor_specs(obs_dim, act_dim, hidden, n_hidden=2)
            store = ad.ParamStore()
            nets.init_mlp(store, specs, rng)
            x = rng.standard_normal((3, obs_dim))
            names = store.names()

            def loss_np(flat):
                vals = unflatten(store, names, flat)
                out = nets.mlp_forward_np(vals, specs, x)
                if kind == 0:
                    return float(np.mean(out**2))
                mean = out[:, :act_dim]
                log_std = np.clip(out[:, act_dim:], -20.0, 2.0)
                z = mean + 0.37  # fixed offset stands in for the noise draw
                lp = nets.squashed_log_prob_np(z, mean, log_std, 0.5)
                return float(np.mean(lp))

            def loss_tape():
                vm = store.make_vars()
                out = nets.mlp_forward(vm, specs, x)
                if kind == 0:
                    return vm, ad.vmean(ad.square(out))
                idx_m = (slice(None), slice(0, act_dim))
                idx_s = (slice(None), slice(act_dim, 2 * act_dim))
                mean = out[idx_m]
                log_std = ad.clip(out[idx_s], -20.0, 2.0)
                z = mean + 0.37
                lp = nets.squashed_log_prob(z, mean, log_std, 0.5)
                return vm, ad.vmean(lp)

        else:
            actor = pnn.ProgressiveActor.fresh(
                rng, obs_dim=obs_dim, act_dim=act_dim, hidden=hidden,
                n_hidden=2, n_columns=2, adapter_dim=3,
            )
            for name in actor.store.names():
                actor.store.set_trainable(name, True)  # full check incl. col 1
            store = actor.store
            names = store.names()
            x = rng.standard_normal((3, obs_dim))

            def loss_np(flat):
                old = {n: np.asarray(store[n]).copy() for n in names}
                assign(store, names, flat)
                mean, _ = actor.forward_np(x)
                val = float(np.mean(mean**2))
                for n in names:
                    store[n] = old[n]
                return val

            def loss_tape():
                vm = store.make_vars()
                mean, _ = actor.forward_tape(vm, x)
                return vm, ad.vmean(ad.square(mean))

        vm, loss = loss_tape()
        ad.backward(loss)
        flat0 = flatten(store, names)
        g_num = central_diff(loss_np, flat0)
        g_ad = np.concatenate(
            [np.ravel(np.asarray(vm[n].grad if vm[n].grad is not None else 0.0 * np.asarray(store[n]))) for n in names]
        )
        rel = np.linalg.norm(g_ad - g_num) / max(np.linalg.norm(g_num), 1e-8)
        worst = max(worst, rel)
    report(4, worst < 1e-5, f"50 nets, reverse-mode vs central FD, worst rel {worst:.2e}")


def flatten(store, names):
    return np.concatenate([np.ravel(np.asarray(store[n], dtype=np.float64)) for n in names])


def unflatten(store, names, flat):
    out = ad.ParamStore()
    i = 0
    for n in names:
        v = np.asarray(store[n])
        out.add(n, flat[i : i + v.size].reshape(v.shape))
        i += v.size
    return out


def assign(store, names, flat):
    i = 0
    for n in names:
        v = np.asarray(store[n])
        store[n] = flat[i : i + v.size].reshape(v.shape)
        i += v.size


def test_criterion_05_pnn_forward_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for n_columns in (2, 3):
        actor = pnn.ProgressiveActor.fresh(
            rng, obs_dim=8, act_dim=4, hidden=10, n_columns=n_columns, adapter_dim=5
        )
        for name in actor.store.names():
            if name.endswith(".alpha"):
                actor.store[name] = float(rng.uniform(0.5, 2.0))
        for _ in range(5):
            x = rng.standard_normal(8)
            mean, _ = actor.forward_np(x)
            ref = naive_pnn(actor, x)
            worst = max(worst, float(np.abs(mean - ref[:4]).max()))
    # zero-gain equivalence must be exact
    actor2 = pnn.ProgressiveActor.fresh(rng, hidden=10, n_columns=2, adapter_dim=5)
    for i in range(2, len(actor2.specs) + 1):
        pnn.set_adapter_gain(actor2, i, 1, 0.0)
    x = rng.standard_normal((3, 8))
    mean, _ = actor2.forward_np(x)
    plain = nets.mlp_forward_np(actor2.store, actor2.specs, x, prefix="col2.")
    exact = bool(np.array_equal(mean, plain[:, :4]))
    report(
        5,
        worst < 1e-12 and exact,
        f"naive-transcription max |diff| {worst:.1e} (K=2,3); zero-gain exact: {exact}",
    )


def test_criterion_06_freeze_integrity(tmp_path):
    sac_cfg = SACConfig(
        actor_hidden=8, critic_hidden=8, batch_size=8, buffer_capacity=300,
        gradient_steps=1,
    )
    src_path = str(tmp_path / "src.bin")
    Agent.fresh(sac_cfg, seed=1).save(src_path)
    buf = ReplayBuffer(300, 8, 4)
    rng = np.random.default_rng(2)
    for _ in range(100):
        buf.add(
            Transition(
                rng.standard_normal(8), rng.uniform(-0.5, 0.5, 4),
                rng.normal(), rng.standard_normal(8), False,
            )
        )
    violations = []
    configs = [("strategy", s) for s in transfer.STRATEGIES] + [
        ("variant", v) for v in pnn.VARIANTS
    ]
    for kind, name in configs:
        if kind == "strategy":
            plan = transfer.TransferPlan(
                name, None if name == transfer.SCRATCH else src_path
            )
            agent = transfer.build_target_agent(plan, seed=3, sac_cfg=sac_cfg)
        else:
            agent = pnn.build_pnn(
                None if name == pnn.RANDOM_SOURCE else src_path,
                name, seed=3, sac_cfg=sac_cfg,
            )
        stores = [agent.actor.stores()["actor"], agent.critic1.store, agent.critic2.store]
        frozen = {
            (si, n): np.asarray(st[n]).copy()
            for si, st in enumerate(stores)
            for n in st.names()
            if not st.is_trainable(n)
        }
        for _ in range(1000):
            agent.update_burst(buf, n_steps=1)
        for (si, n), val in frozen.items():
            if not np.array_equal(np.asarray(stores[si][n]), val):
                violations.append((name, n))
    report(
        6,
        not violations,
        f"frozen entries bit-identical after 1e3 bursts across "
        f"{len(configs)} strategies/variants; violations: {violations}",
    )


def test_criterion_07_pod_and_filter():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((50, 128))
    res = analysis.pod(X)
    sv_err = float(np.abs(res.singular_values - gram_singular_values(X)).max())
    energy_err = abs(res.energies.sum() - np.linalg.norm(X, "fro") ** 2)
    energy_rel = energy_err / np.linalg.norm(X, "fro") ** 2
    u = rng.standard_normal((7, 128))
    large, small = analysis.spectral_filter(u, 16, 22.0)
    part_err = float(np.abs(large + small - u).max())
    ok = sv_err < 1e-8 and energy_rel < 1e-8 and part_err < 1e-12
    report(
        7,
        ok,
        f"POD vs Gram oracle {sv_err:.1e} (<1e-8), energy rel err "
        f"{energy_rel:.1e} (<1e-8), filter partition error {part_err:.1e} (<1e-12)",
    )


class _QuadEnv:
    def __init__(self, horizon=20):
        self.horizon, self.t = horizon, 0

    def reset(self, seed):
        self.t = 0
        return np.zeros(8)

    def step(self, action):
        self.t += 1
        return np.zeros(8), 1.0 - float(np.sum(np.asarray(action) ** 2)), self.t >= self.horizon


def test_criterion_08_aps_normalization(tmp_path):
    sac_cfg = SACConfig(actor_hidden=16, critic_hidden=16)
    src_path = str(tmp_path / "src.bin")
    Agent.fresh(sac_cfg, seed=1).save(src_path)
    agent = pnn.build_pnn(src_path, pnn.STANDARD, seed=2, sac_cfg=sac_cfg)
    agent.actor.store["col2.W4"] = agent.actor.store["col2.W4"] * 200.0
    amap = analysis.aps_map(agent, _QuadEnv(), layers=[2, 3], episodes=2)
    row_err = float(np.abs(amap.row_sums() - 1.0).max())
    # cut every lateral: noise in the source column can no longer propagate
    for i in range(2, 5):
        pnn.set_adapter_gain(agent.actor, i, 1, 0.0)
    try:
        analysis.aps(agent, _QuadEnv(), layer=2, column=1, episodes=2)
        inactive_ok = False
    except NoCrossing:
        inactive_ok = True
    report(
        8,
        row_err < 1e-9 and inactive_ok,
        f"row-sum error {row_err:.1e} (<1e-9); inactive path insensitive: {inactive_ok}",
    )


# ---------------------------------------------------------------------------
# Scaled experiment suite (criteria 9-10, 14) and full profile (11-13)


def _experiment(N, total_steps, trials, u_ref="u1", lam=1.0, transfer_block=None,
                seeds=None):
    run = RunBlock(total_steps=total_steps, trials=trials)
    if seeds:
        run.seeds = list(seeds)
    return ExperimentConfig(
        env=KSConfig(N=N, hyperviscosity=lam),
        u_ref=u_ref,
        agent=SACConfig(),
        run=run,
        transfer=transfer_block,
    )


def _per_trial_curves(out_dir):
    lc = analysis.LearningCurve.from_csv(os.path.join(out_dir, "curves.csv"))
    return lc, [analysis.LearningCurve([t]).smoothed() for t in lc.trials]


def _env_for(cfg, out_dir):
    from kscontrol.harness import build_env, prepare_reference

    return build_env(cfg.env, prepare_reference(cfg, out_dir))


def _ckpt(out_dir, step):
    return os.path.join(out_dir, "trial0", "checkpoints", f"ckpt_{step:09d}.bin")


@pytest.mark.scaled
def test_criterion_09_single_fidelity_plateau(tmp_path):
    cfg = _experiment(16, 200_000, 4)
    out = str(tmp_path / "single16")
    _, aborted = run_experiment(cfg, out, workers=4)
    assert not aborted
    lc, _ = _per_trial_curves(out)
    finals = [float(np.mean(returns[-10:])) for _, returns in lc.trials]
    n_good = sum(f > 0.7 for f in finals)
    report(9, n_good >= 3, f"last-10-episode means {finals}; {n_good}/4 above 0.7")


@pytest.mark.scaled
def test_criterion_10_transfer_acceleration(tmp_path):
    src_cfg = _experiment(16, 50_000, 1)
    src_out = str(tmp_path / "src16")
    run_experiment(src_cfg, src_out, workers=1)
    src_ckpt = _ckpt(src_out, 50_000)

    base_out = str(tmp_path / "scratch64")
    run_experiment(_experiment(64, 100_000, 4), base_out, workers=4)
    tr_out = str(tmp_path / "ft64")
    tb = TransferBlock(kind="finetune", strategy=transfer.FINE_TUNE_ALL,
                       source_checkpoint=src_ckpt)
    run_experiment(_experiment(64, 100_000, 4, transfer_block=tb), tr_out, workers=4)

    base_curve, _ = _per_trial_curves(base_out)
    base_sm = base_curve.smoothed()
    _, tr_trials = _per_trial_curves(tr_out)
    horizon = min(t.grid()[-1] for t in tr_trials + [base_sm])
    scores = [analysis.transfer_score(t, base_sm, horizon) for t in tr_trials]
    n_good = sum(s > 1.2 for s in scores)
    report(
        10, n_good >= 3,
        f"per-seed fine-tune-all transfer scores {['%.2f' % s for s in scores]} "
        f"(horizon {horizon:.0f}); {n_good}/4 above 1.2",
    )


@pytest.mark.full_profile
def test_criterion_11_catastrophic_forgetting(tmp_path):
    retention = {}
    for n_src in (16, 64):
        src_cfg = _experiment(n_src, 200_000, 1)
        src_out = str(tmp_path / f"src{n_src}")
        run_experiment(src_cfg, src_out, workers=1)
        src_ckpt = _ckpt(src_out, 200_000)
        src_env = _env_for(src_cfg, src_out)
        source = Agent.load(src_ckpt)
        src_return, _ = evaluate(source, src_env, 10, list(range(910_000, 910_010)))

        tb = TransferBlock(kind="finetune", strategy=transfer.FINE_TUNE_ALL,
                           source_checkpoint=src_ckpt)
        tr_cfg = _experiment(128, 250_000, 1, transfer_block=tb)
        tr_out = str(tmp_path / f"ft_from{n_src}")
        run_experiment(tr_cfg, tr_out, workers=1)
        tuned = Agent.load(_ckpt(tr_out, 250_000))
        retention[n_src] = transfer.retention_eval(tuned, src_env, src_return, episodes=10)
    ok = retention[16] < 0.2 and retention[64] > retention[16]
    report(
        11, ok,
        f"retention N=16 source {retention[16]:.3f} (<0.2), "
        f"N=64 source {retention[64]:.3f} (> N=16)",
    )


@pytest.mark.full_profile
def test_criterion_12_pnn_robust_to_source_quality(tmp_path):
    src_cfg = _experiment(16, 10_000_000, 1)
    src_out = str(tmp_path / "src16_long")
    run_experiment(src_cfg, src_out, workers=1,
                   checkpoint_at=(50_000, 200_000, 10_000_000))

    def ck(s):
        return _ckpt(src_out, s)

    base_out = str(tmp_path / "scratch128")
    run_experiment(_experiment(128, 250_000, 4), base_out, workers=4)
    base_curve, _ = _per_trial_curves(base_out)
    base_sm = base_curve.smoothed()

    def score(out_dir):
        lc, _ = _per_trial_curves(out_dir)
        sm = lc.smoothed()
        horizon = min(sm.grid()[-1], base_sm.grid()[-1])
        return analysis.transfer_score(sm, base_sm, horizon)

    scores = {}
    for label, steps, tb in (
        ("pnn_2e5", 200_000,
         TransferBlock(kind="pnn", variant=pnn.STANDARD, source_checkpoint=ck(200_000))),
        ("pnn_1e7", 10_000_000,
         TransferBlock(kind="pnn", variant=pnn.STANDARD, source_checkpoint=ck(10_000_000))),
        ("ft_5e4", 50_000,
         TransferBlock(kind="finetune", strategy=transfer.FINE_TUNE_ALL,
                       source_checkpoint=ck(50_000))),
        ("ft_1e7", 10_000_000,
         TransferBlock(kind="finetune", strategy=transfer.FINE_TUNE_ALL,
                       source_checkpoint=ck(10_000_000))),
    ):
        out = str(tmp_path / label)
        run_experiment(_experiment(128, 250_000, 4, transfer_block=tb), out, workers=4)
        scores[label] = score(out)
    pnn_stable = abs(scores["pnn_1e7"] - scores["pnn_2e5"]) <= 0.2 * scores["pnn_2e5"]
    ft_declines = scores["ft_1e7"] < scores["ft_5e4"]
    report(
        12, pnn_stable and ft_declines,
        f"PNN scores 2e5/1e7 sources: {scores['pnn_2e5']:.2f}/{scores['pnn_1e7']:.2f} "
        f"(within 20%); fine-tune 5e4/1e7: {scores['ft_5e4']:.2f}/{scores['ft_1e7']:.2f}",
    )


@pytest.mark.full_profile
def test_criterion_13_inconsistent_objectives(tmp_path):
    src_cfg = _experiment(16, 200_000, 1, u_ref="u0")
    src_out = str(tmp_path / "src_u0")
    run_experiment(src_cfg, src_out, workers=1)
    src_ckpt = _ckpt(src_out, 200_000)

    base_out = str(tmp_path / "scratch_u1")
    run_experiment(_experiment(128, 250_000, 4, u_ref="u1"), base_out, workers=4)
    base_curve, _ = _per_trial_curves(base_out)
    base_sm = base_curve.smoothed()

    def score(tb, label):
        out = str(tmp_path / label)
        run_experiment(
            _experiment(128, 250_000, 4, u_ref="u1", transfer_block=tb), out, workers=4
        )
        lc, _ = _per_trial_curves(out)
        sm = lc.smoothed()
        horizon = min(sm.grid()[-1], base_sm.grid()[-1])
        return analysis.transfer_score(sm, base_sm, horizon)

    ft = score(
        TransferBlock(kind="finetune", strategy=transfer.FINE_TUNE_ALL,
                      source_checkpoint=src_ckpt), "ft_u0u1",
    )
    pn = score(
        TransferBlock(kind="pnn", variant=pnn.STANDARD, source_checkpoint=src_ckpt),
        "pnn_u0u1",
    )
    report(
        13, ft < 1.0 and pn > 1.2,
        f"u0->u1 scores: fine-tune-all {ft:.2f} (<1.0), Standard PNN {pn:.2f} (>1.2)",
    )


@pytest.mark.scaled
def test_criterion_14_aps_structure(tmp_path):
    src_cfg = _experiment(16, 100_000, 1)
    src_out = str(tmp_path / "src16")
    run_experiment(src_cfg, src_out, workers=1)
    src_ckpt = _ckpt(src_out, 100_000)

    tb = TransferBlock(kind="pnn", variant=pnn.STANDARD, source_checkpoint=src_ckpt)
    tr_cfg = _experiment(32, 100_000, 1, transfer_block=tb)
    tr_out = str(tmp_path / "pnn32")
    run_experiment(tr_cfg, tr_out, workers=1)
    agent = Agent.load(_ckpt(tr_out, 100_000))
    env = _env_for(tr_cfg, tr_out)
    amap = analysis.aps_map(agent, env, layers=[1, 3], episodes=4)
    aps_l1_src = amap.aps[0, 0]
    aps_l3_src = amap.aps[1, 0]

    seeds = list(range(800_000, 800_004))
    baseline, _ = evaluate(agent, env, 4, seeds)
    drops = {}
    for layer in (2, 3):
        name = f"adapt.l{layer}.c1.alpha"
        saved = agent.actor.store[name]
        agent.actor.store[name] = 0.0
        mean, _ = evaluate(agent, env, 4, seeds)
        agent.actor.store[name] = saved
        drops[layer] = baseline - mean
    ok = aps_l1_src > 0.8 and aps_l3_src < 0.2 and drops[2] > drops[3]
    report(
        14, ok,
        f"APS(1,source)={aps_l1_src:.2f} (>0.8), APS(3,source)={aps_l3_src:.2f} "
        f"(<0.2); ablation drop layer2 {drops[2]:.3f} > layer3 {drops[3]:.3f}",
    )
