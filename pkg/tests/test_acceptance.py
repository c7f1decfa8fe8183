"""End-to-end acceptance battery.

One test per numbered criterion, each printing a single pass/fail line
with its measurements (visible under ``pytest -v -s`` or in the failure
report). Expensive chain batches are cached at module scope so trend
criteria reuse the runs they compare against. Numeric thresholds were
confirmed by pilot runs at the shipped configuration and are frozen here;
see docs/calibration.md for the sweep behind them.

Criterion 6's sliced-distance clause is expected to fail at the shipped
operating point: no examined configuration reaches erased mass below 0.05
while keeping the safe survivors within 1.5x of the oracle's own sampling
noise. The test states the measured ratio rather than relaxing the bound;
docs/calibration.md records the frontier.
"""

import time

import numpy as np

from egloce.config import default_config_dict, parse_config
from egloce.guidance import GuidanceConfig, dual_energy_update, quadratic_term
from egloce.harness import sweep as run_sweep
from egloce.metrics import assign_components, mode_mass, safe_tv, sliced_w2
from egloce.mixture import GaussianMixture
from egloce.sampler import (
    run_chain,
    run_chains,
    tweedie_estimate,
    vanilla_chain,
    vanilla_chains,
)
from egloce.schedule import step_alpha_bars
from egloce.semantics import (
    concept_space_from_world,
    default_linear_decoder,
    energy_grad,
    repulsion_energy,
    text_embed,
)

CFG = parse_config(default_config_dict())
GMM = CFG.world.prompt(CFG.prompt_id).mixture
SAFE = GMM.safe_oracle()
WORKERS = 4

# Averaged sliced-distance protocol: one draw per seed for the numerator,
# disjoint seed pairs for the oracle's self-distance, fixed projections.
W2_DRAWS = 8
W2_PROJECTIONS = 256
W2_NUMERATOR_SEEDS = [50 + k for k in range(W2_DRAWS)]
W2_SELF_SEED_PAIRS = [(300 + 2 * k, 301 + 2 * k) for k in range(W2_DRAWS)]

_cache = {}


def _guided(**overrides):
    key = tuple(sorted(overrides.items()))
    if key not in _cache:
        g = CFG.guidance
        if overrides:
            g = g.with_(**overrides)
        _cache[key] = run_chains(
            CFG.world,
            CFG.prompt_id,
            CFG.concept,
            CFG.schedule,
            g,
            CFG.master_seed,
            CFG.chains,
            num_steps=CFG.num_steps,
            space=CFG.space,
            decoder=CFG.decoder,
            workers=WORKERS,
        )
    return _cache[key]


def _erased_and_tv(pts):
    mass = mode_mass(pts, GMM)
    return float(mass[GMM.unsafe_mask].sum()), safe_tv(mass, GMM)


def _report(num, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    return ok


def test_criterion_01_tweedie_matches_conjugate_posterior():
    mu = np.array([1.5, -0.7])
    var = np.array([0.8, 1.3])
    single = GaussianMixture(
        weights=np.array([1.0]), means=mu[None, :], variances=var[None, :]
    )
    rng = np.random.default_rng(101)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        t = int(rng.integers(1, CFG.schedule.num_steps + 1))
        a = CFG.schedule.alpha_bar(t)
        z = rng.normal(scale=3.0, size=2)
        eps = single.diffused(a).epsilon_pred(z, a)
        est = tweedie_estimate(z, eps, a)
        # Conjugate posterior mean of x0 given z = sqrt(a) x0 + sqrt(1-a) e.
        gain = np.sqrt(a) * var / (a * var + (1.0 - a))
        post = mu + gain * (z - np.sqrt(a) * mu)
        worst = max(worst, float(np.max(np.abs(est - post))))
    elapsed = time.perf_counter() - started
    ok = worst < 1e-10 and elapsed < 1.0
    assert _report(
        1, ok, f"max |error| {worst:.2e} over 1000 states, {elapsed:.2f}s"
    )


def test_criterion_02_gradient_suite():
    rng = np.random.default_rng(202)
    started = time.perf_counter()

    worst_score = 0.0
    h = 1e-6
    for gmm in (GMM, CFG.world.blend.diffused(0.3)):
        for _ in range(100):
            z = rng.normal(scale=3.0, size=2)
            g = gmm.score(z)
            fd = np.empty(2)
            for j in range(2):
                zp, zm = z.copy(), z.copy()
                zp[j] += h
                zm[j] -= h
                fd[j] = (gmm.log_density(zp) - gmm.log_density(zm)) / (2 * h)
            worst_score = max(
                worst_score,
                float(np.linalg.norm(fd - g)) / max(float(np.linalg.norm(g)), 1e-12),
            )

    worst_energy = 0.0
    for decoder in (CFG.decoder, default_linear_decoder()):
        space = concept_space_from_world(CFG.world, decoder, tau=CFG.space.tau)
        e_c = text_embed(space, CFG.concept)
        e_p = text_embed(space, CFG.world.prompt(CFG.prompt_id).prompt_text)
        for emb, sign in ((e_c, 1.0), (e_p, -1.0)):
            for _ in range(50):
                z = rng.normal(scale=2.5, size=2)
                g = energy_grad(space, decoder, z, emb, sign=sign)
                fd = np.empty(2)
                for j in range(2):
                    zp, zm = z.copy(), z.copy()
                    zp[j] += h
                    zm[j] -= h
                    fd[j] = (
                        sign * repulsion_energy(space, decoder, zp, emb)
                        - sign * repulsion_energy(space, decoder, zm, emb)
                    ) / (2 * h)
                # Basin centers are stationary plateaus where the exact
                # gradient drops below what central differences on an O(1)
                # energy resolve; the floor makes those count as agreement.
                denom = max(
                    float(np.linalg.norm(g)), float(np.linalg.norm(fd)), 1e-5
                )
                worst_energy = max(
                    worst_energy, float(np.linalg.norm(fd - g)) / denom
                )

    worst_stale = 0.0
    cfg = CFG.guidance
    space, decoder = CFG.space, CFG.decoder
    e_c = text_embed(space, CFG.concept)
    e_p = text_embed(space, CFG.world.prompt(CFG.prompt_id).prompt_text)
    for _ in range(200):
        a = float(rng.uniform(0.02, 0.98))
        z = rng.normal(scale=2.0, size=2)
        eps = rng.normal(size=2)
        z_new, _ = dual_energy_update(z, eps, a, e_p, e_c, cfg, space, decoder)
        z0 = tweedie_estimate(z, eps, a)
        expect = z - (
            cfg.lambda_rep * energy_grad(space, decoder, z0, e_c, 1.0)
            + cfg.lambda_ret * energy_grad(space, decoder, z0, e_p, -1.0)
        ) / np.sqrt(a)
        num = float(np.linalg.norm(z_new - expect))
        worst_stale = max(worst_stale, num / max(float(np.linalg.norm(expect)), 1e-12))

    elapsed = time.perf_counter() - started
    ok = (
        worst_score < 1e-5
        and worst_energy < 1e-4
        and worst_stale < 1e-12
        and elapsed < 5.0
    )
    assert _report(
        2,
        ok,
        f"score fd {worst_score:.2e}, energy fd {worst_energy:.2e}, "
        f"stale identity {worst_stale:.2e}, {elapsed:.2f}s",
    )


def test_criterion_03_disabled_guidance_reduces_to_vanilla():
    base = CFG.guidance
    reductions = {
        "K=0": base.with_(K=0),
        "no window": base.with_(window=None),
        "lambda=0": base.with_(lambda_rep=0.0, lambda_ret=0.0),
    }
    started = time.perf_counter()
    bad = []
    for seed in range(100):
        plain = vanilla_chain(CFG.world, CFG.prompt_id, CFG.schedule, base.omega, seed)
        for name, g in reductions.items():
            guided = run_chain(
                CFG.world,
                CFG.prompt_id,
                CFG.concept,
                CFG.schedule,
                g,
                seed=seed,
                space=CFG.space,
                decoder=CFG.decoder,
            ).final
            if not np.array_equal(guided, plain):
                bad.append((name, seed))
    elapsed = time.perf_counter() - started
    ok = not bad and elapsed < 5.0
    assert _report(
        3,
        ok,
        f"bit-identical over 100 seeds x {len(reductions)} reductions, {elapsed:.2f}s"
        + (f"; diverged: {bad[:3]}" if bad else ""),
    )


def test_criterion_04_vanilla_weights():
    started = time.perf_counter()
    pts = vanilla_chains(
        CFG.world,
        CFG.prompt_id,
        CFG.schedule,
        CFG.guidance.omega,
        CFG.master_seed,
        20000,
        workers=WORKERS,
    )
    elapsed = time.perf_counter() - started
    mass = mode_mass(pts, GMM)
    dev = float(np.max(np.abs(mass - GMM.weights)))
    # Binomial: sd of a 0.25 frequency at n=20000 is 0.0031, so 0.02 is a
    # 6.5-sigma allowance; a correct sampler fails this by chance ~1e-10.
    ok = dev < 0.02 and elapsed < 60.0
    assert _report(
        4,
        ok,
        f"max |mass - weight| {dev:.4f} over 20000 chains "
        f"(masses {np.array2string(mass, precision=3)}), {elapsed:.1f}s",
    )


def test_criterion_05_default_config_erases():
    started = time.perf_counter()
    pts = _guided()
    elapsed = time.perf_counter() - started
    erased, _ = _erased_and_tv(pts)
    # Pilot at this configuration and seed measured 0.0406.
    ok = erased < 0.05 and elapsed < 120.0
    assert _report(
        5,
        ok,
        f"erased mass 0.25 -> {erased:.4f} over {CFG.chains} chains "
        f"(threshold 0.05), {elapsed:.1f}s",
    )


def test_criterion_06_fidelity_of_safe_survivors():
    pts = _guided()
    erased, stv = _erased_and_tv(pts)
    assigned = assign_components(pts, GMM)
    safe_pts = pts[~GMM.unsafe_mask[assigned]]
    n = safe_pts.shape[0]
    w2 = float(
        np.mean(
            [
                sliced_w2(
                    safe_pts,
                    SAFE.sample(n, seed).points,
                    n_projections=W2_PROJECTIONS,
                )
                for seed in W2_NUMERATOR_SEEDS
            ]
        )
    )
    self_dist = float(
        np.mean(
            [
                sliced_w2(
                    SAFE.sample(n, sa).points,
                    SAFE.sample(n, sb).points,
                    n_projections=W2_PROJECTIONS,
                )
                for sa, sb in W2_SELF_SEED_PAIRS
            ]
        )
    )
    ratio = w2 / self_dist
    tv_ok = stv < 0.10
    w2_ok = w2 < 1.5 * self_dist
    ok = tv_ok and w2_ok
    assert _report(
        6,
        ok,
        f"safe_tv {stv:.4f} (< 0.10: {tv_ok}); sliced-w2 {w2:.4f} vs "
        f"1.5 x self {self_dist:.4f} -> ratio {ratio:.2f} (< 1.5: {w2_ok}); "
        f"n_safe {n}",
    )


def test_criterion_07_more_inner_iterations_erase_more():
    ks = (1, 3, 5, 7)
    erased = [_erased_and_tv(_guided(K=k))[0] for k in ks]
    non_increasing = all(a >= b for a, b in zip(erased, erased[1:]))
    strict_ends = erased[0] > erased[-1]
    ok = non_increasing and strict_ends
    assert _report(
        7,
        ok,
        "erased by K "
        + ", ".join(f"K{k}={e:.4f}" for k, e in zip(ks, erased))
        + f"; non-increasing {non_increasing}, strict K1>K7 {strict_ends}",
    )


def test_criterion_08_retention_is_a_counterweight():
    on_erased, on_tv = _erased_and_tv(_guided())
    off_erased, off_tv = _erased_and_tv(_guided(lambda_ret=0.0))
    erase_ok = off_erased <= on_erased
    margin = off_tv - on_tv
    tv_ok = margin >= 0.02
    ok = erase_ok and tv_ok
    assert _report(
        8,
        ok,
        f"retention off: erased {off_erased:.4f} <= {on_erased:.4f} ({erase_ok}); "
        f"safe_tv {off_tv:.4f} vs {on_tv:.4f}, margin {margin:.4f} >= 0.02 ({tv_ok})",
    )


def test_criterion_09_window_and_strength_trends():
    ends = (35, 40, 45)
    win = [_erased_and_tv(_guided(window=(20, e))) for e in ends]
    win_erased = [e for e, _ in win]
    win_monotone = all(a >= b for a, b in zip(win_erased, win_erased[1:]))
    win_tv_ok = win[-1][1] >= win[0][1]

    scales = (0.6, 1.0, 1.4, 1.8)
    sc = [
        _erased_and_tv(
            _guided(
                lambda_rep=s * CFG.guidance.lambda_rep,
                lambda_ret=s * CFG.guidance.lambda_ret,
            )
        )
        for s in scales
    ]
    sc_erased = [e for e, _ in sc]
    sc_monotone = all(a >= b for a, b in zip(sc_erased, sc_erased[1:]))
    sc_tv_ok = sc[-1][1] >= sc[1][1]

    ok = win_monotone and win_tv_ok and sc_monotone and sc_tv_ok
    assert _report(
        9,
        ok,
        "window erased "
        + ", ".join(f"t_end{e}={v:.4f}" for e, v in zip(ends, win_erased))
        + f" (monotone {win_monotone}, tv grows {win_tv_ok}); scale erased "
        + ", ".join(f"{s:g}x={v:.4f}" for s, v in zip(scales, sc_erased))
        + f" (monotone {sc_monotone}, tv grows {sc_tv_ok})",
    )


def test_criterion_10_quadratic_descent_under_step_bound():
    abars = step_alpha_bars(CFG.schedule, CFG.num_steps)
    rng = np.random.default_rng(1010)
    center = np.array([0.7, -1.1])
    term = quadratic_term(center)
    violations = 0
    checked = 0
    for step in (5, 25, 45):
        a = float(abars[step])
        for _ in range(100):
            lam = float(rng.uniform(0.0, a) * 0.999)
            if lam <= 0.0:
                continue
            cfg = GuidanceConfig(
                lambda_rep=lam, lambda_ret=0.0, K=1, window=None
            )
            z = rng.normal(scale=2.0, size=2)
            eps = rng.normal(size=2)
            for _ in range(3):
                e_before = term.value(tweedie_estimate(z, eps, a))
                z, _ = dual_energy_update(
                    z, eps, a, None, None, cfg, rep_term=term, ret_term=term
                )
                e_after = term.value(tweedie_estimate(z, eps, a))
                checked += 1
                if not e_after < e_before:
                    violations += 1
    ok = violations == 0
    assert _report(
        10,
        ok,
        f"{checked} inner iterations across steps 5/25/45, "
        f"{violations} descent violations",
    )


def test_criterion_11_sweep_csvs_worker_invariant(tmp_path):
    d = default_config_dict()
    d["run"]["chains"] = 600
    d["sweep"] = {"axis": "lambda", "values": [[0.2, 0.175], [0.2, 0.0]]}
    cfg = parse_config(d)
    outputs = {}
    for workers in (1, 4, 8):
        out = tmp_path / f"w{workers}"
        run_sweep(cfg, str(out), workers=workers)
        # timings.csv is wall-clock and excluded by design; every other
        # CSV must be byte-identical.
        outputs[workers] = {
            p.name: p.read_bytes()
            for p in sorted(out.glob("*.csv"))
            if p.name != "timings.csv"
        }
    names = set(outputs[1])
    same = all(outputs[1] == outputs[w] for w in (4, 8))
    ok = same and "metrics.csv" in names and len(names) == 3
    assert _report(
        11,
        ok,
        f"{sorted(names)} byte-identical across workers 1/4/8: {same}",
    )
