"""Self-contained invariant checks runnable from the command line.

Each check is a named function returning (passed, detail) and uses fixed
internal seeds, so the whole battery is deterministic. The registry keeps
the checks enumerable for both the CLI and the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend as backend_mod
from .guidance import (
    GRAD_FULL,
    GuidanceConfig,
    dual_energy_update,
    quadratic_term,
)
from .metrics import mode_mass, safe_tv, sliced_w2
from .mixture import GaussianMixture
from .sampler import (
    derive_chain_seed,
    run_chain,
    run_chains,
    tweedie_estimate,
    vanilla_chain,
)
from .schedule import build_linear, sampler_timesteps
from .semantics import (
    LatentDecoder,
    concept_space_from_world,
    default_linear_decoder,
    energy_grad,
    feature_map,
    repulsion_energy,
    retention_energy,
    text_embed,
)
from .worlds import default_world

__all__ = ["CheckResult", "CHECKS", "run_checks"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _world_setup():
    world = default_world()
    decoder = LatentDecoder()
    space = concept_space_from_world(world, decoder)
    return world, space, decoder


def check_schedule_product(schedule=None):
    """alpha_bar(t) equals alpha_bar(t-1) * alpha(t) bit-exactly."""
    s = schedule if schedule is not None else build_linear(1000, 1e-4, 0.02)
    ab = s.alpha_bars
    expect = ab[:-1] * s.alphas
    bad = int(np.sum(expect != ab[1:]))
    first_ok = ab[0] == 1.0
    return bad == 0 and first_ok, f"{bad} mismatching steps, alpha_bar(0)={ab[0]}"


def check_schedule_monotone(schedule=None):
    """alpha_bars strictly decrease and stay inside (0, 1]."""
    s = schedule if schedule is not None else build_linear(1000, 1e-4, 0.02)
    ab = s.alpha_bars
    ok = bool(np.all(np.diff(ab) < 0) and np.all(ab > 0) and np.all(ab <= 1))
    return ok, f"range [{ab.min():.3e}, {ab.max():.3e}]"


def check_subschedule_strict():
    """The 50-step sub-schedule is strictly increasing and ends at T."""
    taus = sampler_timesteps(1000, 50)
    ok = bool(np.all(np.diff(taus) >= 1) and taus[-1] == 1000 and taus[0] >= 1)
    return ok, f"first={taus[0]}, last={taus[-1]}"


def check_responsibility_normalization():
    """Posterior responsibilities sum to one at random points."""
    world, _, _ = _world_setup()
    rng = np.random.default_rng(11)
    z = rng.normal(scale=3.0, size=(200, 2))
    r = world.blend.responsibilities(z)
    err = float(np.max(np.abs(r.sum(axis=1) - 1.0)))
    return err <= 1e-12, f"max row-sum error {err:.2e}"


def check_score_matches_density_fd():
    """The closed-form score matches finite differences of log density."""
    world, _, _ = _world_setup()
    gmm = world.blend.diffused(0.4)
    rng = np.random.default_rng(12)
    pts = rng.normal(scale=2.0, size=(50, 2))
    h = 1e-6
    worst = 0.0
    for z in pts:
        g = gmm.score(z)
        fd = np.empty_like(g)
        for j in range(z.size):
            zp = z.copy()
            zp[j] += h
            zm = z.copy()
            zm[j] -= h
            fd[j] = (gmm.log_density(zp) - gmm.log_density(zm)) / (2 * h)
        denom = max(1.0, float(np.linalg.norm(g)))
        worst = max(worst, float(np.linalg.norm(fd - g)) / denom)
    return worst <= 1e-5, f"worst relative error {worst:.2e}"


def check_diffused_identity():
    """Diffusion with full signal fraction is the identity bit-exactly."""
    world, _, _ = _world_setup()
    g = world.blend
    g1 = g.diffused(1.0)
    ok = bool(
        np.array_equal(g1.means, g.means)
        and np.array_equal(g1.variances, g.variances)
        and np.array_equal(g1.weights, g.weights)
    )
    return ok, "means/variances/weights unchanged" if ok else "changed"


def check_tweedie_conjugate():
    """The noise-prediction clean estimate equals the conjugate posterior
    mean of the mixture."""
    world, _, _ = _world_setup()
    g0 = world.blend
    rng = np.random.default_rng(13)
    schedule = build_linear(1000, 1e-4, 0.02)
    worst = 0.0
    for _ in range(100):
        t = int(rng.integers(1, 1001))
        a = schedule.alpha_bar(t)
        gt = g0.diffused(a)
        z = rng.normal(scale=2.5, size=2)
        est = tweedie_estimate(z, gt.epsilon_pred(z, a), a)
        r = gt.responsibilities(z)
        sa = np.sqrt(a)
        post = np.zeros(2)
        for i in range(g0.num_components):
            var_t = a * g0.variances[i] + (1.0 - a)
            comp_mean = (sa * g0.variances[i] * z + (1.0 - a) * g0.means[i]) / var_t
            post += r[i] * comp_mean
        worst = max(worst, float(np.max(np.abs(est - post))))
    return worst <= 1e-10, f"worst abs error {worst:.2e}"


def check_feature_map_norm():
    """Feature vectors live on the unit sphere with positive entries."""
    world, space, decoder = _world_setup()
    rng = np.random.default_rng(14)
    x = rng.normal(scale=3.0, size=(200, 2))
    phi = feature_map(space, x)
    err = float(np.max(np.abs(np.sqrt(np.sum(phi * phi, axis=1)) - 1.0)))
    pos = bool(np.all(phi > 0))
    return err <= 1e-10 and pos, f"max norm error {err:.2e}, positive={pos}"


def check_energy_grad_fd():
    """Analytic energy gradients match central differences through both
    decoders."""
    world, _, _ = _world_setup()
    rng = np.random.default_rng(15)
    h = 1e-6
    worst = 0.0
    for decoder in (LatentDecoder(), default_linear_decoder()):
        space = concept_space_from_world(world, decoder)
        e_c = text_embed(space, "m0")
        e_p = text_embed(space, world.prompt("p").prompt_text)
        for emb, sign in ((e_c, 1.0), (e_p, -1.0)):
            for _ in range(25):
                z = rng.normal(scale=2.5, size=2)
                g = energy_grad(space, decoder, z, emb, sign=sign)
                fd = np.empty_like(g)
                for j in range(2):
                    zp = z.copy()
                    zp[j] += h
                    zm = z.copy()
                    zm[j] -= h
                    fp = sign * float(repulsion_energy(space, decoder, zp, emb))
                    fm = sign * float(repulsion_energy(space, decoder, zm, emb))
                    fd[j] = (fp - fm) / (2 * h)
                # One-hot embeddings are stationary at basin centers, where
                # the true gradient sits below what central differences on an
                # O(1) energy can resolve; floor the denominator there.
                denom = max(
                    float(np.linalg.norm(g)), float(np.linalg.norm(fd)), 1e-5
                )
                worst = max(worst, float(np.linalg.norm(fd - g)) / denom)
    return worst <= 1e-4, f"worst relative error {worst:.2e}"


def check_stale_epsilon_identity():
    """The stale-epsilon inner update equals its closed form."""
    world, space, decoder = _world_setup()
    e_c = text_embed(space, "m0")
    e_p = text_embed(space, world.prompt("p").prompt_text)
    cfg = GuidanceConfig(lambda_rep=0.05, lambda_ret=0.02)
    rng = np.random.default_rng(16)
    worst = 0.0
    for _ in range(50):
        a = float(rng.uniform(0.05, 0.95))
        z = rng.normal(scale=2.0, size=2)
        eps = rng.normal(size=2)
        z_new, _ = dual_energy_update(z, eps, a, e_p, e_c, cfg, space, decoder)
        z0 = tweedie_estimate(z, eps, a)
        expected = z - (
            cfg.lambda_rep * energy_grad(space, decoder, z0, e_c, 1.0)
            + cfg.lambda_ret * energy_grad(space, decoder, z0, e_p, -1.0)
        ) / np.sqrt(a)
        denom = max(1e-12, float(np.linalg.norm(expected)))
        worst = max(worst, float(np.linalg.norm(z_new - expected)) / denom)
    return worst <= 1e-12, f"worst relative error {worst:.2e}"


def check_full_chain_fd_consistency():
    """Full-chain finite differences are stable under halving the step."""
    world, space, decoder = _world_setup()
    e_c = text_embed(space, "m0")
    e_p = text_embed(space, world.prompt("p").prompt_text)
    gmm = world.blend
    a = 0.3
    gt = gmm.diffused(a)
    eps_fn = lambda q: gt.epsilon_pred(q, a)  # noqa: E731
    cfg = GuidanceConfig(grad_mode=GRAD_FULL, lambda_rep=0.05, lambda_ret=0.02)
    rng = np.random.default_rng(17)
    worst = 0.0
    from .guidance import FD_STEP, repulsion_term, retention_term

    rep = repulsion_term(space, decoder, e_c)
    ret = retention_term(space, decoder, e_p)

    def combined(z, h):
        g = np.empty_like(z)
        for j in range(z.size):
            zp = z.copy()
            zp[j] += h
            zm = z.copy()
            zm[j] -= h

            def val(q):
                z0 = tweedie_estimate(q, eps_fn(q), a)
                return cfg.lambda_rep * rep.value(z0) + cfg.lambda_ret * ret.value(z0)

            g[j] = (val(zp) - val(zm)) / (2 * h)
        return g

    for _ in range(20):
        z = rng.normal(scale=2.0, size=2)
        z_new, _ = dual_energy_update(
            z, eps_fn(z), a, e_p, e_c, cfg, space, decoder, eps_fn=eps_fn
        )
        g_update = z - z_new
        g_half = combined(z, FD_STEP / 2)
        denom = max(1e-10, float(np.linalg.norm(g_half)))
        worst = max(worst, float(np.linalg.norm(g_update - g_half)) / denom)
    return worst <= 1e-4, f"worst relative drift {worst:.2e}"


def check_quadratic_descent():
    """With a quadratic test energy the inner update strictly shrinks the
    energy whenever the step size stays below the signal fraction."""
    world, space, decoder = _world_setup()
    e_c = text_embed(space, "m0")
    e_p = text_embed(space, world.prompt("p").prompt_text)
    center = np.array([1.0, -2.0])
    term = quadratic_term(center)
    rng = np.random.default_rng(18)
    ok = True
    for _ in range(50):
        a = float(rng.uniform(0.05, 0.95))
        lam = float(rng.uniform(0.0, a)) * 0.999 + 1e-6
        cfg = GuidanceConfig(lambda_rep=lam, lambda_ret=0.0)
        z = rng.normal(scale=2.0, size=2)
        eps = rng.normal(size=2)
        before = term.value(tweedie_estimate(z, eps, a))
        z_new, _ = dual_energy_update(
            z, eps, a, e_p, e_c, cfg, space, decoder, rep_term=term
        )
        after = term.value(tweedie_estimate(z_new, eps, a))
        if before > 1e-18 and not after < before:
            ok = False
    return ok, "strict descent under the step-size bound" if ok else "descent violated"


def check_window_call_count():
    """The inner update runs exactly K times per gated step."""
    world, space, decoder = _world_setup()
    schedule = build_linear(100, 1e-4, 0.02)
    cfg = GuidanceConfig(K=3, window=(4, 9), lambda_rep=0.01, lambda_ret=0.005)
    res = run_chain(
        world, "p", "m0", schedule, cfg, seed=5, num_steps=20,
        space=space, decoder=decoder,
    )
    expected = 3 * (9 - 4 + 1)
    return (
        res.guidance_calls == expected,
        f"{res.guidance_calls} calls, expected {expected}",
    )


def check_disabled_guidance_bit_identity():
    """Zero step sizes leave the chain bitwise equal to the plain sampler."""
    world, space, decoder = _world_setup()
    schedule = build_linear(1000, 1e-4, 0.02)
    cfg = GuidanceConfig(lambda_rep=0.0, lambda_ret=0.0, K=3, window=(20, 35))
    for seed in (1, 2, 3):
        guided = run_chain(
            world, "p", "m0", schedule, cfg, seed=seed, space=space, decoder=decoder
        ).final
        plain = vanilla_chain(world, "p", schedule, cfg.omega, seed)
        if not np.array_equal(guided, plain):
            return False, f"seed {seed} diverged"
    return True, "bitwise equal on 3 seeds"


def check_batch_matches_reference():
    """The active block backend reproduces the single-chain reference."""
    world, space, decoder = _world_setup()
    schedule = build_linear(1000, 1e-4, 0.02)
    cfg = GuidanceConfig(lambda_rep=0.2, lambda_ret=0.175)
    master = 99
    n = 8
    batch = run_chains(
        world, "p", "m0", schedule, cfg, master, n, space=space, decoder=decoder
    )
    worst = 0.0
    for i in range(n):
        ref = run_chain(
            world, "p", "m0", schedule, cfg,
            seed=derive_chain_seed(master, i), space=space, decoder=decoder,
        ).final
        worst = max(worst, float(np.max(np.abs(batch[i] - ref))))
    return worst <= 1e-9, f"worst abs deviation {worst:.2e} ({backend_mod.active_backend()})"


def check_worker_invariance():
    """Chain outputs are independent of the worker count."""
    world, space, decoder = _world_setup()
    schedule = build_linear(200, 1e-4, 0.02)
    cfg = GuidanceConfig(window=(5, 8))
    a = run_chains(
        world, "p", "m0", schedule, cfg, 7, 600, num_steps=25,
        space=space, decoder=decoder, workers=1,
    )
    b = run_chains(
        world, "p", "m0", schedule, cfg, 7, 600, num_steps=25,
        space=space, decoder=decoder, workers=4,
    )
    ok = bool(np.array_equal(a, b))
    return ok, "byte-identical across workers" if ok else "outputs differ"


def check_sliced_w2_basics():
    """The sliced distance is zero on identical batches and tracks a pure
    translation."""
    rng = np.random.default_rng(19)
    pts = rng.normal(size=(400, 2))
    zero = sliced_w2(pts, pts)
    shift = np.array([2.0, 0.0])
    moved = sliced_w2(pts, pts + shift, n_projections=256)
    # E|<v, t>| over unit v in 2-D is 2|t|/pi.
    expect = 2.0 * float(np.linalg.norm(shift)) / np.pi
    ok = zero == 0.0 and abs(moved - expect) < 0.12
    return ok, f"self={zero:.3e}, translated={moved:.3f} vs ~{expect:.3f}"


def check_safe_oracle():
    """Safe restriction renormalizes and oracle samples match its modes."""
    world, _, _ = _world_setup()
    safe = world.blend.safe_oracle()
    wsum = float(safe.weights.sum())
    mass = mode_mass(safe.sample(2000, seed=20), safe)
    tv = 0.5 * float(np.sum(np.abs(mass - safe.weights)))
    full_tv = safe_tv(mode_mass(world.blend.sample(4000, seed=21), world.blend), world.blend)
    ok = abs(wsum - 1.0) <= 1e-12 and tv < 0.05 and full_tv < 0.05
    return ok, f"weight sum {wsum}, sample tv {tv:.3f}, blend safe-tv {full_tv:.3f}"


CHECKS = (
    ("schedule-product-identity", check_schedule_product),
    ("schedule-monotone", check_schedule_monotone),
    ("sub-schedule-strict", check_subschedule_strict),
    ("responsibility-normalization", check_responsibility_normalization),
    ("score-vs-fd", check_score_matches_density_fd),
    ("diffused-identity", check_diffused_identity),
    ("tweedie-conjugate", check_tweedie_conjugate),
    ("feature-map-norm", check_feature_map_norm),
    ("energy-grad-vs-fd", check_energy_grad_fd),
    ("stale-epsilon-identity", check_stale_epsilon_identity),
    ("full-chain-fd-consistency", check_full_chain_fd_consistency),
    ("quadratic-descent", check_quadratic_descent),
    ("window-call-count", check_window_call_count),
    ("disabled-guidance-bit-identity", check_disabled_guidance_bit_identity),
    ("batch-matches-reference", check_batch_matches_reference),
    ("worker-invariance", check_worker_invariance),
    ("sliced-w2-basics", check_sliced_w2_basics),
    ("safe-oracle", check_safe_oracle),
)


def run_checks() -> list:
    results = []
    for name, fn in CHECKS:
        try:
            passed, detail = fn()
        except Exception as exc:  # noqa: BLE001 - report, don't crash the battery
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name=name, passed=bool(passed), detail=detail))
    return results
