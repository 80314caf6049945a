"""Acceptance suite: one test per headline criterion.

Each test prints a single ``[criterion N] PASS|FAIL`` line with the measured
numbers; the lines are repeated in the terminal summary. Criteria 6-8 train
full agents and are marked ``slow``.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from cp3er import gradcheck
from cp3er import ndgrad as nd
from cp3er.actor import ConsistencyActor, q_loss, regularized_loss
from cp3er.consistency import NoiseSchedule, consistency_fn, consistency_loss
from cp3er.critic import Critic, critic_loss
from cp3er.diagnostics import dormant_report, neuron_scores
from cp3er.envs import OPTIMAL_BAND, SUBOPTIMAL_BAND
from cp3er.harness import train
from cp3er.nets import EmaTarget, Mlp, MlpSpec
from cp3er.presets import preset_runs
from cp3er.replay import ReplayBuffer, Transition, ppe_weight

RESULTS: dict[int, str] = {}


def report(capsys, n: int, ok: bool, detail: str) -> None:
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[n] = line
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


# -- 1. gradients -----------------------------------------------------------

OPS = {
    "add": lambda a, b: nd.add(a, b),
    "sub": lambda a, b: nd.sub(a, b),
    "mul": lambda a, b: nd.mul(a, b),
    "matmul": lambda a, b: nd.matmul(a, nd.reshape(b, (4, 3))),
    "linear": lambda a, b: nd.linear(a, nd.reshape(b, (4, 3)), b[0, :3]),
    "concat": lambda a, b: nd.concat([a, b], axis=1),
    "scale": lambda a, b: nd.scale(a, 1.7),
    "neg": lambda a, b: nd.neg(a),
    "relu": lambda a, b: nd.relu(a),
    "tanh": lambda a, b: nd.tanh(a),
    "sigmoid": lambda a, b: nd.sigmoid(a),
    "exp": lambda a, b: nd.exp(a),
    "log": lambda a, b: nd.log(nd.add(nd.square(a), 0.5)),
    "softplus": lambda a, b: nd.softplus(a),
    "square": lambda a, b: nd.square(a),
    "clip": lambda a, b: nd.clip(a, -0.7, 0.9),
    "sum": lambda a, b: nd.sum(a, axis=1),
    "mean": lambda a, b: nd.mean(a, axis=0),
    "log_sum_exp": lambda a, b: nd.log_sum_exp(a, axis=1),
    "log_softmax": lambda a, b: nd.log_softmax(a, axis=1),
    "softmax": lambda a, b: nd.softmax(a, axis=1),
    "reshape": lambda a, b: nd.reshape(a, (2, 6)),
    "broadcast_to": lambda a, b: nd.broadcast_to(nd.reshape(a, (3, 1, 4)), (3, 2, 4)),
    "getitem": lambda a, b: a[1:, ::2],
}


def _away_from_kinks(x: np.ndarray) -> np.ndarray:
    for kink in (0.0, -0.7, 0.9):
        near = np.abs(x - kink) < 1e-3
        x[near] += 0.01
    return x


def _op_errors(seeds) -> dict[str, float]:
    worst = {}
    for name, fn in OPS.items():
        errs = []
        for seed in seeds:
            rng = np.random.default_rng(seed)
            a = nd.parameter(_away_from_kinks(rng.normal(size=(3, 4))))
            b = nd.parameter(rng.normal(size=(3, 4)))
            probe = rng.normal(size=fn(a, b).shape)
            errs.append(gradcheck.check(lambda: nd.sum(nd.mul(fn(a, b), nd.Tensor(probe))), [a, b]))
        worst[name] = max(errs)
    errs = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        x = nd.parameter(rng.normal(size=(2, 2, 7, 7)))
        k = nd.parameter(rng.normal(size=(3, 2, 3, 3)))
        bias = nd.parameter(rng.normal(size=3))
        stride = 1 + seed % 2
        probe = rng.normal(size=nd.conv2d(x, k, bias, stride).shape)
        errs.append(gradcheck.check(lambda: nd.sum(nd.mul(nd.conv2d(x, k, bias, stride), nd.Tensor(probe))),
                                    [x, k, bias]))
    worst["conv2d"] = max(errs)
    return worst


def _loss_errors(seeds) -> dict[str, float]:
    worst = {"q_loss": 0.0, "regularized_loss": 0.0, "consistency_loss": 0.0, "critic_loss": 0.0}
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        actor = ConsistencyActor(3, 2, 6, 2, eta=0.5, rng=rng)
        critic = Critic(3, 2, 6, 2, 3, rng)
        # zero-initialized biases put dead rows exactly on a ReLU kink; move them off it
        for p in actor.parameters() + critic.parameters():
            if p.data.ndim == 1:
                p.data[...] = 0.1 * rng.normal(size=p.shape)
        target = Mlp(critic.net.spec, params=EmaTarget.of(critic.net.params).shadow)
        feats, reg = rng.normal(size=(4, 3)), rng.uniform(-1, 1, (4, 2))
        r, nxt = rng.normal(size=4), rng.normal(size=(4, 3))
        s = int(rng.integers(1 << 30))
        cases = {
            "q_loss": (lambda: q_loss(actor, critic, feats, np.random.default_rng(s)), actor.parameters()),
            "regularized_loss": (lambda: regularized_loss(actor, critic, feats, reg, np.random.default_rng(s)),
                                 actor.parameters()),
            "consistency_loss": (lambda: consistency_loss(actor.net, actor.ema_net, actor.schedule, nd.Tensor(feats),
                                                          reg, np.random.default_rng(s)), actor.parameters()),
            "critic_loss": (lambda: critic_loss(critic, target, lambda f: reg, nd.Tensor(feats), reg, r,
                                                np.full(4, 0.97), nd.Tensor(nxt), np.random.default_rng(s), 5),
                            critic.parameters()),
        }
        for name, (fn, params) in cases.items():
            worst[name] = max(worst[name], gradcheck.check(fn, params))
    return worst


def test_criterion_1_gradient_suite(capsys):
    t0 = time.perf_counter()
    seeds = range(20)
    ops, losses = _op_errors(seeds), _loss_errors(seeds)
    elapsed = time.perf_counter() - t0
    ok = max(ops.values()) < 1e-4 and max(losses.values()) < 1e-3 and elapsed < 60
    worst_op = max(ops, key=ops.get)
    detail = (f"{len(ops)} ops x 20 instances, worst {worst_op} {ops[worst_op]:.1e} (< 1e-4); "
              + ", ".join(f"{k} {v:.1e}" for k, v in losses.items()) + f" (< 1e-3); {elapsed:.1f}s")
    report(capsys, 1, ok, detail)


# -- 2. PPE weights ---------------------------------------------------------


def test_criterion_2_ppe_exactness(capsys):
    t0 = time.perf_counter()
    halves = [ppe_weight(a, 5000, 5000) for a in (0.5, 1.0, 2.0, 4.0)]
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(100, (1,), 1)
    for s in np.sort(rng.choice(400, size=100, replace=False)):
        buf.push(Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), False, int(s)))
    p = buf.ppe_probabilities(2.0)
    draws = np.concatenate([buf.sample_ppe(2.0, 100, rng) for _ in range(1000)])
    tv = 0.5 * np.abs(np.bincount(draws, minlength=100) / draws.size - p).sum()
    elapsed = time.perf_counter() - t0
    ok = all(h == 0.5 for h in halves) and tv < 0.02 and draws.size == 100_000 and elapsed < 30
    report(capsys, 2, ok, f"w(dt=|B|) = {halves} for alpha 0.5/1/2/4; TV {tv:.4f} over 1e5 draws (< 0.02); "
                          f"{elapsed:.1f}s")


# -- 3. boundary condition ----------------------------------------------------


def test_criterion_3_boundary(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    sched = NoiseSchedule()
    nets = {d: Mlp(MlpSpec(3 + d + 1, d, 16), rng) for d in (1, 2, 3)}
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 4))
        net = nets[d]
        a = rng.uniform(-1, 1, (1, d)) + sched.epsilon * rng.standard_normal((1, d))
        with nd.no_grad():
            out = consistency_fn(net, sched, nd.Tensor(rng.normal(size=(1, 3))), a, sched.epsilon).data
        worst = max(worst, float(np.max(np.abs(out - a))))
    elapsed = time.perf_counter() - t0
    report(capsys, 3, worst < 1e-12 and elapsed < 5, f"max |f(a, eps) - a| = {worst:.1e} over 1000 cases; "
                                                     f"{elapsed:.2f}s")


# -- 4. MoG critic oracle -----------------------------------------------------


def test_criterion_4_mog_recovers_generator(capsys):
    t0 = time.perf_counter()
    w, mu, sd = np.array([0.3, 0.7]), np.array([-1.0, 2.0]), np.array([0.3, 0.5])
    true_mean = float(w @ mu)
    true_var = float(w @ (sd**2 + mu**2)) - true_mean**2
    rng = np.random.default_rng(0)
    critic = Critic(2, 1, 32, 2, 3, rng)
    target = Mlp(critic.net.spec, params=EmaTarget.of(critic.net.params).shadow)
    opt = nd.Adam(critic.parameters(), lr=3e-3)
    b = 128
    s, a = nd.Tensor(np.tile([0.5, -0.5], (b, 1))), np.zeros((b, 1))
    tape = nd.Tape()
    for _ in range(3000):
        comp = rng.choice(2, size=b, p=w)
        r = rng.normal(mu[comp], sd[comp])
        with nd.use_tape(tape):
            # zero discount: the target distribution is the reward itself
            loss = critic_loss(critic, target, lambda f: a, s, a, r, np.zeros(b), s, rng, 1)
            tape.backward(loss)
            opt.step()
            tape.reset()
    with nd.no_grad():
        d = critic(s[:1], nd.Tensor(a[:1]))
    W, M, S = d.weights.data[0], d.means.data[0], d.stds.data[0]
    mean = float(W @ M)
    var = float(W @ (S**2 + M**2)) - mean**2
    elapsed = time.perf_counter() - t0
    em, ev = abs(mean - true_mean) / abs(true_mean), abs(var - true_var) / true_var
    ok = em < 0.1 and ev < 0.1 and elapsed < 120
    report(capsys, 4, ok, f"mean {mean:.3f} vs {true_mean:.3f} ({em:.1%}), var {var:.3f} vs {true_var:.3f} "
                          f"({ev:.1%}) after 3000 steps; {elapsed:.1f}s")


# -- 5. dormant ratio ---------------------------------------------------------


def test_criterion_5_dormant_oracle(capsys):
    t0 = time.perf_counter()
    rep = dormant_report([np.array([[0.0, 1.0], [0.0, 1.0]])], 0.025)
    example = (neuron_scores(np.array([[0.0, 1.0]])).tolist(), rep.ratio)
    rng = np.random.default_rng(0)
    scale_ok = perm_ok = True
    for _ in range(100):
        h = np.abs(rng.normal(size=(int(rng.integers(1, 50)), int(rng.integers(1, 40))))) * (rng.random() < 0.9)
        h[:, rng.random(h.shape[1]) < 0.3] = 0.0
        c = float(np.exp(rng.uniform(-5, 5)))
        s = neuron_scores(h)
        scale_ok &= np.allclose(neuron_scores(c * h), s, rtol=1e-9, atol=0)
        scale_ok &= dormant_report([c * h]).layers[0].dormant == dormant_report([h]).layers[0].dormant
        perm = rng.permutation(h.shape[1])
        perm_ok &= np.allclose(neuron_scores(h[:, perm]), s[perm], rtol=1e-12, atol=0)
    elapsed = time.perf_counter() - t0
    ok = example == ([0.0, 2.0], 0.5) and scale_ok and perm_ok and elapsed < 5
    report(capsys, 5, ok, f"scores {example[0]}, ratio {example[1]}; scale invariance {scale_ok}, "
                          f"permutation {perm_ok} on 100 layers; {elapsed:.2f}s")


# -- 9. determinism -----------------------------------------------------------


def test_criterion_9_determinism(capsys, tmp_path):
    t0 = time.perf_counter()
    cfg = preset_runs("ablations", seeds=(3,))[0].config.replace(
        steps=1200, seed_frames=400, exploration_steps=400, log_interval=200, dormant_interval=50, eval_episodes=1)
    train(cfg, tmp_path / "a")
    train(cfg, tmp_path / "b")
    a, b = (tmp_path / "a" / "metrics.csv").read_bytes(), (tmp_path / "b" / "metrics.csv").read_bytes()
    elapsed = time.perf_counter() - t0
    ok = a == b and len(a.splitlines()) == 7 and elapsed < 300
    report(capsys, 9, ok, f"{cfg.env} {cfg.actor_variant}: metrics.csv identical={a == b} "
                          f"({len(a)} bytes, {len(a.splitlines()) - 1} rows); {elapsed:.1f}s")


# -- 10. n-step oracle ----------------------------------------------------------


def _brute_nstep(rewards, dones, terms, newest, cap, i, n, gamma):
    acc, g, k = 0.0, 1.0, i
    for j in range(n):
        k = (i + j) % cap
        acc += g * rewards[k]
        g *= gamma
        if terms[k]:
            return acc, 0.0, k
        if dones[k] or k == newest:
            break
    return acc, g, k


def test_criterion_10_nstep_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    mismatches = rows = boundaries = 0
    for _ in range(10_000):
        cap = int(rng.integers(1, 16))
        buf = ReplayBuffer(cap, (1,), 1)
        for step in range(int(rng.integers(1, 3 * cap + 1))):
            done = bool(rng.random() < 0.3)
            term = done and bool(rng.random() < 0.5)
            buf.push(Transition(np.full(1, step), np.zeros(1), float(rng.normal()), np.full(1, step + 0.5),
                                done, step, term))
        n, gamma = int(rng.integers(1, 6)), float(rng.uniform(0, 1))
        idx = rng.integers(0, len(buf), size=4)
        batch = buf.assemble_nstep(idx, n, gamma)
        rewards, dones, terms = buf.rewards.tolist(), buf.dones.tolist(), buf.terminals.tolist()
        newest = (buf.cursor - 1) % cap
        boundaries += int(any(dones[: len(buf)]))
        for row, i in enumerate(idx.tolist()):
            acc, disc, last = _brute_nstep(rewards, dones, terms, newest, cap, i, n, gamma)
            rows += 1
            same = (batch.reward_sum[row] == acc and batch.discount[row] == disc
                    and batch.next_obs[row, 0] == buf.next_obs[last, 0])
            mismatches += not same
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30
    report(capsys, 10, ok, f"{mismatches} mismatches in {rows} rows over 10^4 buffers "
                           f"({boundaries} with episode boundaries), exact equality; {elapsed:.1f}s")


# -- 6. toy bandit ------------------------------------------------------------

MID_BANDS = {"optimal": OPTIMAL_BAND, "suboptimal": SUBOPTIMAL_BAND}


def _band_mass(counts: np.ndarray, band) -> float:
    edges = np.linspace(-1.0, 1.0, counts.size + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    return float(counts[(mid >= band[0]) & (mid <= band[1])].sum() / counts.sum())


@pytest.mark.slow
def test_criterion_6_toy_bandit(capsys, tmp_path):
    t0 = time.perf_counter()
    runs = preset_runs("toy-bandit-compare")
    recs = {r.name: train(r.config, tmp_path / r.name) for r in runs}
    elapsed = time.perf_counter() - t0
    ret = {name: rec.final_eval[0] for name, rec in recs.items()}
    cac = [v for k, v in ret.items() if k.startswith("consistency_ac/")]
    mx = [v for k, v in ret.items() if k.startswith("maxent_cp_uniform/")]
    gauss = [v for k, v in ret.items() if k.startswith("gaussian_maxent/")]
    mid_masses = []
    for name, rec in recs.items():
        if not name.startswith("maxent_cp_uniform/"):
            continue
        mid = rec.config.steps // 2
        files = sorted(Path(tmp_path / name).glob("hist_*.csv"))
        assert files, "no histogram files written"
        step = min(rec.histograms, key=lambda s: abs(s - mid))
        mid_masses.append({k: _band_mass(rec.histograms[step], b) for k, b in MID_BANDS.items()})
    a = sum(v <= 0.6 for v in cac) >= 3
    b = sum(v >= 0.9 for v in mx) >= 3
    c = all(m["optimal"] >= 0.05 and m["suboptimal"] >= 0.05 for m in mid_masses)
    fmt = lambda xs: "[" + ", ".join(f"{x:.2f}" for x in xs) + "]"  # noqa: E731
    detail = (f"(a) consistency_ac {fmt(cac)} <= 0.6: {a}; (b) maxent_cp_uniform {fmt(mx)} >= 0.9: {b}; "
              f"(c) mid-training band mass optimal {fmt([m['optimal'] for m in mid_masses])}, "
              f"suboptimal {fmt([m['suboptimal'] for m in mid_masses])} >= 0.05: {c}; "
              f"gaussian_maxent {fmt(gauss)}; {elapsed / 60:.1f} min (< 20)")
    report(capsys, 6, a and b and c and elapsed < 1200, detail)


# -- 7 and 8. pixel point-mass ------------------------------------------------

PIXEL_VARIANTS = ("cp3er", "consistency_ac", "cp3er_urb")


@pytest.fixture(scope="session")
def pixel_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("ablations")
    recs, times = {}, {}
    for run in preset_runs("ablations"):
        v = run.config.actor_variant
        if v not in PIXEL_VARIANTS:
            continue
        t0 = time.perf_counter()
        recs[(v, run.config.seed)] = train(run.config, out / run.name)
        times[(v, run.config.seed)] = time.perf_counter() - t0
    return recs, times


@pytest.mark.slow
def test_criterion_7_dormant_trend(capsys, pixel_runs):
    recs, times = pixel_runs
    seeds = sorted({s for _, s in recs})
    q_only = [recs[("consistency_ac", s)].final_dormant for s in seeds]
    cp3er = [recs[("cp3er", s)].final_dormant for s in seeds]
    wins = sum(q >= 2 * c for q, c in zip(q_only, cp3er))
    minutes = sum(t for (v, _), t in times.items() if v in ("cp3er", "consistency_ac")) / 60
    frames = {recs[k].frames for k in recs}
    ok = wins >= 3 and minutes < 120 and frames == {50_000}
    report(capsys, 7, ok, f"dormant ratio at {frames} frames: consistency_ac {[round(x, 3) for x in q_only]} vs "
                          f"cp3er {[round(x, 3) for x in cp3er]}; >= 2x in {wins}/4 seeds; {minutes:.0f} min (< 120)")


@pytest.mark.slow
def test_criterion_8_ablation_order(capsys, pixel_runs):
    recs, times = pixel_runs
    seeds = sorted({s for _, s in recs})
    ev = {v: [recs[(v, s)].final_eval[0] for s in seeds] for v in PIXEL_VARIANTS}
    urb = sum(c >= u for c, u in zip(ev["cp3er"], ev["cp3er_urb"]))
    cac = sum(c > q for c, q in zip(ev["cp3er"], ev["consistency_ac"]))
    minutes = sum(times.values()) / 60
    ok = urb >= 3 and cac >= 3 and minutes < 180
    report(capsys, 8, ok, "final eval return " + "; ".join(f"{v} {[round(x, 1) for x in xs]}" for v, xs in ev.items())
           + f"; cp3er >= cp3er_urb in {urb}/4, cp3er > consistency_ac in {cac}/4; {minutes:.0f} min (< 180)")
