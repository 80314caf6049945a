"""Agent assembly, the training loop, evaluation and run artifacts."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import ndgrad as nd
from .actor import (
    ConsistencyActor,
    GaussianActor,
    consistency_only_loss,
    gaussian_maxent_loss,
    regularized_loss,
)
from .config import Config, format_config, variant_settings
from .consistency import NoiseSchedule
from .critic import Critic, critic_loss, q_mean
from .diagnostics import MetricsLog, dormant_ratio
from .envs import EnvSpec, make_env, random_shift_aug
from .nets import ConvEncoder, ConvEncoderSpec, EmaTarget, Mlp, ema_update
from .replay import NStepBatch, ReplayBuffer, Transition

log = logging.getLogger(__name__)


class Agent:
    """Encoder (pixels only), actor, single MoG critic and their EMA targets."""

    def __init__(self, cfg: Config, env_spec: EnvSpec, rng: np.random.Generator):
        self.cfg = cfg
        self.env_spec = env_spec
        self.settings = variant_settings(cfg)
        self.action_dim = env_spec.action_dim
        self.pixels = env_spec.obs_kind == "pixels"
        if self.pixels:
            self.encoder = ConvEncoder(ConvEncoderSpec(tuple(env_spec.obs_shape), feature_dim=cfg.feature_dim), rng)
            feat_dim = cfg.feature_dim
        else:
            self.encoder = None
            feat_dim = int(np.prod(env_spec.obs_shape))
        self.feat_dim = feat_dim
        if self.settings.policy == "consistency":
            self.actor = ConsistencyActor(
                feat_dim,
                self.action_dim,
                cfg.hidden_dim,
                cfg.hidden_layers,
                NoiseSchedule(N=cfg.schedule_points),
                eta=self.settings.eta,
                tau_ema=cfg.tau_ema,
                sampling_steps=cfg.sampling_steps,
                rng=rng,
            )
        else:
            self.actor = GaussianActor(
                feat_dim, self.action_dim, cfg.hidden_dim, cfg.hidden_layers, cfg.gaussian_temperature, rng=rng
            )
        self.critic = Critic(feat_dim, self.action_dim, cfg.hidden_dim, cfg.hidden_layers, cfg.mog_components, rng)
        self.critic_target = EmaTarget.of(self.critic.net.params, cfg.tau_ema)
        self.critic_target_net = Mlp(self.critic.net.spec, params=self.critic_target.shadow)
        enc_params = self.encoder.parameters() if self.encoder else []
        self.critic_opt = nd.Adam(self.critic.parameters() + enc_params, lr=cfg.lr)
        self.actor_opt = nd.Adam(self.actor.parameters(), lr=cfg.lr)
        self.tape = nd.Tape()

    # -- features ----------------------------------------------------------

    def encode(self, obs: np.ndarray, grad: bool = False) -> nd.Tensor:
        x = np.asarray(obs, dtype=np.float64)
        if self.encoder is None:
            return nd.Tensor(x.reshape(x.shape[0], -1))
        if grad:
            return self.encoder(nd.Tensor(x))
        with nd.no_grad():
            return self.encoder(nd.Tensor(x))

    def act(self, obs: np.ndarray, rng: np.random.Generator, explore: bool = False) -> np.ndarray:
        if explore:
            return rng.uniform(-1.0, 1.0, size=self.action_dim)
        feats = self.encode(np.asarray(obs)[None])
        return self.actor.act(feats.data, rng)[0]

    def eval_act(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        feats = self.encode(np.asarray(obs)[None]).data
        if isinstance(self.actor, GaussianActor):
            return self.actor.act(feats, rng, greedy=True)[0]
        return self.actor.act(feats, rng)[0]

    def next_actions(self, feats: nd.Tensor, rng: np.random.Generator) -> np.ndarray:
        with nd.no_grad():
            if isinstance(self.actor, GaussianActor):
                return self.actor.sample(feats, rng)[0].data
            return self.actor.sample(feats, rng).data

    # -- persistence -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        groups = {"actor": self.actor.net.params, "critic": self.critic.net.params, "critic_ema": self.critic_target.shadow}
        if isinstance(self.actor, ConsistencyActor):
            groups["actor_ema"] = self.actor.ema.shadow
        if self.encoder is not None:
            groups["encoder"] = self.encoder.params
        for g, params in groups.items():
            for k, t in params.items():
                out[f"{g}.{k}"] = t.data
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in arrays.items():
            g, k = name.split(".", 1)
            params = {
                "actor": self.actor.net.params,
                "critic": self.critic.net.params,
                "critic_ema": self.critic_target.shadow,
                "actor_ema": getattr(getattr(self.actor, "ema", None), "shadow", None),
                "encoder": self.encoder.params if self.encoder else None,
            }[g]
            params[k].data[...] = arr


# ---------------------------------------------------------------------------
# updates


def _prepare(agent: Agent, batch: NStepBatch, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    obs = batch.obs.astype(np.float64)
    nxt = batch.next_obs.astype(np.float64)
    if agent.pixels:
        obs = random_shift_aug(obs, rng, agent.cfg.aug_pad)
        nxt = random_shift_aug(nxt, rng, agent.cfg.aug_pad)
    return obs, nxt


def update_critic(agent: Agent, batch: NStepBatch, rng: np.random.Generator) -> tuple[dict, nd.Tensor]:
    """One critic step on (critic, encoder); returns losses and detached state features."""
    cfg = agent.cfg
    obs, nxt = _prepare(agent, batch, rng)
    tape = agent.tape
    with nd.use_tape(tape):
        h = agent.encode(obs, grad=True)
        h_next = agent.encode(nxt)
        loss = critic_loss(
            agent.critic,
            agent.critic_target_net,
            lambda f: agent.next_actions(f, rng),
            h,
            batch.actions,
            batch.reward_sum,
            batch.discount,
            h_next,
            rng,
            cfg.num_target_samples,
        )
        tape.backward(loss)
        agent.critic_opt.step()
        tape.reset()
    ema_update(agent.critic_target, agent.critic.net.params)
    return {"critic_loss": loss.item()}, h.detach()


def proxy_actions(agent: Agent, batch: NStepBatch, rng: np.random.Generator) -> np.ndarray:
    if agent.settings.proxy == "uniform_action":
        return rng.uniform(-1.0, 1.0, size=batch.actions.shape)
    return batch.actions


def update_actor(agent: Agent, batch: NStepBatch, feats: nd.Tensor, rng: np.random.Generator) -> dict:
    """One actor step on detached features; the encoder is not touched."""
    parts: dict = {}
    tape = agent.tape
    with nd.use_tape(tape):
        if isinstance(agent.actor, GaussianActor):
            loss = gaussian_maxent_loss(agent.actor, agent.critic, feats, rng)
        elif agent.cfg.loss_mode == "consistency_only":
            loss = consistency_only_loss(agent.actor, feats, proxy_actions(agent, batch, rng), rng)
            parts["consistency_loss"] = loss.item()
        else:
            loss = regularized_loss(agent.actor, agent.critic, feats, proxy_actions(agent, batch, rng), rng, parts)
        tape.backward(loss)
        agent.actor_opt.step()
        tape.reset()
    agent.actor.update_target()
    parts["actor_loss"] = loss.item()
    return parts


def sample_batch(agent: Agent, buf: ReplayBuffer, rng: np.random.Generator) -> tuple[NStepBatch, float | None]:
    cfg = agent.cfg
    if agent.settings.batch_sampler == "uniform":
        idx = buf.sample_uniform(cfg.batch_size, rng)
        beta = None
    else:
        idx = buf.sample_ppe(cfg.ppe_alpha, cfg.batch_size, rng)
        beta = float(buf.ppe_weights(cfg.ppe_alpha)[idx].mean())
    return buf.assemble_nstep(idx, cfg.nstep, cfg.gamma), beta


def measure_dormant(agent: Agent, buf: ReplayBuffer, rng: np.random.Generator) -> float:
    cfg = agent.cfg
    n = min(cfg.dormant_probe_size, len(buf))
    idx = buf.sample_ppe(cfg.ppe_alpha, n, rng)
    feats = agent.encode(buf.obs[idx].astype(np.float64)).data
    return dormant_ratio(agent.actor, feats, cfg.dormant_threshold, rng).ratio


def policy_histogram(agent: Agent, obs: np.ndarray, rng: np.random.Generator, samples: int, bins: int = 200):
    feats = np.repeat(agent.encode(np.asarray(obs)[None]).data, samples, axis=0)
    with nd.no_grad():
        if isinstance(agent.actor, GaussianActor):
            acts = agent.actor.sample(nd.Tensor(feats), rng)[0].data
        else:
            acts = agent.actor.sample(nd.Tensor(feats), rng).data
    counts, edges = np.histogram(acts[:, 0], bins=bins, range=(-1.0, 1.0))
    return counts, edges


def write_histogram(path: Path, counts: np.ndarray, edges: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{lo!r},{hi!r},{int(c)}\n")


# ---------------------------------------------------------------------------
# training


@dataclass
class RunRecord:
    config: Config
    rows: list[dict] = field(default_factory=list)
    checkpoint_path: Path | None = None
    wall_clock: float = 0.0
    episode_returns: list[float] = field(default_factory=list)
    dormant_history: list[tuple[int, float]] = field(default_factory=list)
    histograms: dict[int, np.ndarray] = field(default_factory=dict)
    final_dormant: float | None = None
    final_eval: tuple[float, float] | None = None
    updates: int = 0
    frames: int = 0
    out_dir: Path | None = None

    def final_mean_return(self, last: int = 1000) -> float:
        r = self.episode_returns[-last:]
        return float(np.mean(r)) if r else float("nan")


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "env", "act", "update", "probe", "eval")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


def build_env(cfg: Config, seed_offset: int = 0):
    return make_env(cfg.env, cfg.seed * 1000 + seed_offset, cfg.action_repeat, cfg.frame_stack)


def _mean(xs):
    return float(np.mean(xs)) if xs else None


def train(cfg: Config, out_dir: str | Path | None = None) -> RunRecord:
    """Collect-and-update loop: one critic and one actor update per agent step."""
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.snapshot").write_text(format_config(cfg))
    record = RunRecord(cfg, out_dir=out)
    if cfg.steps == 0:
        return record

    t0 = time.perf_counter()
    rngs = _streams(cfg.seed)
    env = build_env(cfg)
    spec = env.spec
    agent = Agent(cfg, spec, rngs["init"])
    obs_dtype = np.float16 if spec.obs_kind == "pixels" else np.float64
    buf = ReplayBuffer(cfg.capacity, spec.obs_shape, spec.action_dim, obs_dtype)
    metrics = MetricsLog(out / "metrics.csv" if out else None)
    frames_per_step = spec.action_repeat

    obs = env.reset()
    frame = 0
    agent_step = 0
    episodes = 0
    ep_return, ep_success = 0.0, False
    window: dict[str, list] = {k: [] for k in ("return", "success", "actor_loss", "critic_loss",
                                                "consistency_loss", "q_mean", "beta_mean")}
    last_dormant = None
    next_log = cfg.log_interval
    next_hist = cfg.hist_interval if cfg.hist_interval else None
    t_log = time.perf_counter()
    frame_log = 0

    while frame < cfg.steps:
        explore = frame < cfg.exploration_steps
        action = agent.act(obs, rngs["act"], explore=explore)
        res = env.step(action)
        buf.push(
            Transition(obs, action, res.reward, res.observation, res.done, agent_step, bool(res.info.get("terminal")))
        )
        ep_return += res.reward
        ep_success = ep_success or bool(res.info.get("success"))
        frame += frames_per_step
        agent_step += 1
        if res.done:
            episodes += 1
            record.episode_returns.append(ep_return)
            window["return"].append(ep_return)
            window["success"].append(float(ep_success))
            ep_return, ep_success = 0.0, False
            obs = env.reset()
        else:
            obs = res.observation

        if frame >= cfg.seed_frames and len(buf) >= cfg.batch_size:
            batch, beta = sample_batch(agent, buf, rngs["update"])
            closs, feats = update_critic(agent, batch, rngs["update"])
            aparts = update_actor(agent, batch, feats, rngs["update"])
            record.updates += 1
            window["critic_loss"].append(closs["critic_loss"])
            window["actor_loss"].append(aparts["actor_loss"])
            if "consistency_loss" in aparts:
                window["consistency_loss"].append(aparts["consistency_loss"])
            if beta is not None:
                window["beta_mean"].append(beta)
            if record.updates % cfg.dormant_interval == 0:
                with nd.no_grad():
                    last_dormant = measure_dormant(agent, buf, rngs["probe"])
                    q = q_mean(agent.critic(feats, batch.actions)).data.mean()
                record.dormant_history.append((frame, last_dormant))
                window["q_mean"].append(float(q))

        if next_hist is not None and frame >= next_hist:
            counts, edges = policy_histogram(agent, env.reset() if spec.id == "bandit1d" else obs, rngs["probe"],
                                             cfg.hist_samples)
            record.histograms[frame] = counts
            if out is not None:
                write_histogram(out / f"hist_{frame}.csv", counts, edges)
            next_hist += cfg.hist_interval

        if frame >= next_log or frame >= cfg.steps:
            fps = None
            if cfg.record_fps:
                now = time.perf_counter()
                fps = (frame - frame_log) / max(now - t_log, 1e-9)
                t_log, frame_log = now, frame
            metrics.append(
                frame,
                episode=episodes,
                dormant_ratio=last_dormant,
                fps=fps,
                **{k: _mean(v) for k, v in window.items()},
            )
            for v in window.values():
                v.clear()
            while next_log <= frame:
                next_log += cfg.log_interval

    metrics.flush()
    record.rows = metrics.rows
    record.frames = frame
    if len(buf):
        with nd.no_grad():
            record.final_dormant = measure_dormant(agent, buf, rngs["probe"])
    record.final_eval = evaluate(agent, build_env(cfg, seed_offset=777), cfg.eval_episodes, rngs["eval"])
    if out is not None:
        record.checkpoint_path = save_agent(agent, out / "final.ckpt")
    record.wall_clock = time.perf_counter() - t0
    record.agent = agent  # type: ignore[attr-defined]
    return record


def evaluate(agent: Agent, env, episodes: int, rng: np.random.Generator) -> tuple[float, float]:
    """Mean return and success rate without exploration, augmentation or learning."""
    returns, successes = [], []
    for _ in range(episodes):
        obs = env.reset()
        total, success, done = 0.0, False, False
        while not done:
            res = env.step(agent.eval_act(obs, rng))
            total += res.reward
            success = success or bool(res.info.get("success"))
            done = res.done
            obs = res.observation
        returns.append(total)
        successes.append(float(success))
    return float(np.mean(returns)), float(np.mean(successes))


def save_agent(agent: Agent, path: str | Path) -> Path:
    meta = {"config": agent.cfg.to_dict(), "env_spec": {"id": agent.env_spec.id}}
    return checkpoint.save(path, agent.state_arrays(), meta)


def load_agent(path: str | Path) -> Agent:
    arrays, meta = checkpoint.load(path)
    cfg = Config(**meta["config"])
    env = build_env(cfg)
    agent = Agent(cfg, env.spec, np.random.default_rng(0))
    agent.load_state_arrays(arrays)
    return agent
