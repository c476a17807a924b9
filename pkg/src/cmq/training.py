"""Episode replay, TD(0) learning with target networks, concept supervision.

One gradient step per collected episode.  The batched forward flattens all
valid (episode, timestep) rows into a single mixer evaluation; per-step
recurrence exists only in the agent unroll.  Every random draw in a run
comes from one master generator, so runs are bit-reproducible and resumable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import mixer as mx
from .agents import AgentSpec, EpsilonSchedule, agent_q, build_agent_inputs, select_action
from .autodiff import Node, value_of
from .nets import ParamSet, subparams
from .agents import init_agent_params


class TrainingError(RuntimeError):
    """Non-finite loss or malformed training input."""


# ---------------------------------------------------------------------------
# episodes and replay

@dataclass
class Episode:
    """One completed episode; index t of states/obs/concepts runs 0..T."""

    obs: np.ndarray       # (T+1, n, obs_dim)
    states: np.ndarray    # (T+1, state_dim)
    actions: np.ndarray   # (T, n) int
    rewards: np.ndarray   # (T,)
    dones: np.ndarray     # (T,) float, 1.0 at the terminal step
    concepts: np.ndarray  # (T+1, K_gt)
    n_actions: int = 6
    # done raised by the step limit, not true termination; the TD target
    # keeps bootstrapping through such a final step
    truncated: bool = False

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    def validate(self) -> None:
        t, n = self.actions.shape
        ok = (t >= 1
              and self.obs.shape[0] == t + 1 and self.obs.shape[1] == n
              and self.states.shape[0] == t + 1
              and self.rewards.shape == (t,) and self.dones.shape == (t,)
              and self.concepts.shape[0] == t + 1)
        if not ok:
            raise TrainingError(f"malformed episode: length {t}, shapes "
                                f"{self.obs.shape}/{self.states.shape}/{self.rewards.shape}")
        if not (np.all(np.isfinite(self.rewards)) and np.all(np.isfinite(self.states))):
            raise TrainingError("malformed episode: non-finite rewards or states")
        if self.dones[-1] != 1.0 or np.any(self.dones[:-1] != 0.0):
            raise TrainingError("malformed episode: done must mark exactly the last step")


class ReplayBuffer:
    """FIFO episode store with uniform no-replacement sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("ReplayBuffer: capacity must be >= 1")
        self.capacity = capacity
        self._episodes: list[Episode] = []

    def __len__(self) -> int:
        return len(self._episodes)

    @property
    def episodes(self) -> list[Episode]:
        return self._episodes

    def push_episode(self, episode: Episode) -> None:
        episode.validate()
        self._episodes.append(episode)
        if len(self._episodes) > self.capacity:
            del self._episodes[0]

    def sample_batch(self, rng: np.random.Generator, batch_size: int) -> "EpisodeBatch":
        if len(self._episodes) < batch_size:
            raise TrainingError(
                f"sample_batch: buffer holds {len(self._episodes)} episodes, need {batch_size}")
        idx = rng.choice(len(self._episodes), size=batch_size, replace=False)
        return make_batch([self._episodes[i] for i in idx])


@dataclass
class EpisodeBatch:
    """Episodes padded to a common length with validity masks.

    ``mask`` covers transition steps t < T_b; ``state_mask`` additionally
    covers each episode's terminal state (concept supervision reaches it,
    TD does not).
    """

    obs: np.ndarray        # (B, Tmax+1, n, obs_dim)
    states: np.ndarray     # (B, Tmax+1, S)
    actions: np.ndarray    # (B, Tmax, n)
    rewards: np.ndarray    # (B, Tmax)
    dones: np.ndarray      # (B, Tmax)
    terminals: np.ndarray  # (B, Tmax) dones minus truncation cuts
    concepts: np.ndarray   # (B, Tmax+1, K_gt)
    mask: np.ndarray       # (B, Tmax)
    state_mask: np.ndarray  # (B, Tmax+1)
    avail: np.ndarray      # (B, Tmax+1, n, n_actions) all-ones placeholder
    lengths: np.ndarray    # (B,)

    @property
    def size(self) -> int:
        return self.obs.shape[0]

    @property
    def max_t(self) -> int:
        return self.actions.shape[1]


def make_batch(episodes: list[Episode]) -> EpisodeBatch:
    b = len(episodes)
    n = episodes[0].obs.shape[1]
    tmax = max(e.length for e in episodes)
    obs_dim = episodes[0].obs.shape[2]
    s_dim = episodes[0].states.shape[1]
    k_gt = episodes[0].concepts.shape[1]
    n_actions = episodes[0].n_actions
    out = EpisodeBatch(
        obs=np.zeros((b, tmax + 1, n, obs_dim)),
        states=np.zeros((b, tmax + 1, s_dim)),
        actions=np.zeros((b, tmax, n), dtype=np.int64),
        rewards=np.zeros((b, tmax)),
        dones=np.zeros((b, tmax)),
        terminals=np.zeros((b, tmax)),
        concepts=np.zeros((b, tmax + 1, k_gt)),
        mask=np.zeros((b, tmax)),
        state_mask=np.zeros((b, tmax + 1)),
        avail=np.ones((b, tmax + 1, n, n_actions)),
        lengths=np.array([e.length for e in episodes], dtype=np.int64))
    for i, e in enumerate(episodes):
        t = e.length
        out.obs[i, :t + 1] = e.obs
        out.states[i, :t + 1] = e.states
        out.actions[i, :t] = e.actions
        out.rewards[i, :t] = e.rewards
        out.dones[i, :t] = e.dones
        out.terminals[i, :t] = e.dones
        if e.truncated:
            out.terminals[i, t - 1] = 0.0
        out.concepts[i, :t + 1] = e.concepts
        out.mask[i, :t] = 1.0
        out.state_mask[i, :t + 1] = 1.0
    return out


# ---------------------------------------------------------------------------
# intervention regularizer

def sample_interventions(rng: np.random.Generator, p_tilde: float, rows: int,
                         n_concepts: int, labels: np.ndarray):
    """Per-row/per-supervised-concept Bernoulli(p_tilde) label substitution.

    Returns (keep, forced) arrays for the mixer; replaced slots carry the
    ground-truth label as a constant.
    """
    keep = np.ones((rows, n_concepts))
    forced = np.zeros((rows, n_concepts))
    k_gt = labels.shape[1] if labels.ndim == 2 else 0
    k = min(k_gt, n_concepts)
    if k and p_tilde > 0.0:
        replace = rng.random((rows, k)) < p_tilde
        keep[:, :k] = np.where(replace, 0.0, 1.0)
        forced[:, :k] = np.where(replace, labels[:, :k], 0.0)
    return keep, forced


def intervention_mix(p_hat, labels: np.ndarray, p_tilde: float,
                     rng: np.random.Generator):
    """Spec-level single-vector form of the training-time regularizer."""
    if not 0.0 <= p_tilde <= 1.0:
        raise ValueError(f"intervention_mix: p_tilde {p_tilde} outside [0, 1]")
    n_concepts = value_of(p_hat).shape[-1]
    keep, forced = sample_interventions(
        rng, p_tilde, 1, n_concepts, np.asarray(labels, dtype=np.float64)[None, :])
    return mx.apply_intervention(p_hat, keep[0], forced[0])


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class OptimState:
    lr: float = 5e-4
    smoothing: float = 0.99
    eps: float = 1e-5
    clip_norm: float = 10.0
    acc: dict = field(default_factory=dict)


def clip_grads(grads: dict, max_norm: float) -> float:
    """Scale the whole gradient to global L2 norm max_norm; returns the raw norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for name in grads:
            grads[name] = grads[name] * scale
    return total


def rmsprop_update(params: ParamSet, grads: dict, opt: OptimState) -> None:
    for name in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(params[name])
        acc = opt.acc.get(name)
        if acc is None:
            acc = np.zeros_like(params[name])
        acc = opt.smoothing * acc + (1.0 - opt.smoothing) * g * g
        opt.acc[name] = acc
        params[name] = params[name] - opt.lr * g / (np.sqrt(acc) + opt.eps)


# ---------------------------------------------------------------------------
# batched forwards

def batch_agent_inputs(batch: EpisodeBatch, spec: AgentSpec) -> list[np.ndarray]:
    """Per-timestep agent input rows, (B*n, input_dim) each, for t = 0..Tmax."""
    b, n = batch.size, spec.n_agents
    eye = np.eye(n)
    rows = []
    for t in range(batch.max_t + 1):
        x = np.zeros((b, n, spec.input_dim))
        x[:, :, :spec.obs_dim] = batch.obs[:, t]
        if t > 0:
            prev = batch.actions[:, t - 1]
            oh = np.zeros((b, n, spec.n_actions))
            np.put_along_axis(oh, prev[..., None], 1.0, axis=-1)
            x[:, :, spec.obs_dim:spec.obs_dim + spec.n_actions] = oh
        x[:, :, spec.obs_dim + spec.n_actions:] = eye
        rows.append(x.reshape(b * n, spec.input_dim))
    return rows


def unroll_agent(params, spec: AgentSpec, inputs: list[np.ndarray]):
    """Run the shared recurrent net over every timestep; list of (B*n, |A|)."""
    h = np.zeros((inputs[0].shape[0], spec.hidden))
    qs = []
    for x in inputs:
        q, h = agent_q(params, x, h)
        qs.append(q)
    return qs


def _flat_order(mask: np.ndarray) -> np.ndarray:
    """Flat indices (t-major) of the set rows of a (B, T) mask."""
    return np.flatnonzero(mask.T.ravel())


def td_target(batch: EpisodeBatch, target_params, agent_spec: AgentSpec,
              mixer_cfg, mixer_kind: str, gamma: float) -> np.ndarray:
    """Bootstrap targets y under the frozen parameters, (B, Tmax), zero at padding.

    y_t = r_t + gamma * (1 - terminal_t) * Q_tot(s_{t+1}, per-agent greedy
    utilities); the per-agent argmax realizes the joint max because the
    mixer is monotone. A done raised by the step limit is not terminal:
    the episode ends but the value keeps bootstrapping through s_{t+1}.
    """
    plain = {k: value_of(v) for k, v in target_params.items()}
    qs = unroll_agent(subparams(plain, "agent."), agent_spec,
                      batch_agent_inputs(batch, agent_spec))
    b, tmax = batch.size, batch.max_t
    n = agent_spec.n_agents
    q_best = np.stack([q.reshape(b, n, agent_spec.n_actions).max(axis=-1)
                       for q in qs])                      # (Tmax+1, B, n)
    idx = _flat_order(batch.mask)
    s_next = batch.states[:, 1:].transpose(1, 0, 2).reshape(-1, batch.states.shape[2])[idx]
    q_next = q_best[1:].reshape(-1, n)[idx]
    if mixer_kind == "cmq":
        tot = value_of(mx.mix_batch(subparams(plain, "mixer."), mixer_cfg,
                                    q_next, s_next).q_tot)
    else:
        tot = value_of(mx.vdn_mix(q_next))
    flat = batch.rewards.T.ravel()[idx] + gamma * (1.0 - batch.terminals.T.ravel()[idx]) * tot
    y_t = np.zeros(b * tmax)
    y_t[idx] = flat
    return y_t.reshape(tmax, b).T


@dataclass(frozen=True)
class TrainSettings:
    total_steps: int = 200_000
    gamma: float = 0.99
    lr: float = 5e-4
    rms_smoothing: float = 0.99
    rms_eps: float = 1e-5
    clip_norm: float = 10.0
    batch_size: int = 32
    buffer_episodes: int = 5000
    target_interval: int = 200
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    p_tilde: float = 0.25
    lambda_c: float = 0.1
    warmup_episodes: int = 100
    eval_interval: int = 2000
    eval_episodes: int = 32
    agent_hidden: int = 64

    def __post_init__(self):
        if self.total_steps < 1 or self.batch_size < 1 or self.buffer_episodes < 1:
            raise ValueError("TrainSettings: total_steps, batch_size, buffer_episodes >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"TrainSettings: gamma {self.gamma} outside (0, 1]")
        if not 0.0 <= self.p_tilde <= 1.0:
            raise ValueError(f"TrainSettings: p_tilde {self.p_tilde} outside [0, 1]")
        if self.lambda_c < 0.0 or self.lr <= 0.0 or self.clip_norm <= 0.0:
            raise ValueError("TrainSettings: lambda_c >= 0, lr > 0, clip_norm > 0")
        if self.target_interval < 1 or self.warmup_episodes < 0:
            raise ValueError("TrainSettings: bad target_interval or warmup_episodes")

    def schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.eps_start, self.eps_end, self.eps_decay_steps)

    def optim(self) -> OptimState:
        return OptimState(lr=self.lr, smoothing=self.rms_smoothing,
                          eps=self.rms_eps, clip_norm=self.clip_norm)


def training_loss(leaves, batch: EpisodeBatch, agent_spec: AgentSpec,
                  mixer_cfg, mixer_kind: str, settings: TrainSettings,
                  y: np.ndarray, keep=None, forced=None):
    """TD-plus-concept loss of one batch under the given parameter mapping.

    ``leaves`` may hold Nodes (training) or plain arrays (finite-difference
    probes).  The forward covers every stored state row (terminal included);
    the TD term reads the transition subset, the concept term reads the
    pre-intervention scorer logits of all rows.  Returns (loss, td_error,
    td_loss, bce_loss_or_None).
    """
    b, tmax, n = batch.size, batch.max_t, agent_spec.n_agents
    qs = unroll_agent(subparams(leaves, "agent."), agent_spec,
                      batch_agent_inputs(batch, agent_spec))
    chosen = []
    for t in range(tmax + 1):
        act = batch.actions[:, t] if t < tmax else np.zeros((b, n), dtype=np.int64)
        q_t = ad.gather_last(qs[t], act.ravel())
        chosen.append(ad.reshape(q_t, (b, n)))
    q_rows = ad.reshape(ad.stack(chosen, axis=0), ((tmax + 1) * b, n))

    state_idx = _flat_order(batch.state_mask)
    td_idx = _flat_order(batch.mask)
    s_rows = batch.states.transpose(1, 0, 2).reshape(-1, batch.states.shape[2])
    q_valid = ad.take_rows(q_rows, state_idx)
    s_valid = s_rows[state_idx]
    # transition rows are a subset of state rows in the same t-major order
    td_pos = np.searchsorted(state_idx, td_idx)
    y_valid = y.T.ravel()[td_idx]

    k_gt = batch.concepts.shape[2]
    if mixer_kind == "cmq":
        out = mx.mix_batch(subparams(leaves, "mixer."), mixer_cfg,
                           q_valid, s_valid, keep, forced)
        q_tot = out.q_tot
        k_sup = min(k_gt, mixer_cfg.concepts)
        if k_sup and settings.lambda_c > 0.0:
            labels = batch.concepts.transpose(1, 0, 2).reshape(-1, k_gt)[state_idx]
            logits = ad.slice_axis(out.score_logits, 0, k_sup, axis=-1)
            bce = ad.mean(ad.bce_with_logits(logits, labels[:, :k_sup]))
        else:
            bce = None
    elif mixer_kind == "vdn":
        q_tot = mx.vdn_mix(q_valid)
        bce = None
    else:
        raise ValueError(f"training_loss: unknown mixer kind {mixer_kind!r}")

    err = ad.sub(ad.take_rows(q_tot, td_pos), y_valid)
    td_loss = ad.mean(ad.square(err))
    loss = ad.add(td_loss, ad.mul(settings.lambda_c, bce)) if bce is not None else td_loss
    return loss, err, td_loss, bce


def train_step(params: ParamSet, target_params: ParamSet, batch: EpisodeBatch,
               agent_spec: AgentSpec, mixer_cfg, mixer_kind: str,
               settings: TrainSettings, opt: OptimState,
               rng: np.random.Generator) -> dict:
    """One gradient step on TD plus concept loss; mutates params and opt."""
    if mixer_kind not in ("cmq", "vdn"):
        raise ValueError(f"train_step: unknown mixer kind {mixer_kind!r}")
    leaves = {k: Node(v) for k, v in params.items()}
    y = td_target(batch, target_params, agent_spec, mixer_cfg,
                  mixer_kind, settings.gamma)

    keep = forced = None
    k_gt = batch.concepts.shape[2]
    if mixer_kind == "cmq" and k_gt:
        state_idx = _flat_order(batch.state_mask)
        labels = batch.concepts.transpose(1, 0, 2).reshape(-1, k_gt)[state_idx]
        keep, forced = sample_interventions(rng, settings.p_tilde,
                                            len(state_idx), mixer_cfg.concepts,
                                            labels)

    loss, err, td_loss, bce = training_loss(leaves, batch, agent_spec,
                                            mixer_cfg, mixer_kind, settings,
                                            y, keep, forced)
    loss_val = float(value_of(loss))
    if not np.isfinite(loss_val):
        errs = value_of(err)
        bad = int(np.flatnonzero(~np.isfinite(errs))[0]) if errs.size else 0
        flat = _flat_order(batch.mask)[bad]
        raise TrainingError(
            f"non-finite loss; first offending row: episode "
            f"{flat % batch.size}, step {flat // batch.size}")

    ad.backward(loss)
    grads = {k: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
             for k, leaf in leaves.items()}
    info = {"grad_norm": clip_grads(grads, opt.clip_norm)}
    rmsprop_update(params, grads, opt)
    info["loss"] = loss_val
    info["td_loss"] = float(value_of(td_loss))
    info["bce_loss"] = float(value_of(bce)) if bce is not None else 0.0
    return info


# ---------------------------------------------------------------------------
# rollouts and the training loop

def rollout_episode(env, params, agent_spec: AgentSpec, eps: float,
                    rng, env_seed: int) -> Episode:
    """Play one episode (epsilon-greedy); identical code path for training,
    evaluation (eps=0, no rng) and the live bridge."""
    plain = subparams({k: value_of(v) for k, v in params.items()}, "agent.")
    obs, state = env.reset(env_seed)
    h = np.zeros((agent_spec.n_agents, agent_spec.hidden))
    last = None
    obs_l, state_l, act_l, rew_l, done_l, con_l = [obs], [state], [], [], [], []
    k_gt = env.n_concepts
    if k_gt:
        con_l.append(env.concept_labels())
    done = False
    while not done:
        x = build_agent_inputs(agent_spec, obs, last)
        q, h = agent_q(plain, x, h)
        actions = [select_action(q[i], eps, rng) for i in range(agent_spec.n_agents)]
        obs, state, reward, done = env.step(actions)
        obs_l.append(obs)
        state_l.append(state)
        act_l.append(actions)
        rew_l.append(reward)
        done_l.append(float(done))
        if k_gt:
            con_l.append(env.concept_labels())
        last = actions
    t = len(act_l)
    return Episode(obs=np.array(obs_l), states=np.array(state_l),
                   actions=np.array(act_l, dtype=np.int64),
                   rewards=np.array(rew_l), dones=np.array(done_l),
                   concepts=(np.array(con_l, dtype=np.float64)
                             if k_gt else np.zeros((t + 1, 0))),
                   n_actions=env.n_actions,
                   truncated=bool(getattr(env, "truncated", False)))


@dataclass
class TrainResult:
    params: ParamSet
    target_params: ParamSet
    opt: OptimState
    buffer: ReplayBuffer
    metrics: list
    env_steps: int
    episodes: int
    next_eval: int
    rng_state: dict
    agent_spec: AgentSpec
    mixer_cfg: object
    mixer_kind: str
    last_loss: float | None = None


def evaluate(env, params, agent_spec: AgentSpec, mixer_cfg, mixer_kind: str,
             seeds: list[int]) -> dict:
    """Greedy test episodes plus concept statistics over the visited states."""
    returns = []
    states, labels = [], []
    for ep_seed in seeds:
        ep = rollout_episode(env, params, agent_spec, 0.0, None, ep_seed)
        returns.append(float(ep.rewards.sum()))
        states.append(ep.states)
        labels.append(ep.concepts)
    out = {"mean_test_return": float(np.mean(returns)), "returns": returns}
    if mixer_kind == "cmq" and env.n_concepts:
        s_all = np.concatenate(states, axis=0)
        c_all = np.concatenate(labels, axis=0)
        plain = subparams({k: value_of(v) for k, v in params.items()}, "mixer.")
        epos, eneg = mx.concept_embeddings(plain, mixer_cfg, s_all)
        p_hat = value_of(mx.concept_probs(plain, epos, eneg))
        out["p_hat_mean"] = p_hat.mean(axis=0)
        k_sup = min(c_all.shape[1], p_hat.shape[1])
        out["concept_accuracy"] = float(
            np.mean((p_hat[:, :k_sup] > 0.5) == (c_all[:, :k_sup] > 0.5)))
    return out


def init_run_params(agent_spec: AgentSpec, mixer_cfg, mixer_kind: str,
                    rng: np.random.Generator) -> ParamSet:
    params = ParamSet(meta={"agent_spec": agent_spec, "mixer_cfg": mixer_cfg,
                            "mixer_kind": mixer_kind})
    params.merge("agent.", init_agent_params(agent_spec, int(rng.integers(2**31))))
    if mixer_kind == "cmq":
        params.merge("mixer.", mx.init_mixer_params(mixer_cfg, int(rng.integers(2**31))))
    return params


def run_training(env, mixer_cfg, mixer_kind: str, settings: TrainSettings,
                 seed: int, metrics_cb=None, resume: TrainResult | None = None) -> TrainResult:
    """Deterministic training loop; pass a previous TrainResult to continue it.

    Evaluation, target syncs and checkpoints are all triggered by stored
    counters, never by loop position, so a resumed run replays the exact
    event sequence of an uninterrupted one.
    """
    if mixer_kind not in ("cmq", "vdn"):
        raise ValueError(f"run_training: unknown mixer kind {mixer_kind!r}")
    sched = settings.schedule()
    if resume is None:
        master = np.random.default_rng(seed)
        agent_spec = AgentSpec(env.obs_dim, env.n_actions, env.n_agents,
                               settings.agent_hidden)
        params = init_run_params(agent_spec, mixer_cfg, mixer_kind, master)
        state = TrainResult(params=params, target_params=params.copy(),
                            opt=settings.optim(), buffer=ReplayBuffer(settings.buffer_episodes),
                            metrics=[], env_steps=0, episodes=0, next_eval=0,
                            rng_state={}, agent_spec=agent_spec,
                            mixer_cfg=mixer_cfg, mixer_kind=mixer_kind)
    else:
        state = resume
        master = np.random.default_rng(seed)
        master.bit_generator.state = state.rng_state
        agent_spec = state.agent_spec
        mixer_cfg = state.mixer_cfg
        mixer_kind = state.mixer_kind

    while state.env_steps < settings.total_steps:
        if state.env_steps >= state.next_eval:
            seeds = [int(master.integers(2**63)) for _ in range(settings.eval_episodes)]
            stats = evaluate(env, state.params, agent_spec, mixer_cfg,
                             mixer_kind, seeds)
            row = {"env_steps": state.env_steps, "episodes": state.episodes,
                   "mean_test_return": stats["mean_test_return"],
                   "loss": state.last_loss,
                   "epsilon": sched.value(state.env_steps)}
            if "p_hat_mean" in stats:
                for k, v in enumerate(stats["p_hat_mean"]):
                    row[f"p_hat_{k}"] = float(v)
                row["concept_accuracy"] = stats["concept_accuracy"]
            state.metrics.append(row)
            if metrics_cb is not None:
                metrics_cb(row)
            state.next_eval += settings.eval_interval

        eps = sched.value(state.env_steps)
        ep = rollout_episode(env, state.params, agent_spec, eps, master,
                             int(master.integers(2**63)))
        state.buffer.push_episode(ep)
        state.episodes += 1
        state.env_steps += ep.length

        if (state.episodes >= settings.warmup_episodes
                and len(state.buffer) >= settings.batch_size):
            batch = state.buffer.sample_batch(master, settings.batch_size)
            info = train_step(state.params, state.target_params, batch,
                              agent_spec, mixer_cfg, mixer_kind,
                              settings, state.opt, master)
            state.last_loss = info["loss"]
        if state.episodes % settings.target_interval == 0:
            state.target_params = state.params.copy()

    state.rng_state = master.bit_generator.state
    return state
