"""Replay, TD targets, the optimizer and the training loop."""
import dataclasses
import zlib

import numpy as np
import pytest

import cmq.autodiff as ad
import cmq.mixer as mx
import cmq.training as tr
from cmq.agents import AgentSpec, agent_q, build_agent_inputs, init_agent_params
from cmq.env import LbfConfig, LbfEnv, MatrixEnv, MatrixGame
from cmq.nets import ParamSet, subparams
from cmq.training import (Episode, OptimState, ReplayBuffer, TrainSettings,
                          TrainingError, clip_grads, intervention_mix,
                          make_batch, rmsprop_update, run_training,
                          sample_interventions, td_target, train_step)


def _episode(rng, t, n=2, obs_dim=4, s_dim=5, k_gt=0, n_actions=3,
             rewards=None) -> Episode:
    dones = np.zeros(t)
    dones[-1] = 1.0
    return Episode(
        obs=rng.normal(size=(t + 1, n, obs_dim)),
        states=rng.normal(size=(t + 1, s_dim)),
        actions=rng.integers(n_actions, size=(t, n)),
        rewards=rng.normal(size=t) if rewards is None else np.asarray(rewards, float),
        dones=dones,
        concepts=(rng.integers(2, size=(t + 1, k_gt)).astype(float)
                  if k_gt else np.zeros((t + 1, 0))),
        n_actions=n_actions)


# ---------------------------------------------------------------------------
# replay buffer

def test_buffer_fifo_capacity():
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(3)
    eps = [_episode(rng, 2, rewards=[float(i), 0.0]) for i in range(5)]
    for e in eps:
        buf.push_episode(e)
    assert len(buf) == 3
    assert [e.rewards[0] for e in buf.episodes] == [2.0, 3.0, 4.0]
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_buffer_push_validates():
    rng = np.random.default_rng(1)
    buf = ReplayBuffer(4)
    bad = _episode(rng, 3)
    bad.dones = np.zeros(3)
    with pytest.raises(TrainingError, match="done"):
        buf.push_episode(bad)
    bad2 = _episode(rng, 3)
    bad2.rewards = np.array([0.0, np.inf, 0.0])
    with pytest.raises(TrainingError, match="non-finite"):
        buf.push_episode(bad2)
    bad3 = _episode(rng, 3)
    bad3.states = bad3.states[:2]
    with pytest.raises(TrainingError, match="malformed"):
        buf.push_episode(bad3)


def test_buffer_sample_requires_enough_episodes():
    rng = np.random.default_rng(2)
    buf = ReplayBuffer(8)
    buf.push_episode(_episode(rng, 2))
    with pytest.raises(TrainingError, match="holds 1"):
        buf.sample_batch(rng, 2)


def test_buffer_sample_without_replacement():
    rng = np.random.default_rng(3)
    buf = ReplayBuffer(6)
    for i in range(6):
        buf.push_episode(_episode(rng, 1, rewards=[float(i)]))
    batch = buf.sample_batch(rng, 6)
    assert sorted(batch.rewards[:, 0].tolist()) == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]


def test_buffer_sampling_is_uniform():
    rng = np.random.default_rng(zlib.crc32(b"buffer-uniform"))
    buf = ReplayBuffer(10)
    for i in range(10):
        buf.push_episode(_episode(rng, 1, rewards=[float(i)]))
    counts = np.zeros(10)
    for _ in range(10_000):
        counts[int(buf.sample_batch(rng, 1).rewards[0, 0])] += 1
    assert np.all(np.abs(counts / 10_000 - 0.1) < 0.03)


def test_make_batch_padding_and_masks():
    rng = np.random.default_rng(4)
    a, b = _episode(rng, 2), _episode(rng, 4)
    batch = make_batch([a, b])
    assert batch.size == 2 and batch.max_t == 4
    assert batch.obs.shape == (2, 5, 2, 4)
    assert np.array_equal(batch.mask, [[1, 1, 0, 0], [1, 1, 1, 1]])
    assert np.array_equal(batch.state_mask, [[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]])
    assert np.array_equal(batch.lengths, [2, 4])
    assert np.array_equal(batch.obs[0, :3], a.obs)
    assert np.all(batch.obs[0, 3:] == 0.0)
    assert np.array_equal(batch.rewards[1], b.rewards)
    assert np.all(batch.avail == 1.0) and batch.avail.shape == (2, 5, 2, 3)


# ---------------------------------------------------------------------------
# TD targets

def _zeroed_agent_params(spec: AgentSpec, q_const: float) -> ParamSet:
    params = ParamSet()
    params.merge("agent.", init_agent_params(spec, 0))
    for name in params:
        params[name] = np.zeros_like(params[name])
    params["agent.fc2.b"] = np.full(spec.n_actions, q_const)
    return params


def test_td_target_terminal_and_bootstrap():
    # zeroed net with output bias 1.0 gives every utility 1, so the summed
    # bootstrap is exactly 2 for two agents
    spec = AgentSpec(obs_dim=4, n_actions=3, n_agents=2, hidden=4)
    params = _zeroed_agent_params(spec, 1.0)
    rng = np.random.default_rng(5)
    ep = _episode(rng, 2, rewards=[1.0, 1.0])
    batch = make_batch([ep])
    y = td_target(batch, params, spec, None, "vdn", 0.99)
    assert y.shape == (1, 2)
    assert y[0, 0] == 1.0 + 0.99 * 2.0
    assert y[0, 1] == 1.0


def test_td_target_bootstraps_through_truncation():
    # an episode cut by the step limit keeps its bootstrap on the final
    # transition; a truly terminal one does not
    spec = AgentSpec(obs_dim=4, n_actions=3, n_agents=2, hidden=4)
    params = _zeroed_agent_params(spec, 1.0)
    rng = np.random.default_rng(6)
    cut = _episode(rng, 2, rewards=[1.0, 1.0])
    cut.truncated = True
    ended = _episode(rng, 2, rewards=[1.0, 1.0])
    batch = make_batch([cut, ended])
    assert np.array_equal(batch.terminals, [[0.0, 0.0], [0.0, 1.0]])
    y = td_target(batch, params, spec, None, "vdn", 0.99)
    assert y[0, 1] == 1.0 + 0.99 * 2.0  # limit-cut: still bootstraps
    assert y[1, 1] == 1.0               # true terminal: no bootstrap


def test_td_target_matches_joint_bruteforce():
    # per-agent greedy utilities through the monotone mixer must give the
    # same value as maximizing Q_tot over all joint actions
    spec = AgentSpec(obs_dim=4, n_actions=3, n_agents=2, hidden=5)
    cfg = mx.MixerConfig(n_agents=2, state_dim=5, concepts=3, embed_dim=4,
                         attn_dim=3, bias_hidden=3)
    rng = np.random.default_rng(zlib.crc32(b"td-bruteforce"))
    params = tr.init_run_params(spec, cfg, "cmq", rng)
    episodes = [_episode(rng, 3), _episode(rng, 2)]
    batch = make_batch(episodes)
    y = td_target(batch, params, spec, cfg, "cmq", 0.99)

    mixer_params = subparams(params, "mixer.")
    agent_params = subparams(params, "agent.")
    for b, ep in enumerate(episodes):
        h = np.zeros((2, spec.hidden))
        last = None
        q_seq = []
        for t in range(ep.length + 1):
            q, h = agent_q(agent_params, build_agent_inputs(spec, ep.obs[t], last), h)
            q_seq.append(q)
            last = ep.actions[t] if t < ep.length else None
        for t in range(ep.length):
            if ep.dones[t]:
                expect = ep.rewards[t]
            else:
                best = max(
                    float(ad.value_of(mx.mix(mixer_params, cfg,
                                             np.array([q_seq[t + 1][0, i],
                                                       q_seq[t + 1][1, j]]),
                                             ep.states[t + 1]).q_tot))
                    for i in range(3) for j in range(3))
                expect = ep.rewards[t] + 0.99 * best
            assert y[b, t] == pytest.approx(expect, abs=1e-9)


def test_td_target_padding_rows_are_zero():
    spec = AgentSpec(obs_dim=4, n_actions=3, n_agents=2, hidden=4)
    rng = np.random.default_rng(6)
    params = tr.init_run_params(spec, None, "vdn", rng)
    batch = make_batch([_episode(rng, 1), _episode(rng, 4)])
    y = td_target(batch, params, spec, None, "vdn", 0.99)
    assert np.all(y[0, 1:] == 0.0)


# ---------------------------------------------------------------------------
# optimizer

def test_rmsprop_first_step_analytic():
    params = ParamSet()
    params.add("w", np.array([1.0, -2.0]))
    g = np.array([1.0, 4.0])
    opt = OptimState()
    rmsprop_update(params, {"w": g}, opt)
    acc = 0.01 * g * g
    expect = np.array([1.0, -2.0]) - 5e-4 * g / (np.sqrt(acc) + 1e-5)
    assert np.allclose(params["w"], expect, atol=0, rtol=1e-15)
    assert np.allclose(opt.acc["w"], acc)


def test_rmsprop_second_step_tracks_accumulator():
    params = ParamSet()
    params.add("w", np.array([0.5]))
    opt = OptimState(lr=0.01)
    rmsprop_update(params, {"w": np.array([2.0])}, opt)
    w1 = params["w"].copy()
    rmsprop_update(params, {"w": np.array([-1.0])}, opt)
    acc2 = 0.99 * (0.01 * 4.0) + 0.01 * 1.0
    assert params["w"][0] == pytest.approx(w1[0] + 0.01 / (np.sqrt(acc2) + 1e-5))


def test_rmsprop_zero_grad_keeps_params():
    params = ParamSet()
    params.add("w", np.array([0.3, -0.7]))
    before = params["w"].copy()
    opt = OptimState()
    rmsprop_update(params, {"w": np.zeros(2)}, opt)
    assert np.array_equal(params["w"], before)
    rmsprop_update(params, {}, opt)  # missing grads behave as zero
    assert np.array_equal(params["w"], before)


def test_clip_halves_norm_twenty():
    g = {"a": np.full(16, 5.0)}  # norm 20
    norm = clip_grads(g, 10.0)
    assert norm == pytest.approx(20.0)
    assert np.allclose(g["a"], 2.5)
    g2 = {"a": np.array([3.0, 4.0])}  # norm 5, untouched
    assert clip_grads(g2, 10.0) == pytest.approx(5.0)
    assert np.array_equal(g2["a"], [3.0, 4.0])


# ---------------------------------------------------------------------------
# label interventions

def test_intervention_endpoints():
    rng = np.random.default_rng(7)
    labels = rng.integers(2, size=(50, 4)).astype(float)
    keep, forced = sample_interventions(rng, 0.0, 50, 6, labels)
    assert np.all(keep == 1.0) and np.all(forced == 0.0)
    keep, forced = sample_interventions(rng, 1.0, 50, 6, labels)
    assert np.all(keep[:, :4] == 0.0) and np.array_equal(forced[:, :4], labels)
    assert np.all(keep[:, 4:] == 1.0) and np.all(forced[:, 4:] == 0.0)


def test_intervention_rate_statistics():
    rng = np.random.default_rng(zlib.crc32(b"replace-rate"))
    labels = np.ones((20_000, 4))
    keep, _ = sample_interventions(rng, 0.25, 20_000, 4, labels)
    rate = np.mean(keep == 0.0)
    assert abs(rate - 0.25) < 0.02


def test_intervention_mix_vector_semantics():
    rng = np.random.default_rng(8)
    p_hat = np.array([0.3, 0.6, 0.9])
    out = intervention_mix(p_hat, np.array([1.0, 0.0, 1.0]), 1.0, rng)
    assert np.array_equal(ad.value_of(out), [1.0, 0.0, 1.0])
    out = intervention_mix(p_hat, np.array([1.0, 0.0, 1.0]), 0.0, rng)
    assert np.array_equal(ad.value_of(out), p_hat)
    with pytest.raises(ValueError, match="p_tilde"):
        intervention_mix(p_hat, np.array([1.0]), 1.5, rng)


# ---------------------------------------------------------------------------
# train_step

def _mixer_setup(k_gt, seed, concepts=4):
    spec = AgentSpec(obs_dim=4, n_actions=3, n_agents=2, hidden=5)
    cfg = mx.MixerConfig(n_agents=2, state_dim=5, concepts=concepts,
                         embed_dim=6, attn_dim=5, bias_hidden=4)
    rng = np.random.default_rng(seed)
    params = tr.init_run_params(spec, cfg, "cmq", rng)
    episodes = [_episode(rng, 3, k_gt=k_gt), _episode(rng, 2, k_gt=k_gt)]
    return spec, cfg, params, episodes


def test_forced_concepts_freeze_dead_branch():
    # with every concept pinned to its label and no scorer loss, the branch
    # the gate shut off must receive an exactly zero TD gradient
    for label_value, dead, live in ((1.0, ("cneg", "hneg"), ("cpos", "hpos")),
                                    (0.0, ("cpos", "hpos"), ("cneg", "hneg"))):
        spec, cfg, params, episodes = _mixer_setup(k_gt=4, seed=9)
        for ep in episodes:
            ep.concepts[:] = label_value
        settings = TrainSettings(total_steps=1, p_tilde=1.0, lambda_c=0.0,
                                 batch_size=2)
        before = params.copy()
        train_step(params, params.copy(), make_batch(episodes), spec, cfg,
                   "cmq", settings, settings.optim(), np.random.default_rng(0))
        for stem in dead:
            assert np.array_equal(params[f"mixer.{stem}.w"], before[f"mixer.{stem}.w"])
            assert np.array_equal(params[f"mixer.{stem}.b"], before[f"mixer.{stem}.b"])
        assert any(not np.array_equal(params[f"mixer.{stem}.w"],
                                      before[f"mixer.{stem}.w"]) for stem in live)


def test_padding_slots_never_touch_update():
    spec, cfg, params, episodes = _mixer_setup(k_gt=4, seed=10)
    settings = TrainSettings(total_steps=1, batch_size=2)
    clean = make_batch(episodes)
    dirty = make_batch(episodes)
    pad = dirty.mask == 0.0
    spad = dirty.state_mask == 0.0
    dirty.obs[spad] = 1e6
    dirty.states[spad] = -1e6
    dirty.rewards[pad] = 777.0
    dirty.dones[pad] = 5.0
    dirty.concepts[spad] = 99.0
    dirty.actions[pad] = 2
    p1, p2 = params.copy(), params.copy()
    o1, o2 = settings.optim(), settings.optim()
    train_step(p1, params.copy(), clean, spec, cfg, "cmq", settings, o1,
               np.random.default_rng(1))
    train_step(p2, params.copy(), dirty, spec, cfg, "cmq", settings, o2,
               np.random.default_rng(1))
    assert p1.equal(p2)


def test_zero_td_error_is_a_fixed_point():
    # all-zero parameters give Q_tot = 0 everywhere; zero-reward episodes
    # then have exactly zero loss and the update must not move anything
    spec = AgentSpec(obs_dim=4, n_actions=3, n_agents=2, hidden=4)
    cfg = mx.MixerConfig(n_agents=2, state_dim=5, concepts=4, embed_dim=6,
                         attn_dim=5, bias_hidden=4)
    rng = np.random.default_rng(11)
    for kind, k_gt in (("vdn", 0), ("cmq", 0)):
        params = tr.init_run_params(spec, cfg if kind == "cmq" else None, kind, rng)
        for name in params:
            params[name] = np.zeros_like(params[name])
        episodes = [_episode(rng, 2, k_gt=k_gt, rewards=[0.0, 0.0])]
        settings = TrainSettings(total_steps=1, batch_size=1, lambda_c=0.0,
                                 p_tilde=0.0)
        before = params.copy()
        info = train_step(params, params.copy(), make_batch(episodes), spec,
                          cfg, kind, settings, settings.optim(),
                          np.random.default_rng(2))
        assert info["loss"] == 0.0
        assert params.equal(before)


def test_hand_computed_losses():
    spec = AgentSpec(obs_dim=4, n_actions=3, n_agents=2, hidden=4)
    rng = np.random.default_rng(12)
    ep = _episode(rng, 1, rewards=[0.5])
    params = tr.init_run_params(spec, None, "vdn", rng)
    for name in params:
        params[name] = np.zeros_like(params[name])
    settings = TrainSettings(total_steps=1, batch_size=1)
    info = train_step(params.copy(), params.copy(), make_batch([ep]), spec,
                      None, "vdn", settings, settings.optim(),
                      np.random.default_rng(3))
    assert abs(info["loss"] - 0.25) < 1e-12

    # zeroed mixer: Q_tot = 0, every scorer logit 0, so the concept term is
    # exactly log 2 regardless of the labels
    cfg = mx.MixerConfig(n_agents=2, state_dim=5, concepts=4, embed_dim=6,
                         attn_dim=5, bias_hidden=4)
    ep2 = _episode(rng, 1, k_gt=4, rewards=[0.5])
    params2 = tr.init_run_params(spec, cfg, "cmq", rng)
    for name in params2:
        params2[name] = np.zeros_like(params2[name])
    settings2 = TrainSettings(total_steps=1, batch_size=1, p_tilde=0.0)
    info2 = train_step(params2.copy(), params2.copy(), make_batch([ep2]), spec,
                       cfg, "cmq", settings2, settings2.optim(),
                       np.random.default_rng(4))
    assert abs(info2["loss"] - (0.25 + 0.1 * np.log(2.0))) < 1e-12
    assert abs(info2["bce_loss"] - np.log(2.0)) < 1e-12


def test_train_step_reports_nonfinite_row():
    spec, cfg, params, episodes = _mixer_setup(k_gt=4, seed=13)
    batch = make_batch(episodes)
    batch.rewards[1, 1] = np.inf
    settings = TrainSettings(total_steps=1, batch_size=2)
    with pytest.raises(TrainingError, match=r"episode 1, step 1"):
        train_step(params, params.copy(), batch, spec, cfg, "cmq",
                   settings, settings.optim(), np.random.default_rng(5))


def test_train_step_rejects_unknown_kind():
    spec, cfg, params, episodes = _mixer_setup(k_gt=0, seed=14)
    settings = TrainSettings(total_steps=1, batch_size=2)
    with pytest.raises(ValueError, match="mixer kind"):
        train_step(params, params.copy(), make_batch(episodes), spec, cfg,
                   "qmix", settings, settings.optim(), np.random.default_rng(6))


def test_settings_validation():
    with pytest.raises(ValueError, match="gamma"):
        TrainSettings(gamma=0.0)
    with pytest.raises(ValueError, match="p_tilde"):
        TrainSettings(p_tilde=1.2)
    with pytest.raises(ValueError):
        TrainSettings(batch_size=0)


# ---------------------------------------------------------------------------
# full runs

def _tiny_env() -> LbfEnv:
    return LbfEnv(LbfConfig(grid_w=5, grid_h=5, n_agents=2, n_foods=1,
                            max_agent_level=2, episode_limit=8, view_range=2))


def _tiny_cfg(env) -> mx.MixerConfig:
    return mx.MixerConfig(n_agents=env.n_agents, state_dim=env.state_dim,
                          concepts=5, embed_dim=6, attn_dim=5, bias_hidden=4)


def _tiny_settings(total_steps) -> TrainSettings:
    return TrainSettings(total_steps=total_steps, batch_size=4,
                         buffer_episodes=60, target_interval=10,
                         eps_decay_steps=200, warmup_episodes=4,
                         eval_interval=100, eval_episodes=2, agent_hidden=8)


def test_run_training_is_deterministic():
    env = _tiny_env()
    out1 = run_training(env, _tiny_cfg(env), "cmq", _tiny_settings(300), seed=21)
    out2 = run_training(env, _tiny_cfg(env), "cmq", _tiny_settings(300), seed=21)
    assert out1.params.equal(out2.params)
    assert out1.metrics == out2.metrics
    assert out1.env_steps == out2.env_steps and out1.episodes == out2.episodes


def test_run_training_resume_is_bitwise_identical():
    env = _tiny_env()
    full = run_training(env, _tiny_cfg(env), "cmq", _tiny_settings(600), seed=22)
    half = run_training(env, _tiny_cfg(env), "cmq", _tiny_settings(300), seed=22)
    resumed = run_training(env, _tiny_cfg(env), "cmq", _tiny_settings(600),
                           seed=22, resume=half)
    assert resumed.params.equal(full.params)
    assert resumed.target_params.equal(full.target_params)
    assert resumed.metrics == full.metrics
    assert resumed.env_steps == full.env_steps
    assert resumed.rng_state == full.rng_state


def test_run_training_metrics_rows():
    env = _tiny_env()
    collected = []
    out = run_training(env, _tiny_cfg(env), "cmq", _tiny_settings(300),
                       seed=23, metrics_cb=collected.append)
    assert collected == out.metrics
    assert out.metrics[0]["env_steps"] == 0 and out.metrics[0]["loss"] is None
    eps_col = [row["epsilon"] for row in out.metrics]
    assert eps_col == sorted(eps_col, reverse=True)
    for row in out.metrics:
        assert set(f"p_hat_{k}" for k in range(5)) <= set(row)
        assert 0.0 <= row["concept_accuracy"] <= 1.0
    assert out.metrics[-1]["loss"] is not None
    assert len(out.metrics) >= 3


def test_run_training_vdn_has_no_concept_columns():
    env = _tiny_env()
    out = run_training(env, None, "vdn", _tiny_settings(120), seed=24)
    assert all("p_hat_0" not in row and "concept_accuracy" not in row
               for row in out.metrics)
    with pytest.raises(ValueError, match="mixer kind"):
        run_training(env, None, "qmix", _tiny_settings(120), seed=24)


def test_target_sync_cadence():
    env = _tiny_env()
    every = dataclasses.replace(_tiny_settings(150), target_interval=1)
    out = run_training(env, _tiny_cfg(env), "cmq", every, seed=25)
    assert out.target_params.equal(out.params)

    never = dataclasses.replace(_tiny_settings(150), target_interval=10**9,
                                warmup_episodes=0)
    out2 = run_training(env, _tiny_cfg(env), "cmq", never, seed=25)
    assert not out2.target_params.equal(out2.params)
    fresh = tr.init_run_params(out2.agent_spec, out2.mixer_cfg, "cmq",
                               np.random.default_rng(25))
    assert out2.target_params.equal(fresh)


def test_vdn_learns_matrix_optimum():
    env = MatrixEnv(MatrixGame(np.array([[8.0, 3.0], [3.0, 0.0]])))
    settings = TrainSettings(total_steps=1200, batch_size=16,
                             buffer_episodes=400, target_interval=25,
                             eps_decay_steps=400, warmup_episodes=20,
                             eval_interval=600, eval_episodes=4,
                             agent_hidden=8, lr=3e-3)
    out = run_training(env, None, "vdn", settings, seed=26)
    plain = subparams({k: v for k, v in out.params.items()}, "agent.")
    obs, _ = env.reset(0)
    h = np.zeros((2, 8))
    q, _ = agent_q(plain, build_agent_inputs(out.agent_spec, obs, None), h)
    assert int(np.argmax(q[0])) == 0 and int(np.argmax(q[1])) == 0
