"""Run configuration, checkpointing, metrics/trace export, run locking.

Configs are YAML with three sections (env, mixer, training); absent keys fall
back to the standard hyperparameters.  Checkpoints are single .npz archives
carrying parameters, optimizer state, replay contents, counters and the RNG
state, with a sha256 checksum so corruption is detected before any state is
handed back.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import zipfile
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import mixer as mx
from .agents import AgentSpec, agent_q, build_agent_inputs
from .autodiff import value_of
from .env import LbfConfig, MatrixGame, make_env
from .mixer import InterventionMask, MixerConfig
from .nets import ParamSet, subparams
from .training import (Episode, OptimState, ReplayBuffer, TrainResult,
                       TrainSettings, rollout_episode)

CHECKPOINT_VERSION = "cmq-ckpt-1"
TRACE_SCHEMA = "cmq-trace-1"


class ConfigError(ValueError):
    """Malformed run configuration; message names the offending key."""


class CheckpointError(RuntimeError):
    """Unreadable, corrupt or version-mismatched checkpoint."""


class LockError(RuntimeError):
    """Run directory already owned by another process."""


# ---------------------------------------------------------------------------
# configuration

_LBF_FIELDS = {"grid_w": int, "grid_h": int, "n_agents": int, "n_foods": int,
               "max_agent_level": int, "episode_limit": int, "view_range": int,
               "coop_penalty": float, "force_coop": bool}
_MIXER_FIELDS = {"kind": str, "concepts": int, "embed_dim": int,
                 "attn_dim": int, "bias_hidden": int}
_TRAINING_FIELDS = {"gamma": float, "lr": float, "rms_smoothing": float,
                    "rms_eps": float, "clip_norm": float, "batch_size": int,
                    "buffer_episodes": int, "target_interval": int,
                    "eps_start": float, "eps_end": float,
                    "eps_decay_steps": int, "p_tilde": float,
                    "lambda_c": float, "total_steps": int,
                    "warmup_episodes": int, "eval_interval": int,
                    "eval_episodes": int, "agent_hidden": int, "seeds": list}


@dataclass
class RunConfig:
    env_cfg: object = field(default_factory=LbfConfig)
    mixer_kind: str = "cmq"
    concepts: int = 16
    embed_dim: int = 64
    attn_dim: int = 64
    bias_hidden: int = 32
    training: TrainSettings = field(default_factory=TrainSettings)
    seeds: tuple = (0,)

    def build_env(self):
        return make_env(self.env_cfg)

    def build_mixer_cfg(self, env) -> MixerConfig | None:
        if self.mixer_kind != "cmq":
            return None
        return MixerConfig(n_agents=env.n_agents, state_dim=env.state_dim,
                           concepts=self.concepts, embed_dim=self.embed_dim,
                           attn_dim=self.attn_dim, bias_hidden=self.bias_hidden)

    def equal(self, other: "RunConfig") -> bool:
        if type(self.env_cfg) is not type(other.env_cfg):
            return False
        if isinstance(self.env_cfg, MatrixGame):
            env_eq = np.array_equal(self.env_cfg.payoff, other.env_cfg.payoff)
        else:
            env_eq = self.env_cfg == other.env_cfg
        return (env_eq and self.mixer_kind == other.mixer_kind
                and self.concepts == other.concepts
                and self.embed_dim == other.embed_dim
                and self.attn_dim == other.attn_dim
                and self.bias_hidden == other.bias_hidden
                and self.training == other.training
                and self.seeds == other.seeds)


def _checked(section: str, raw: dict, fields: dict) -> dict:
    out = {}
    for key, val in raw.items():
        if key not in fields:
            raise ConfigError(f"unknown key '{section}.{key}'")
        want = fields[key]
        if want is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if want is int and isinstance(val, bool):
            raise ConfigError(f"{section}.{key}: expected int, got bool")
        if not isinstance(val, want):
            raise ConfigError(
                f"{section}.{key}: expected {want.__name__}, got {type(val).__name__}")
        out[key] = val
    return out


def _positive(section: str, kv: dict, *keys: str) -> None:
    for key in keys:
        if key in kv and kv[key] < 1:
            raise ConfigError(f"{section}.{key}: must be a positive integer, "
                              f"got {kv[key]}")


def parse_config(data: dict | None) -> RunConfig:
    data = dict(data or {})
    sections = set(data) - {"env", "mixer", "training"}
    if sections:
        raise ConfigError(f"unknown key '{sorted(sections)[0]}'")

    env_raw = dict(data.get("env") or {})
    kind = env_raw.pop("kind", "lbf")
    if kind == "lbf":
        kv = _checked("env", env_raw, _LBF_FIELDS)
        try:
            env_cfg = LbfConfig(**kv)
        except ValueError as e:
            raise ConfigError(f"env: {e}") from e
    elif kind == "matrix":
        payoff = env_raw.pop("payoff", None)
        if env_raw:
            raise ConfigError(f"unknown key 'env.{sorted(env_raw)[0]}'")
        if payoff is None:
            raise ConfigError("env.payoff: required for kind 'matrix'")
        try:
            env_cfg = MatrixGame(np.array(payoff, dtype=np.float64))
        except ValueError as e:
            raise ConfigError(f"env.payoff: {e}") from e
    else:
        raise ConfigError(f"env.kind: expected 'lbf' or 'matrix', got {kind!r}")

    mixer_raw = _checked("mixer", dict(data.get("mixer") or {}), _MIXER_FIELDS)
    mixer_kind = mixer_raw.pop("kind", "cmq")
    if mixer_kind not in ("cmq", "vdn"):
        raise ConfigError(f"mixer.kind: expected 'cmq' or 'vdn', got {mixer_kind!r}")
    _positive("mixer", mixer_raw, "concepts", "embed_dim", "attn_dim", "bias_hidden")

    train_raw = _checked("training", dict(data.get("training") or {}),
                         _TRAINING_FIELDS)
    seeds = train_raw.pop("seeds", [0])
    if (not seeds
            or any(isinstance(s, bool) or not isinstance(s, int) for s in seeds)):
        raise ConfigError("training.seeds: expected a non-empty list of ints")
    _positive("training", train_raw, "batch_size", "buffer_episodes",
              "target_interval", "eps_decay_steps", "total_steps",
              "eval_interval", "eval_episodes", "agent_hidden")
    for key, lo, hi in (("gamma", 0.0, 1.0), ("p_tilde", 0.0, 1.0),
                        ("eps_start", 0.0, 1.0), ("eps_end", 0.0, 1.0)):
        if key in train_raw and not lo <= train_raw[key] <= hi:
            raise ConfigError(f"training.{key}: must lie in [{lo}, {hi}], "
                              f"got {train_raw[key]}")
    if "gamma" in train_raw and train_raw["gamma"] == 0.0:
        raise ConfigError("training.gamma: must lie in (0, 1], got 0.0")
    try:
        training = TrainSettings(**train_raw)
    except ValueError as e:
        raise ConfigError(f"training: {e}") from e

    return RunConfig(env_cfg=env_cfg, mixer_kind=mixer_kind,
                     training=training, seeds=tuple(seeds), **mixer_raw)


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path!r} is not valid YAML: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"config {path!r}: top level must be a mapping")
    return parse_config(data)


def dump_config(cfg: RunConfig) -> str:
    if isinstance(cfg.env_cfg, MatrixGame):
        env = {"kind": "matrix", "payoff": cfg.env_cfg.payoff.tolist()}
    else:
        env = {"kind": "lbf", **dataclasses.asdict(cfg.env_cfg)}
    data = {
        "env": env,
        "mixer": {"kind": cfg.mixer_kind, "concepts": cfg.concepts,
                  "embed_dim": cfg.embed_dim, "attn_dim": cfg.attn_dim,
                  "bias_hidden": cfg.bias_hidden},
        "training": {**dataclasses.asdict(cfg.training),
                     "seeds": list(cfg.seeds)},
    }
    return yaml.safe_dump(data, sort_keys=False)


def save_config(path: str, cfg: RunConfig) -> None:
    with open(path, "w") as f:
        f.write(dump_config(cfg))


# ---------------------------------------------------------------------------
# metrics

METRIC_ORDER = ("env_steps", "episodes", "mean_test_return", "loss", "epsilon")


class MetricsWriter:
    """Streams metric rows to CSV, header from the first row, flushed per row."""

    def __init__(self, path: str):
        self._f = open(path, "w", newline="")
        self._writer = None

    def __call__(self, row: dict) -> None:
        if self._writer is None:
            import csv
            self._writer = csv.DictWriter(self._f, fieldnames=list(row),
                                          restval="", extrasaction="ignore")
            self._writer.writeheader()
        self._writer.writerow(row)
        self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_metrics(path: str) -> list[dict]:
    import csv
    rows = []
    with open(path, newline="") as f:
        for raw in csv.DictReader(f):
            row = {}
            for key, val in raw.items():
                if val == "":
                    row[key] = None
                elif key in ("env_steps", "episodes"):
                    row[key] = int(val)
                else:
                    row[key] = float(val)
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    version: str
    config: RunConfig
    state: TrainResult


def make_checkpoint(config: RunConfig, state: TrainResult) -> Checkpoint:
    return Checkpoint(version=CHECKPOINT_VERSION, config=config, state=state)


def _array_checksum(arrays: dict) -> str:
    h = hashlib.sha256()
    for key in sorted(arrays):
        a = arrays[key]
        h.update(key.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    state = ckpt.state
    arrays: dict[str, np.ndarray] = {}
    for name in state.params:
        arrays[f"p/{name}"] = state.params[name]
    for name in state.target_params:
        arrays[f"t/{name}"] = state.target_params[name]
    for name, acc in state.opt.acc.items():
        arrays[f"o/{name}"] = acc

    episodes = state.buffer.episodes
    lengths = [e.length for e in episodes]
    if episodes:
        for fname, per_ep in (("obs", [e.obs for e in episodes]),
                              ("states", [e.states for e in episodes]),
                              ("actions", [e.actions for e in episodes]),
                              ("rewards", [e.rewards for e in episodes]),
                              ("dones", [e.dones for e in episodes]),
                              ("concepts", [e.concepts for e in episodes])):
            arrays[f"buf/{fname}"] = np.concatenate(per_ep, axis=0)

    meta = {
        "version": ckpt.version,
        "config": dump_config(ckpt.config),
        "mixer_kind": state.mixer_kind,
        "env_steps": state.env_steps,
        "episodes": state.episodes,
        "next_eval": state.next_eval,
        "last_loss": state.last_loss,
        "rng_state": state.rng_state,
        "metrics": state.metrics,
        "buffer_lengths": lengths,
        "buffer_truncated": [int(e.truncated) for e in episodes],
        "buffer_n_actions": episodes[0].n_actions if episodes else 0,
        "opt": {"lr": state.opt.lr, "smoothing": state.opt.smoothing,
                "eps": state.opt.eps, "clip_norm": state.opt.clip_norm},
        "checksum": _array_checksum(arrays),
    }
    with open(path, "wb") as f:
        np.savez(f, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"corrupt checkpoint {path!r}: {e}") from e
    if "__meta__" not in data:
        raise CheckpointError(f"corrupt checkpoint {path!r}: missing metadata")
    meta = json.loads(str(data.pop("__meta__")))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {meta.get('version')!r}, "
            f"expected {CHECKPOINT_VERSION!r}")
    if meta["checksum"] != _array_checksum(data):
        raise CheckpointError(f"corrupt checkpoint {path!r}: checksum mismatch")

    config = parse_config(yaml.safe_load(meta["config"]))
    env = config.build_env()
    settings = config.training
    agent_spec = AgentSpec(env.obs_dim, env.n_actions, env.n_agents,
                           settings.agent_hidden)
    mixer_cfg = config.build_mixer_cfg(env)

    params = ParamSet(meta={"agent_spec": agent_spec, "mixer_cfg": mixer_cfg,
                            "mixer_kind": meta["mixer_kind"]})
    target = ParamSet()
    for key, arr in data.items():
        if key.startswith("p/"):
            params.add(key[2:], arr)
        elif key.startswith("t/"):
            target.add(key[2:], arr)

    opt = OptimState(**meta["opt"])
    for key, arr in data.items():
        if key.startswith("o/"):
            opt.acc[key[2:]] = arr

    buffer = ReplayBuffer(settings.buffer_episodes)
    lengths = meta["buffer_lengths"]
    if lengths:
        state_splits = np.cumsum([t + 1 for t in lengths])[:-1]
        step_splits = np.cumsum(lengths)[:-1]
        obs = np.split(data["buf/obs"], state_splits)
        states = np.split(data["buf/states"], state_splits)
        concepts = np.split(data["buf/concepts"], state_splits)
        actions = np.split(data["buf/actions"], step_splits)
        rewards = np.split(data["buf/rewards"], step_splits)
        dones = np.split(data["buf/dones"], step_splits)
        truncated = meta["buffer_truncated"]
        for i in range(len(lengths)):
            buffer.push_episode(Episode(
                obs=obs[i], states=states[i], actions=actions[i],
                rewards=rewards[i], dones=dones[i], concepts=concepts[i],
                n_actions=meta["buffer_n_actions"],
                truncated=bool(truncated[i])))

    rng_state = meta["rng_state"]
    state = TrainResult(params=params, target_params=target, opt=opt,
                        buffer=buffer, metrics=meta["metrics"],
                        env_steps=meta["env_steps"], episodes=meta["episodes"],
                        next_eval=meta["next_eval"], rng_state=rng_state,
                        agent_spec=agent_spec, mixer_cfg=mixer_cfg,
                        mixer_kind=meta["mixer_kind"],
                        last_loss=meta["last_loss"])
    return Checkpoint(version=meta["version"], config=config, state=state)


# ---------------------------------------------------------------------------
# traces

def trace_episode(env, state: TrainResult, seed: int,
                  interventions: dict | None = None):
    """Replay one greedy episode with full mixer introspection.

    Returns (header, records, embeddings) where embeddings is the per-step
    (T, K, m) stack of mixed concept vectors, or None for the additive
    baseline.
    """
    spec = state.agent_spec
    episode = rollout_episode(env, state.params, spec, 0.0, None, seed)
    t_len = episode.length

    plain = {k: value_of(v) for k, v in state.params.items()}
    agent_params = subparams(plain, "agent.")
    h = np.zeros((spec.n_agents, spec.hidden))
    q_steps = []
    last = None
    for t in range(t_len):
        q, h = agent_q(agent_params, build_agent_inputs(spec, episode.obs[t], last), h)
        q_steps.append(q)
        last = episode.actions[t]
    q_chosen = np.array([np.take_along_axis(q_steps[t], episode.actions[t][:, None],
                                            axis=-1)[:, 0] for t in range(t_len)])

    header = {"schema": TRACE_SCHEMA, "mixer": state.mixer_kind,
              "n_agents": spec.n_agents, "seed": seed,
              "episode_length": t_len,
              "interventions": {str(k): v for k, v in (interventions or {}).items()}}
    records = []
    embeddings = None
    if state.mixer_kind == "cmq":
        cfg = state.mixer_cfg
        header["concepts"] = cfg.concepts
        mask = InterventionMask(dict(interventions or {}))
        mask.validate(cfg.concepts)
        keep, forced = mask.as_arrays(cfg.concepts)
        out = mx.mix_batch(subparams(plain, "mixer."), cfg, q_chosen,
                           episode.states[:t_len], keep, forced)
        embeddings = value_of(out.emb_mixed)
        for t in range(t_len):
            records.append({
                "t": t,
                "state": episode.states[t].tolist(),
                "q": q_steps[t].tolist(),
                "actions": episode.actions[t].tolist(),
                "p_hat": value_of(out.p_hat)[t].tolist(),
                "p_used": value_of(out.p_used)[t].tolist(),
                "alpha": value_of(out.alpha)[t].tolist(),
                "q_hat": value_of(out.q_hat)[t].tolist(),
                "q_tot": float(value_of(out.q_tot)[t]),
                "reward": float(episode.rewards[t]),
                "concepts": episode.concepts[t].tolist(),
            })
    else:
        header["concepts"] = 0
        for t in range(t_len):
            records.append({
                "t": t,
                "state": episode.states[t].tolist(),
                "q": q_steps[t].tolist(),
                "actions": episode.actions[t].tolist(),
                "q_tot": float(q_chosen[t].sum()),
                "reward": float(episode.rewards[t]),
                "concepts": episode.concepts[t].tolist(),
            })
    return header, records, embeddings


def export_trace(path: str, env, state: TrainResult, seed: int,
                 interventions: dict | None = None) -> dict:
    """Write a trace as JSON lines (header first) plus a companion .npz of
    mixed concept embeddings for external projection."""
    header, records, embeddings = trace_episode(env, state, seed, interventions)
    base, _ = os.path.splitext(path)
    if embeddings is not None:
        emb_path = base + ".emb.npz"
        header["embeddings"] = os.path.basename(emb_path)
        np.savez(emb_path,
                 emb=embeddings,
                 p_hat=np.array([r["p_hat"] for r in records]),
                 alpha=np.array([r["alpha"] for r in records]))
    else:
        header["embeddings"] = None
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return header


def read_trace(path: str):
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines:
        raise ValueError(f"trace {path!r} is empty")
    return lines[0], lines[1:]


# ---------------------------------------------------------------------------
# run locking

class RunLock:
    """Exclusive lock on a run directory via an O_EXCL lock file."""

    def __init__(self, out_dir: str):
        self.path = os.path.join(out_dir, "run.lock")
        self._fd = None

    def __enter__(self):
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(
                f"run directory is locked ({self.path} exists); remove it if "
                f"no other run is active") from None
        os.write(self._fd, f"{os.getpid()}\n".encode())
        return self

    def __exit__(self, *exc):
        if self._fd is not None:
            os.close(self._fd)
            os.unlink(self.path)


# ---------------------------------------------------------------------------
# gradient-check battery

def gradcheck_battery(n_configs: int = 20, base_seed: int = 0,
                      eps: float = 1e-5) -> list[dict]:
    """Finite-difference checks of the full pipeline (agents + mixer + loss)
    on random tiny configurations; returns one record per configuration."""
    from . import autodiff as adm
    from . import training as tr

    results = []
    for i in range(n_configs):
        rng = np.random.default_rng(base_seed + i)
        n_agents, k, m = 3, 4, 8
        n_actions = int(rng.integers(2, 5))
        obs_dim = int(rng.integers(3, 6))
        s_dim = int(rng.integers(4, 7))
        k_gt = int(rng.integers(0, 5))
        spec = AgentSpec(obs_dim=obs_dim, n_actions=n_actions,
                         n_agents=n_agents, hidden=int(rng.integers(3, 6)))
        cfg = MixerConfig(n_agents=n_agents, state_dim=s_dim, concepts=k,
                          embed_dim=m, attn_dim=int(rng.integers(2, 5)),
                          bias_hidden=int(rng.integers(2, 5)))
        params = tr.init_run_params(spec, cfg, "cmq", rng)

        def episode(t):
            dones = np.zeros(t)
            dones[-1] = 1.0
            return Episode(obs=rng.normal(size=(t + 1, n_agents, obs_dim)),
                           states=rng.normal(size=(t + 1, s_dim)),
                           actions=rng.integers(n_actions, size=(t, n_agents)),
                           rewards=rng.normal(size=t), dones=dones,
                           concepts=rng.integers(2, size=(t + 1, k_gt)).astype(float),
                           n_actions=n_actions)

        batch = tr.make_batch([episode(2), episode(1)])
        settings = TrainSettings(total_steps=1, batch_size=2, p_tilde=0.25)
        y = tr.td_target(batch, params, spec, cfg, "cmq", settings.gamma)
        keep = forced = None
        if k_gt:
            labels = batch.concepts.transpose(1, 0, 2).reshape(-1, k_gt)[
                tr._flat_order(batch.state_mask)]
            keep, forced = tr.sample_interventions(
                rng, settings.p_tilde, int(batch.state_mask.sum()), k, labels)

        def f(leaves):
            return tr.training_loss(leaves, batch, spec, cfg, "cmq",
                                    settings, y, keep, forced)[0]

        err = adm.grad_check(f, dict(params.items()), eps=eps)
        results.append({"config": i, "n_actions": n_actions, "obs_dim": obs_dim,
                        "state_dim": s_dim, "k_gt": k_gt,
                        "n_params": params.n_params(), "max_rel_err": err})
    return results
