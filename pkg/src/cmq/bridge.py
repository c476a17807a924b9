"""Live evaluation sessions over a local WebSocket.

A client drives one greedy episode at a time: it resets with a seed, steps
(manually or on a timer), inspects the concept state behind every decision,
and forces concept probabilities whose effect shows up from the next step
onward. All session math reuses the exact training-side forward passes, so
with no interventions a served episode replays offline evaluation
action for action.
"""
from __future__ import annotations

import json
import socket

import numpy as np

from . import mixer as mx
from . import ws
from .agents import agent_q, build_agent_inputs, select_action
from .autodiff import value_of
from .env import ACTION_NAMES, CONCEPT_NAMES, LbfEnv
from .mixer import InterventionMask
from .nets import subparams
from .runio import Checkpoint, load_checkpoint

BRIDGE_SCHEMA = "cmq-bridge-1"


class SessionError(RuntimeError):
    """Client-visible request failure; the session state is untouched."""


class Session:
    """One episode-at-a-time evaluation session bound to a checkpoint.

    The intervention mask is session state: it survives resets and applies
    from the next step after a change, never retroactively. Every position
    gets its frame computed exactly once, on entry, so ``get_state`` is
    repeatable and replies are bit-stable.
    """

    def __init__(self, ckpt: Checkpoint):
        self.env = ckpt.config.build_env()
        state = ckpt.state
        self.spec = state.agent_spec
        self.mixer_cfg = state.mixer_cfg
        self.mixer_kind = state.mixer_kind
        plain = {k: value_of(v) for k, v in state.params.items()}
        self.agent_params = subparams(plain, "agent.")
        self.mixer_params = (subparams(plain, "mixer.")
                             if self.mixer_kind == "cmq" else None)
        self.concepts = self.mixer_cfg.concepts if self.mixer_kind == "cmq" else 0
        self.supervised = min(self.concepts, self.env.n_concepts)
        self.mask: dict[int, float] = {}
        self.mode = "paused"
        self.ms_per_step = 0.0
        self.seed: int | None = None
        self.done = False
        self._frame: dict | None = None
        self._obs = None
        self._state = None
        self._hidden = None
        self._last_actions = None
        self._next_actions = None
        self._t = 0
        self._return = 0.0

    @property
    def has_episode(self) -> bool:
        return self._frame is not None

    def hello(self) -> dict:
        names = CONCEPT_NAMES[:self.supervised] if isinstance(self.env, LbfEnv) else ()
        return {"schema": BRIDGE_SCHEMA, "type": "hello",
                "mixer": self.mixer_kind,
                "n_agents": self.spec.n_agents,
                "n_actions": self.spec.n_actions,
                "action_names": list(ACTION_NAMES[:self.spec.n_actions]),
                "concepts": self.concepts,
                "supervised": self.supervised,
                "concept_names": list(names)}

    def reset(self, seed: int) -> dict:
        self._obs, self._state = self.env.reset(seed)
        self._hidden = np.zeros((self.spec.n_agents, self.spec.hidden))
        self._last_actions = None
        self.seed = seed
        self.done = False
        self._t = 0
        self._return = 0.0
        self._frame = self._enter_position(reward=0.0)
        return self._frame

    def step(self) -> dict:
        if not self.has_episode:
            raise SessionError("no active episode; send reset first")
        if self.done:
            raise SessionError("episode done; send reset to start a new one")
        actions = self._next_actions
        self._obs, self._state, reward, self.done = self.env.step(actions)
        self._last_actions = actions
        self._t += 1
        self._return += float(reward)
        self._frame = self._enter_position(reward=float(reward))
        return self._frame

    def intervene(self, raw_mask: dict) -> dict[int, float]:
        """Merge forced probabilities into the session mask; idempotent."""
        if self.mixer_kind != "cmq":
            raise SessionError("the additive baseline has no concepts to force")
        merged = dict(self.mask)
        for key, value in raw_mask.items():
            try:
                k = int(str(key), 10)
            except ValueError:
                raise SessionError(f"concept index {key!r} is not an integer")
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SessionError(f"forced value for concept {k} must be a number")
            merged[k] = float(value)
        try:
            InterventionMask(merged).validate(self.concepts)
        except ValueError as e:
            raise SessionError(str(e))
        self.mask = merged
        return merged

    def clear_interventions(self) -> None:
        self.mask = {}

    def get_state(self) -> dict:
        if not self.has_episode:
            raise SessionError("no active episode; send reset first")
        return self._frame

    def _grid(self) -> dict | None:
        if not isinstance(self.env, LbfEnv):
            return None
        st, cfg = self.env.state, self.env.cfg
        return {"width": cfg.grid_w, "height": cfg.grid_h,
                "agents": [{"x": int(x), "y": int(y), "level": int(l)}
                           for (x, y), l in zip(st.agent_xy, st.agent_levels)],
                "foods": [{"x": int(x), "y": int(y), "level": int(l),
                           "alive": bool(a)}
                          for (x, y), l, a in zip(st.food_xy, st.food_levels,
                                                  st.food_alive)]}

    def _enter_position(self, reward: float) -> dict:
        # identical forward math to the offline greedy rollout, one position
        x = build_agent_inputs(self.spec, self._obs, self._last_actions)
        q, self._hidden = agent_q(self.agent_params, x, self._hidden)
        n = self.spec.n_agents
        actions = [select_action(q[i], 0.0, None) for i in range(n)]
        self._next_actions = actions

        frame = {"schema": BRIDGE_SCHEMA, "type": "frame",
                 "t": self._t, "seed": self.seed, "mode": self.mode,
                 "grid": self._grid(),
                 "q": [[float(v) for v in row] for row in q],
                 "actions": list(actions),
                 "forced": {str(k): v for k, v in sorted(self.mask.items())},
                 "concepts": [float(c) for c in self.env.concept_labels()],
                 "reward": reward,
                 "episode_return": self._return,
                 "done": self.done}
        q_chosen = np.array([[float(q[i, actions[i]]) for i in range(n)]])
        if self.mixer_kind == "cmq":
            keep, forced = InterventionMask(dict(self.mask)).as_arrays(self.concepts)
            out = mx.mix_batch(self.mixer_params, self.mixer_cfg, q_chosen,
                               self._state[None, :], keep, forced)
            frame["p_hat"] = value_of(out.p_hat)[0].tolist()
            frame["p_used"] = value_of(out.p_used)[0].tolist()
            frame["alpha"] = value_of(out.alpha)[0].tolist()
            frame["q_hat"] = value_of(out.q_hat)[0].tolist()
            frame["q_tot"] = float(value_of(out.q_tot)[0])
        else:
            frame["p_hat"] = []
            frame["p_used"] = []
            frame["alpha"] = []
            frame["q_hat"] = []
            frame["q_tot"] = float(q_chosen.sum())
        return frame


def _error(message: str) -> dict:
    return {"schema": BRIDGE_SCHEMA, "type": "error", "error": message}


def _ack(session: Session, of: str) -> dict:
    return {"schema": BRIDGE_SCHEMA, "type": "ack", "of": of,
            "mask": {str(k): v for k, v in sorted(session.mask.items())},
            "mode": session.mode}


def handle_message(session: Session, raw: str) -> dict:
    """One reply per request; failed requests leave the session unchanged."""
    try:
        msg = json.loads(raw)
    except ValueError as e:
        return _error(f"malformed JSON: {e}")
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        return _error("message must be an object with a string 'type' field")
    kind = msg["type"]
    try:
        if kind == "reset":
            seed = msg.get("seed")
            if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
                raise SessionError("reset needs a non-negative integer 'seed'")
            return session.reset(seed)
        if kind == "step":
            return session.step()
        if kind == "get_state":
            return session.get_state()
        if kind == "intervene":
            mask = msg.get("mask")
            if not isinstance(mask, dict) or not mask:
                raise SessionError("intervene needs a non-empty 'mask' object")
            session.intervene(mask)
            return _ack(session, kind)
        if kind == "clear_interventions":
            session.clear_interventions()
            return _ack(session, kind)
        if kind == "auto":
            ms = msg.get("ms_per_step")
            if isinstance(ms, bool) or not isinstance(ms, (int, float)) or ms < 0:
                raise SessionError("auto needs a non-negative number 'ms_per_step'")
            if not session.has_episode:
                raise SessionError("no active episode; send reset first")
            if session.done:
                raise SessionError("episode done; send reset to start a new one")
            session.mode = "auto"
            session.ms_per_step = float(ms)
            return _ack(session, kind)
        if kind == "pause":
            session.mode = "paused"
            return _ack(session, kind)
        return _error(f"unknown message type {kind!r}")
    except SessionError as e:
        return _error(str(e))


def _session_loop(conn: ws.WsConnection, session: Session) -> None:
    conn.send_text(json.dumps(session.hello()))
    while True:
        if session.mode == "auto" and session.has_episode and not session.done:
            if conn.poll(session.ms_per_step / 1000.0):
                raw = conn.recv_text()
                if raw is None:
                    return
                conn.send_text(json.dumps(handle_message(session, raw)))
            else:
                frame = session.step()
                conn.send_text(json.dumps(frame))
                if session.done:
                    session.mode = "paused"
        else:
            raw = conn.recv_text()
            if raw is None:
                return
            conn.send_text(json.dumps(handle_message(session, raw)))


def serve(checkpoint, host: str = "127.0.0.1", port: int = 8765,
          max_sessions: int | None = None, ready=None) -> None:
    """Serve sessions one client at a time until ``max_sessions`` are done.

    ``checkpoint`` is a path or an already loaded Checkpoint; ``ready`` (if
    given) receives the bound port, useful with port 0.
    """
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        srv.bind((host, port))
        srv.listen(1)
        if ready is not None:
            ready(srv.getsockname()[1])
        served = 0
        while max_sessions is None or served < max_sessions:
            try:
                conn = ws.accept(srv)
            except ws.WsError:
                continue
            try:
                _session_loop(conn, Session(ckpt))
            except (ws.WsError, OSError):
                pass
            finally:
                conn.close()
            served += 1
    finally:
        srv.close()
