"""Record the example bridge transcript shipped in docs/.

Trains a small checkpoint, serves it once on an ephemeral port and drives a
representative session, logging every message from the client's point of
view. Deterministic end to end; rerunning rewrites the same file.
"""
import json
import pathlib
import threading

from cmq import ws
from cmq.bridge import serve
from cmq.env import LbfConfig
from cmq.runio import RunConfig, make_checkpoint
from cmq.training import TrainSettings, run_training

OUT = pathlib.Path(__file__).resolve().parent.parent / "docs" / "bridge_transcript.jsonl"


def small_checkpoint():
    cfg = RunConfig(
        env_cfg=LbfConfig(grid_w=6, grid_h=6, episode_limit=12),
        concepts=8, embed_dim=8, attn_dim=8, bias_hidden=6,
        training=TrainSettings(total_steps=2000, buffer_episodes=200,
                               eps_decay_steps=1500, warmup_episodes=20,
                               eval_interval=1000, eval_episodes=4,
                               agent_hidden=16),
        seeds=(0,))
    state = run_training(cfg.build_env(), cfg.build_mixer_cfg(cfg.build_env()),
                         cfg.mixer_kind, cfg.training, seed=0)
    return make_checkpoint(cfg, state)


def main():
    ckpt = small_checkpoint()
    ready = threading.Event()
    box = {}

    def on_ready(port):
        box["port"] = port
        ready.set()

    server = threading.Thread(target=serve, args=(ckpt,),
                              kwargs={"port": 0, "max_sessions": 1,
                                      "ready": on_ready}, daemon=True)
    server.start()
    ready.wait(10)

    log = []
    conn = ws.connect("127.0.0.1", box["port"])

    def pull():
        msg = json.loads(conn.recv_text())
        log.append({"dir": "<-", "msg": msg})
        return msg

    def push(**msg):
        log.append({"dir": "->", "msg": msg})
        conn.send_text(json.dumps(msg))

    pull()                                   # hello
    push(type="reset", seed=7), pull()
    push(type="step"), pull()
    push(type="intervene", mask={"1": 1.0}), pull()
    push(type="step"), pull()                # p_used[1] pinned to 1.0
    push(type="intervene", mask={"0": 1.5}), pull()   # range error, no change
    push(type="clear_interventions"), pull()
    push(type="step"), pull()
    push(type="get_state"), pull()
    conn.close()
    server.join(10)

    with open(OUT, "w") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
    print(f"wrote {OUT} ({len(log)} messages)")


if __name__ == "__main__":
    main()
