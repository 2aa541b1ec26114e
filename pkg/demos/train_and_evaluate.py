"""Short training run, greedy evaluation on mixed traffic, PET and a replay check.

A real run uses 2000 episodes; this one takes a couple of minutes.

    python demos/train_and_evaluate.py [episodes] [out_dir]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from cavmarl.config import RunConfig
from cavmarl.metrics import compute_pet, export_traces, mean_pet, read_metrics_csv, success_rate
from cavmarl.runner import evaluate, replay_trace, train, zones_for


def main():
    episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 60
    out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(tempfile.mkdtemp(prefix="cavmarl_demo_"))
    cfg = RunConfig(variant="ma_ga_ddpg", episodes=episodes, seed=3, steps_per_update=25, batch_size=64,
                    checkpoint_every=max(episodes // 2, 1))
    res = train(cfg, out / "train")
    rows = res.log_rows
    k = max(len(rows) // 5, 1)
    for start in range(0, len(rows), k):
        chunk = rows[start:start + k]
        print(f"episodes {start:3d}-{start + len(chunk) - 1:3d}: mean reward "
              f"{sum(r['mean_reward'] for r in chunk) / len(chunk):6.2f}")

    mixed = cfg.with_overrides(traffic="heterogeneous")
    for inspector in (False, True):
        traces = evaluate(res.agents, mixed, episodes=20, seed=1, use_inspector=inspector)
        zones = zones_for(mixed)
        pets = [s for tr in traces for s in compute_pet(tr, zones)]
        crashes = sum(len(tr.header.get("collided", [])) for tr in traces)
        print(f"mixed traffic, inspector {'on ' if inspector else 'off'}: success {success_rate(traces):.2f}, "
              f"collided CAVs {crashes}, mean PET {mean_pet(pets):.2f} s over {len(pets)} pairs")

    files = export_traces(traces, out / "eval", zones)
    print("summary row:", read_metrics_csv(files["summary"])[0])
    report = replay_trace(traces[0])
    print(f"replay of episode 0: {'identical' if report.identical else 'MISMATCH'} "
          f"({report.steps_checked} sim steps)")
    print(f"outputs under {out}")


if __name__ == "__main__":
    main()
