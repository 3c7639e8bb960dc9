"""Exit codes, artifacts and determinism of the histune command line."""

import os
import socket
import subprocess
import sys
import tempfile
from pathlib import Path

CLI = sys.argv[1]
failures = []


def run(*args, env=None):
    full_env = dict(os.environ)
    full_env.pop("HISTUNE_BUS_ADDR", None)
    full_env.update(env or {})
    return subprocess.run([CLI, *args], capture_output=True, text=True, env=full_env)


def expect(cond, what):
    if not cond:
        failures.append(what)
        print("FAIL", what)


work = Path(tempfile.mkdtemp(prefix="histune-cli-"))

r = run("--help")
expect(r.returncode == 0 and "th_stable_fraction" in r.stdout, "--help documents config defaults")
expect(run().returncode == 2, "missing subcommand is a config error")
expect(run("run", "--config", str(work / "absent.txt")).returncode == 2, "missing config file exits 2")
bad = work / "bad.txt"
bad.write_text("no_such_key = 1\n")
expect(run("run", "--config", str(bad)).returncode == 2, "unknown key exits 2")
expect(run("run", "--tuner", "bayes", "--out", str(work / "x")).returncode == 2, "unknown tuner exits 2")

cfg = work / "run.txt"
cfg.write_text("episodes = 40\ntuner = static\n")
a, b = work / "a", work / "b"
ra = run("run", "--config", str(cfg), "--seed", "7", "--tuner", "history", "--out", str(a))
rb = run("run", "--config", str(cfg), "--seed", "7", "--tuner", "history", "--out", str(b))
expect(ra.returncode == 0 and rb.returncode == 0, "history runs succeed")
rows = (a / "rewards.csv").read_text().splitlines()
expect(len(rows) == 41, "rewards.csv has one row per episode")
expect((a / "rewards.csv").read_bytes() == (b / "rewards.csv").read_bytes(), "same config gives identical rewards.csv")
expect("seed = 7" in (a / "config.txt").read_text(), "flags override file values in config.txt")

best_a = run("query", str(a / "history.log"), "best")
best_b = run("query", str(b / "history.log"), "best")
expect(best_a.returncode == 0 and best_a.stdout == best_b.stdout, "query best is deterministic")
expect(len(best_a.stdout.splitlines()) == 2, "best prints one triple")

empty = run("query", str(a / "history.log"), "tuning", "--from", "900000", "--to", "900001")
expect(empty.returncode == 0 and len(empty.stdout.splitlines()) == 1, "empty time range: header only, exit 0")

s = run("run", "--config", str(cfg), "--seed", "3", "--out", str(work / "static"))
gammas = {line.split(",")[2] for line in (work / "static" / "rewards.csv").read_text().splitlines()[1:]}
expect(s.returncode == 0 and gammas == {"0.9"}, "static gamma column constant")

tcp = run("run", "--config", str(cfg), "--seed", "7", "--tuner", "history", "--tcp", "--out", str(work / "tcp"),
          env={"HISTUNE_BUS_ADDR": "127.0.0.1:0"})
expect(tcp.returncode == 0, "tcp run succeeds")
expect((work / "tcp" / "rewards.csv").read_bytes() == (a / "rewards.csv").read_bytes(), "tcp run matches in-process")

holder = socket.socket()
holder.bind(("127.0.0.1", 0))
holder.listen()
busy = f"127.0.0.1:{holder.getsockname()[1]}"
r = run("run", "--config", str(cfg), "--tcp", "--out", str(work / "busy"), env={"HISTUNE_BUS_ADDR": busy})
expect(r.returncode == 3, "port in use is a component failure (3)")
r = run("compare", "--config", str(cfg), "--tuner", "static:0.9", "--tcp", "--out", str(work / "partial"),
        env={"HISTUNE_BUS_ADDR": busy})
expect(r.returncode == 4 and (work / "partial" / "PARTIAL").exists(), "failed sub-run flags a partial matrix (4)")
holder.close()

log = bytearray((a / "history.log").read_bytes())
log[-5] ^= 0x41
(work / "corrupt.log").write_bytes(bytes(log))
r = run("query", str(work / "corrupt.log"), "tuning")
expect(r.returncode == 3 and "offset" in r.stderr, "corrupt log reports the record offset")

r = run("compare", "--config", str(cfg), "--seed", "5", "--tuner", "static:0.9,history", "--out", str(work / "cmp"))
stats = (work / "cmp" / "stats.csv").read_text().splitlines()
expect(r.returncode == 0 and len(stats) == 3, "compare writes one stats row per kind")

print(f"{len(failures)} failures")
sys.exit(1 if failures else 0)
