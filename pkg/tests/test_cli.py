import json
import subprocess
import sys
import time

import numpy as np
import pytest

from cdrb.cli import main
from cdrb.config import RunConfig


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = RunConfig(n_demos=20, hidden=[32, 32], t=8, steps=30, batch=8, episodes=3, seeds=[0], out_dir=str(d / "runs"))
    cfg.save(d / "cfg.json")
    return d


@pytest.fixture(scope="module")
def checkpoints(workdir):
    paths = {}
    for method in ("cdrb", "gaussian"):
        paths[method] = workdir / f"{method}.ckpt"
        code = main(["train", "--config", str(workdir / "cfg.json"), "--method", method, "--out", str(paths[method])])
        assert code == 0
    return paths


def test_gen_demos_is_byte_identical(workdir):
    a, b = workdir / "a.jsonl", workdir / "b.jsonl"
    for p in (a, b):
        assert main(["gen-demos", "--config", str(workdir / "cfg.json"), "--n", "5", "--seed", "3", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = workdir / "c.jsonl"
    main(["gen-demos", "--config", str(workdir / "cfg.json"), "--n", "5", "--seed", "4", "--out", str(c)])
    assert c.read_bytes() != a.read_bytes()


def test_plan_is_pinned(workdir, checkpoints):
    out = workdir / "plan.json"
    svg = workdir / "plan.svg"
    code = main(
        ["plan", "--checkpoint", str(checkpoints["cdrb"]), "--start", "5", "5", "--goal", "1", "9", "--out", str(out), "--svg", str(svg)]
    )
    assert code == 0
    states = np.array(json.loads(out.read_text())["states"])
    assert np.array_equal(states[0], [5, 5, 0, 0])
    assert np.array_equal(states[-1], [1, 9, 0, 0])
    assert svg.read_text().startswith("<svg")


def test_eval_prints_a_three_row_table(workdir, checkpoints, capsys):
    code = main(
        [
            "eval",
            "--config", str(workdir / "cfg.json"),
            str(checkpoints["cdrb"]), str(checkpoints["gaussian"]),
            "--baselines", "projection",
            "--out", str(workdir / "eval"),
        ]
    )
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    rows = [ln.split()[0] for ln in lines[2:5]]
    assert rows == ["cdrb:cdrb", "gaussian:gaussian", "projection"]
    assert len(json.loads((workdir / "eval" / "eval_reports.json").read_text())) == 3


def test_exit_codes(workdir, checkpoints, capsys):
    # config error
    assert main(["gen-demos", "--n", "0", "--out", str(workdir / "x.jsonl")]) == 2
    bad = workdir / "bad.json"
    bad.write_text('{"method": "vae"}')
    assert main(["train", "--config", str(bad)]) == 2
    # missing or corrupt files
    assert main(["plan", "--checkpoint", str(workdir / "nope.ckpt"), "--start", "5", "5", "--goal", "1", "1"]) == 3
    junk = workdir / "junk.ckpt"
    junk.write_bytes(b"garbage")
    assert main(["eval", str(junk)]) == 3
    # a gated metric below threshold
    code = main(
        ["eval", "--config", str(workdir / "cfg.json"), "--baselines", "blind", "--min-success", "0.5", "--out", str(workdir / "gate")]
    )
    assert code == 5
    assert "below required" in capsys.readouterr().err


def test_infeasible_plan_start_is_a_config_error(checkpoints):
    assert main(["plan", "--checkpoint", str(checkpoints["cdrb"]), "--start", "2.7", "2.7", "--goal", "1", "1"]) == 2


def test_ablate_writes_table_and_curves(workdir):
    out = workdir / "abl"
    code = main(["ablate", "--config", str(workdir / "cfg.json"), "--kind", "steps_t", "--grid", "4", "--out", str(out)])
    assert code == 0
    assert len(json.loads((out / "ablate_steps_t_losses.json").read_text())["steps_t=4"]) == 30


def test_selftest_passes_quickly():
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "cdrb.cli", "selftest"], capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert proc.stdout.count("PASS") == 4
    assert elapsed < 60
