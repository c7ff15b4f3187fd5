#!/usr/bin/env python3
"""Smoke test for the codedmarl Python extension.

Builds nothing itself: run `cargo build -p coded-marl-py` first. The script
locates the compiled cdylib under target/, exposes it as an importable
module, and drives the main surfaces end to end.
"""

import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_codedmarl():
    candidates = [
        REPO / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libcodedmarl.so", "codedmarl.so", "libcodedmarl.dylib")
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit(
            "codedmarl cdylib not found; run `cargo build -p coded-marl-py` first"
        )
    stage = Path(tempfile.mkdtemp(prefix="codedmarl_py_"))
    shutil.copy(lib, stage / "codedmarl.so")
    sys.path.insert(0, str(stage))
    import codedmarl

    return codedmarl


def approx(a, b, tol=1e-9):
    return abs(a - b) <= tol * (1.0 + max(abs(a), abs(b)))


def test_coding(cm):
    mds = cm.AssignmentMatrix.mds(3, 2, [1.0, 2.0])
    assert mds.n == 3 and mds.m == 2 and mds.scheme == "mds"
    assert mds.entries == [[1.0, 1.0], [1.0, 2.0], [1.0, 4.0]]
    assert mds.is_decodable([1, 2])
    assert not mds.is_decodable([0])

    # Hand-checkable recovery: rows 1 and 2 see y = [1,2] and [1,4] exactly
    # when theta_0 = [1,0] and theta_1 = [0,1].
    blocks = {0: [1.0, 0.0], 1: [0.0, 1.0]}
    assert mds.encode_response(2, blocks) == [1.0, 4.0]
    decoded = mds.decode({1: [1.0, 2.0], 2: [1.0, 4.0]})
    assert approx(decoded[0][0], 1.0) and approx(decoded[1][1], 1.0)
    assert abs(decoded[0][1]) < 1e-9 and abs(decoded[1][0]) < 1e-9

    assert mds.worst_case_tolerance() == 1
    assert cm.AssignmentMatrix.uncoded(6, 3).worst_case_tolerance() == 0
    assert cm.AssignmentMatrix.mds(6, 3).worst_case_tolerance() == 3
    assert cm.AssignmentMatrix.replication(15, 8).worst_case_tolerance() == 0

    ldpc = cm.AssignmentMatrix.ldpc(6, 3, 3)
    truth = {i: [float(i + 1), float(-i)] for i in range(3)}
    responses = {j: ldpc.encode_response(j, truth) for j in (1, 2, 3, 4, 5)}
    peeled = ldpc.peel_decode(responses)
    for i in range(3):
        assert approx(peeled[i][0], truth[i][0]) and approx(peeled[i][1], truth[i][1])

    again = cm.AssignmentMatrix.from_json(mds.to_json())
    assert again.entries == mds.entries

    try:
        cm.AssignmentMatrix.mds(3, 2, [1.0, 1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("duplicate alphas accepted")


def test_env(cm):
    env = cm.Env("coop_nav", agents=3, landmarks=3, max_episode_len=10)
    assert env.obs_len == 14
    a = env.reset(42)
    b = env.reset(42)
    assert a.agent_pos == b.agent_pos and a.landmark_pos == b.landmark_pos
    forces = [[0.5, -0.5], [1.0, 0.0], [-1.0, 1.0]]
    s1, r1 = env.step(a, forces)
    s2, r2 = env.step(b, forces)
    assert s1.agent_pos == s2.agent_pos and r1 == r2
    assert len(r1) == 3 and r1[0] == r1[1] == r1[2]
    assert s1.step_count == 1
    obs = env.observe(s1, 0)
    assert len(obs) == 14 and all(math.isfinite(x) for x in obs)

    pp = cm.Env("predator_prey", agents=4, adversaries=2)
    assert len(pp.reset(7).obstacle_pos) == 2


def test_experiment(cm):
    out = Path(tempfile.mkdtemp(prefix="codedmarl_exp_"))
    config = {
        "env": {"kind": "coop_nav", "agents": 2, "adversaries": 0, "landmarks": 2},
        "learners": 4,
        "schemes": [{"scheme": "mds"}, {"scheme": "uncoded"}],
        "stragglers": [{"k": 1, "t_s": 5.0}],
        "hyper": {"batch_size": 8, "hidden": [8], "buffer_capacity": 500},
        "max_iteration": 3,
        "episodes_per_iteration": 2,
        "episode_length": 5,
        "reward_window": 2,
        "seeds": {"init": 1, "env": 2, "batch": 3, "straggler": 4},
        "transport": "sim",
    }
    report = cm.run_experiment(json.dumps(config), str(out))
    assert len(report["cells"]) == 2
    mds_cell = next(c for c in report["cells"] if c["scheme"] == "mds")
    uncoded_cell = next(c for c in report["cells"] if c["scheme"] == "uncoded")
    # One straggler, t_s = 5: the MDS round shrugs it off, uncoded waits.
    assert mds_cell["mean_round_time"] < uncoded_cell["mean_round_time"]

    csv = mds_cell["csv"]
    lines = Path(csv).read_text().strip().splitlines()
    assert lines[0] == "iteration,mean_reward,round_time,decode_ok,stragglers,theta_linf"
    assert len(lines) == 4

    cmp = cm.compare_csv(csv, csv, tol=0.0, window=2)
    assert cmp["within_tolerance"] and cmp["max_reward_delta"] == 0.0

    meta = json.loads(Path(report["sidecar"]).read_text())
    assert meta["config_hash"] == report["config_hash"]
    assert meta["cells"][0]["assignment_matrix"]["n"] == 4
    shutil.rmtree(out, ignore_errors=True)


def main():
    cm = import_codedmarl()
    test_coding(cm)
    print("coding surface: ok")
    test_env(cm)
    print("environment surface: ok")
    test_experiment(cm)
    print("experiment surface: ok")
    print("smoke test passed")


if __name__ == "__main__":
    main()
