"""Smoke test for the quorumlab extension module.

Build first:
    cargo build -p quorumlab-py --release --features extension-module
then run:
    python3 crates/python/python/smoke_test.py
"""

import importlib.util
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[3]
SCENARIOS = ROOT / "crates" / "core" / "scenarios"


def load_module():
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libquorumlab_py.so"
        if lib.exists():
            break
    else:
        sys.exit("build the extension first: cargo build -p quorumlab-py --release --features extension-module")
    dest = pathlib.Path(tempfile.mkdtemp()) / "quorumlab.so"
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("quorumlab", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    ql = load_module()

    assert "paxos" in ql.protocols()
    assert "agreement" in ql.explain("paxos")
    assert ql.quorum_size(4) == 3

    sc = ql.Scenario.load(SCENARIOS / "paxos.toml")
    report = sc.run()
    assert report["passed"], report
    assert all("value=A" in d for d in report["decisions"])
    assert sc.run() == report
    assert sc.trace() == sc.trace()

    with tempfile.TemporaryDirectory() as d:
        report, path = sc.run_to_file(d)
        assert pathlib.Path(path).name == "paxos-7.trace"
        try:
            sc.run_to_file(d)
        except ValueError:
            pass
        else:
            raise AssertionError("existing trace was overwritten without force")

    sweep = ql.Scenario.load(SCENARIOS / "paxos-dueling.toml").sweep(0, 20)
    assert sweep["pass_rate"] == 1.0, sweep

    try:
        ql.Scenario.parse(open(SCENARIOS / "paxos.toml").read().replace("[params]\n", "[params]\nquoram = 2\n"))
    except ValueError as e:
        assert "quoram" in str(e)
    else:
        raise AssertionError("unknown field accepted")

    a, b = ql.LwwMap(), ql.LwwMap()
    a.put("k", "old", 5, 0)
    b.put("k", "new", 7, 1)
    assert a.merge(b).get("k") == "new"
    assert a.merge(b) == b.merge(a)

    keys, comparisons = ql.merkle_diff({"x": b"1", "y": b"2"}, {"x": b"1", "y": b"3", "z": b"4"})
    assert keys == {"y", "z"} and comparisons > 0
    assert ql.merkle_audit({"x": b"1", "y": b"2", "z": b"3"}, "y")[0]
    assert len(ql.merkle_root({"x": b"1"})) == 32

    assert ql.vc_order([1, 0, 0], [1, 1, 0]) == "Before"
    assert ql.vc_order([1, 0], [0, 1]) == "Concurrent"

    explored = ql.explore_paxos(n=3, depth=6)
    assert explored["violation"] is None and explored["distinct_states"] > 0

    print("smoke test passed")


if __name__ == "__main__":
    main()
