#!/usr/bin/env python3
"""Smoke test for the hermes_py extension module.

Builds nothing itself: it expects `cargo build -p hermes-py` (or --release)
to have produced the cdylib, copies it next to a temp dir under the
importable name, and drives the bindings end to end.

Run from the repository root:

    cargo build -p hermes-py
    python3 python/smoke_test.py
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_module():
    candidates = [
        REPO / "target" / "release" / "libhermes_py.so",
        REPO / "target" / "debug" / "libhermes_py.so",
        REPO / "target" / "release" / "libhermes_py.dylib",
        REPO / "target" / "debug" / "libhermes_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("build the extension first: cargo build -p hermes-py")
    stage = Path(tempfile.mkdtemp(prefix="hermes-py-"))
    suffix = ".so" if built.suffix == ".so" else ".so"  # CPython loads .so on mac too
    shutil.copy2(built, stage / f"hermes_py{suffix}")
    sys.path.insert(0, str(stage))
    import hermes_py  # noqa: E402

    return hermes_py


SCENARIO = """
seed = 5
duration_ms = 60000

[link]
full_visibility = true

[strategy]
kind = "pubsub"

[nn]
coordinator = "root"
inference_count = 3
model_text = '''
layers 2 2 2 activation=identity
1 0 0.0 1.0 1.0
1 1 0.0 1.0 1.0
2 0 0.0 1.0 1.0
2 1 0.0 1.0 1.0
'''

[[node]]
id = "root"
mac = "02:00:00:00:00:01"
kind = "class-8266"
root = true

[[node]]
id = "w1"
mac = "02:00:00:00:00:02"
kind = "class-32"
start_at_ms = 1000
roles = ["hidden", "input:0"]
quota = 1

[[node]]
id = "w2"
mac = "02:00:00:00:00:03"
kind = "class-pi"
start_at_ms = 2000
roles = ["hidden", "input:1"]
quota = 1
"""


def main():
    hp = import_module()
    print(f"hermes_py {hp.__version__}")

    # Address derivation follows the documented rule.
    assert hp.derive_ap_ip("DE:AD:BE:EF:AB:CD") == "10.171.205.1"
    assert hp.derive_ap_ip("02:00:00:00:00:00") == "10.0.0.1"

    # Envelope round-trips through the wire format.
    env = hp.Envelope(4, 1, "10.0.1.1", "10.0.2.1", 7, bytes([1, 2, 3]))
    wire = env.encode()
    assert len(wire) == env.wire_len == 22 + 3
    back = hp.Envelope.decode(wire)
    assert back.src == "10.0.1.1" and back.seq == 7 and back.payload == bytes([1, 2, 3])
    assert back.category_name == "data"
    try:
        hp.Envelope.decode(wire[:10])
        raise AssertionError("truncated frame must not decode")
    except ValueError:
        pass

    # The model's reference forward pass.
    model = hp.Model.parse(
        "layers 2 2 1 activation=identity\n1 0 0.0 1.0 1.0\n1 1 0.0 1.0 1.0\n2 0 0.5 1.0 1.0\n"
    )
    assert model.layer_sizes == [2, 2, 1]
    out = model.forward([1.0, 2.0])
    assert out == [6.5], out
    rnd = hp.Model.random([2, 4, 2], "sigmoid", 42)
    again = hp.Model.random([2, 4, 2], "sigmoid", 42)
    assert rnd.render() == again.render(), "seeded models are reproducible"

    # Config validation reports problems with field paths.
    errors = hp.validate_config(SCENARIO)
    assert errors == [], errors
    broken = SCENARIO.replace("02:00:00:00:00:03", "02:00:00:00:00:01")
    errors = hp.validate_config(broken)
    assert any("mac" in e for e in errors), errors

    # A full scenario run: deterministic, inference matching the oracle.
    result = hp.run_scenario(SCENARIO)
    assert result.oracle_ok, result.report
    assert "ev=complete" in result.trace
    records = [json.loads(line) for line in result.records_jsonl.splitlines()]
    inference = [r for r in records if r["record"] == "inference"]
    assert len(inference) == 3 and all(r["verdict"] == "Match" for r in inference)

    rerun = hp.run_scenario(SCENARIO)
    assert rerun.trace == result.trace, "same seed, same trace"
    other = hp.run_scenario(SCENARIO, seed=99)
    assert other.trace != result.trace, "different seed, different trace"

    print("smoke test passed: envelope, model, validation, deterministic run")


if __name__ == "__main__":
    main()
