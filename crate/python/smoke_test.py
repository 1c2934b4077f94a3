"""End-to-end check of the latcompass extension module.

Build and install the module first (``maturin develop -m crates/python/Cargo.toml``
or copy ``target/release/liblatcompass.so`` to ``latcompass.so`` on
``PYTHONPATH``), then run ``python python/smoke_test.py``.
"""

import json
import math
import sys
import tempfile

import latcompass

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def check(condition, message):
    if not condition:
        sys.exit(f"FAIL: {message}")
    print(f"ok    {message}")


def sorted_session(engine, space, seed):
    session = engine.create_session(category=0, space=space)
    engine.fill_pool(session, 40, seed)
    pool = sorted(session.pool, key=lambda s: s["z"][0])
    for image in pool[:7]:
        session.assign(image["image_id"], "left")
    for image in pool[-7:]:
        session.assign(image["image_id"], "right")
    return session


def main():
    generator = latcompass.Generator.builtin()
    info = generator.info()
    check(info["latent_dim"] == 8, "builtin generator reports its latent size")

    sample = generator.sample(3, 0)
    check(sample["png"].startswith(PNG_MAGIC), "samples come back as PNG bytes")
    check(generator.render(sample["z"], 0) == sample["png"], "rendering a sample's latent reproduces it")

    engine = latcompass.Engine(generator)
    session = sorted_session(engine, "z", seed=1)
    check(session.counts() == (7, 7), "assignments are counted per side")

    compass = engine.calibrate(session)
    norm = math.sqrt(sum(v * v for v in compass.direction))
    check(abs(norm - 1.0) < 1e-9, "the calibrated direction has unit norm")
    check(abs(compass.direction[0]) > 0.8, "sorting on z1 recovers the first axis")

    trajectory = engine.navigate(compass, generator.sample(11, 2)["z"], 2)
    indices = [step["step_index"] for step in trajectory.steps]
    check(indices == [-3, -2, -1, 0, 1, 2, 3], "navigation renders three steps each way")
    step = engine.extend(compass, trajectory, "forward")
    check(step["step_index"] == 4 and len(trajectory) == 8, "a trajectory grows at its forward end")

    detail = engine.calibrate(sorted_session(engine, "layer:1", seed=2))
    check(detail.space == "layer:1", "detail-level calibration lives in activation space")

    restored = latcompass.Compass.from_json(compass.to_json())
    check(restored.direction == compass.direction, "compasses round-trip through JSON")

    with tempfile.TemporaryDirectory() as tmp:
        store = latcompass.DirectionStore(tmp)
        record = store.save(compass, "brighter", engine.fingerprint())
        check(record["moderation_status"] == "pending", "saved directions start pending")
        check(store.list(status="approved") == [], "pending directions are not listed as approved")
        store.set_moderation_status(record["id"], "approved")
        check(len(store.list(status="approved")) == 1, "approved directions are listed")
        loaded, _, mismatch = store.load(record["id"], engine.fingerprint())
        check(loaded.direction == compass.direction and not mismatch, "a loaded direction matches what was saved")
        try:
            store.load("missing", engine.fingerprint())
            check(False, "loading an unknown id fails")
        except latcompass.LatcompassError as e:
            check(e.code == "UnknownRecord", "errors carry their error code")

    points = [[-2.0, 0.1], [-1.5, -0.3], [1.7, 0.2], [2.2, -0.1]]
    labels = [-1, -1, 1, 1]
    w, b = latcompass.fit_svm(points, labels, c=1.0)
    w_ref, b_ref = latcompass.oracle_fit(points, labels, c=1.0)
    gap = max(abs(x - y) for x, y in zip(w + [b], w_ref + [b_ref]))
    check(gap < 1e-4, "the SVM solver agrees with the reference solver")

    report = latcompass.recovery_experiment(engine, 1, seeds=list(range(20)), space="scene")
    check(report["median_cosine"] >= 0.9, "median recovery of the brightness axis over 20 seeds")
    print(json.dumps({k: report[k] for k in ("attribute", "space", "median_cosine", "monotonic_fraction")}))
    print("smoke test passed")


if __name__ == "__main__":
    main()
