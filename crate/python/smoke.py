"""Smoke test for the Python bindings.

Build and install the module first, e.g.

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml --features extension-module

or, without maturin,

    cargo build --release -p rolecluster-py --features extension-module
    cp target/release/librolecluster_py.so python/rolecluster_py.so

then run `python python/smoke.py`.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import rolecluster_py as rc  # noqa: E402

SMALL = {
    "epochs": 3,
    "seed": 3,
    "learning_rate": 0.005,
    "model": {
        "embedding_dim": 16,
        "news_hidden": 8,
        "comment_hidden": 8,
        "projection_dim": 8,
        "classifier_hidden": 16,
    },
}


def close(a, b, tol=1e-6):
    return abs(a - b) <= tol


def check_primitives():
    s, q = rc.soft_assignment([[1.0, 0.0], [0.0, 2.0]], [[1.0, 0.0], [0.0, 1.0]], 1.0)
    assert close(s[0][0], 1.0) and close(s[0][1], 0.0)
    assert all(close(sum(row), 1.0) for row in q)
    assert close(q[0][0], 1 / (1 + math.exp(-1)))
    assert close(rc.inter_cluster_loss([[1.0, 0.0], [-1.0, 0.0]]), -1.0)
    assert close(rc.intra_cluster_loss([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]], 1000.0), -1.0)
    m = rc.metrics([[0.2, 0.8], [0.9, 0.1], [0.4, 0.6], [0.7, 0.3]], [1, 0, 0, 1])
    assert close(m["accuracy"], 0.5) and close(m["precision"], 0.5)
    assert rc.tokenize("Hello, World!") == ["hello", "world"]
    assert rc.sentiment("this is a terrible awful hoax") == -1.0
    assert rc.synthetic_corpus(4, 1).count("\n") == 5
    worst = max(err for _, err in rc.grad_check(0))
    assert worst <= rc.GRAD_TOLERANCE, worst


def check_training():
    t = rc.Trainer(SMALL)
    assert t.epoch == 0
    rec = t.train_epoch()
    assert rec["epoch"] == 1 and rec["step_loss"] > 0
    t.fit()
    history = t.history()
    assert [h["epoch"] for h in history] == [0, 1, 2, 3]
    ev = t.evaluate("test", best=True)
    assert len(ev["probs"]) == len(ev["labels"]) == len(ev["ids"])
    report = t.cluster_report("train")
    assert len(report["counts"]) == 3 and report["classes"] == ["real", "fake"]

    with tempfile.TemporaryDirectory() as d:
        best = os.path.join(d, "best.ckpt")
        t.save_best(best)
        model = rc.Model.load(best)
        again = model.evaluate("test")
        assert again["metrics"] == ev["metrics"]
        rows = model.assignments("test")
        assert all(close(sum(r["q"]), 1.0, 1e-5) for r in rows)

        # Resuming from a checkpoint continues bit-identically.
        a = rc.Trainer(SMALL)
        a.train_epoch()
        last = os.path.join(d, "last.ckpt")
        a.save_checkpoint(last)
        a.fit()
        b = rc.Trainer.resume(last)
        b.fit()
        assert a.history() == b.history()

    try:
        rc.Trainer({"batch_size": 0})
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config accepted")
    try:
        rc.Trainer(SMALL, corpus="/no/such/file.jsonl")
    except FileNotFoundError:
        pass
    else:
        raise AssertionError("missing corpus accepted")
    return ev["metrics"]


if __name__ == "__main__":
    check_primitives()
    metrics = check_training()
    print("python smoke test passed; test metrics:", metrics)
