"""Smoke test for the kalmanopt Python bindings.

Build and install first:

    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
    python python/smoke_test.py
"""

import json
import math
import pathlib
import tempfile

import numpy as np

import kalmanopt as ko


def check(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    if not ok:
        raise SystemExit(1)


def one_d_trace():
    opt = ko.KoalaPlusPlus(q=0.0, sigma0=1.0, r_mode="fixed", r=1.0)
    theta, deltas = 2.0, []
    for _ in range(3):
        d = opt.step(0.5 * theta * theta, [theta], 0.1)[0]
        deltas.append(d)
        theta += d
    want = [-0.08000000000000002, -0.040741204641738804, -0.027159963000190003]
    err = max(abs(a - b) for a, b in zip(deltas, want))
    check("1-D trace", err < 1e-12, f"max err {err:.1e}")


def min_norm_vs_numpy(rng):
    for n in (2, 5, 9):
        h, v = rng.standard_normal(n), rng.standard_normal(n)
        # h P = v over vec(P): row j is sum_i h_i P_ij
        a = np.kron(h, np.eye(n))
        p_np = np.linalg.lstsq(a, v, rcond=None)[0].reshape(n, n)
        p = np.array(ko.min_norm_p_vanilla(h.tolist(), v.tolist()))
        check(f"vanilla min-norm n={n}", np.abs(p - p_np).max() < 1e-10)
        ps = np.array(ko.min_norm_p_symmetric(h.tolist(), v.tolist()))
        eig = np.linalg.eigvalsh(ps)
        l1, l2 = ko.eig_closed_form(h.tolist(), v.tolist())
        check(f"eigenvalues n={n}", abs(eig[-1] - l1) < 1e-10 and abs(eig[0] - l2) < 1e-10)


def mlp_loss_vs_numpy():
    model = ko.Model.mlp([2, 4, 2], "tanh")
    theta = np.array(model.init_params(42))
    x = np.array([[0.5, -1.0], [1.5, 0.25], [-0.3, 0.8]])
    y = np.array([0, 1, 1])
    w1, b1 = theta[:8].reshape(4, 2), theta[8:12]
    w2, b2 = theta[12:20].reshape(2, 4), theta[20:22]
    logits = np.tanh(x @ w1.T + b1) @ w2.T + b2
    logz = np.log(np.exp(logits - logits.max(1, keepdims=True)).sum(1)) + logits.max(1)
    want = float(np.mean(logz - logits[np.arange(3), y]))
    loss, grad = model.loss_and_grad(theta.tolist(), x.tolist(), y.astype(float).tolist())
    check("mlp 2-4-2 loss vs numpy", abs(loss - want) < 1e-12, f"{loss:.15f}")
    check("gradient length", len(grad) == model.param_count == 22)


def training_run():
    with tempfile.TemporaryDirectory() as tmp:
        out = pathlib.Path(tmp) / "run"
        cfg = f'[run]\nepochs = 5\nout = "{out.as_posix()}"\n[data]\nn_samples = 200\n'
        res = ko.train(cfg)
        manifest = json.loads((out / "manifest.json").read_text())
        rows = (out / "metrics.csv").read_text().splitlines()
        check("train writes 1 + epochs rows", len(rows) == 6, res["out"])
        check("manifest records optimizer", manifest["config"]["optimizer"] == "koala_pp")
        check("finite final loss", math.isfinite(res["train_loss"]), f"{res['train_loss']:.4f}")


def main():
    rng = np.random.default_rng(0)
    one_d_trace()
    check("innovation S", abs(ko.innovation_s([1.0, 0.0], [2.0, 3.0], 0.1, 0.25) - 2.35) < 1e-15)
    delta, p = ko.koala_v_step(1.0, 0.0, 1.0, 1.0, [2.0], 0.0)
    check("scalar-covariance step", abs(delta[0] + 0.4) < 1e-15 and abs(p - 0.2) < 1e-15)
    min_norm_vs_numpy(rng)
    mlp_loss_vs_numpy()
    x, y = ko.make_two_moons(200, 0.1, 42)
    check("two moons shape", len(x) == 200 and set(y) == {0.0, 1.0})
    training_run()
    failed = [r for r in ko.verify() if not r[1]]
    check("verify battery", not failed, str(failed))


if __name__ == "__main__":
    main()
