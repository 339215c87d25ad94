"""Quick verification suite run by ``fastpci selfcheck``.

Each check returns ``(ok, detail)``; the runner prints one line per check.
"""
from __future__ import annotations

import itertools
import tempfile
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .kernels import fps, sq_distances, warp_points
from .metrics import chamfer, emd_approx, emd_exact


def grad_tolerance():
    return 1e-5 if ad.get_default_dtype() == np.float64 else 1e-2


def check_gradients():
    rng = np.random.default_rng(0)
    tol = grad_tolerance()
    worst = 0.0
    dt = ad.get_default_dtype()

    def T(a, grad=False):
        return ad.Tensor(a, requires_grad=grad, dtype=dt)

    x = T(rng.standard_normal((5, 4)), grad=True)
    w = T(rng.standard_normal((4, 3)))
    r = T(rng.standard_normal((5, 4)))
    cases = [
        lambda x: ad.reduce_sum(ad.square(ad.matmul(x, w))),
        lambda x: ad.reduce_sum(ad.mul(ad.softmax(x, axis=-1), r)),
        lambda x: ad.reduce_sum(ad.mul(ad.leaky_relu(x, 0.1), r)),
        lambda x: ad.reduce_sum(ad.mul(ad.layer_norm(x, T(np.ones(4)), T(np.zeros(4))), r)),
    ]
    eps = 1e-6 if dt == np.float64 else 1e-2
    for f in cases:
        worst = max(worst, ad.grad_check(f, x, eps=eps))
    return worst <= tol, f"max relative error {worst:.2e} (tol {tol:.0e})"


def check_emd():
    rng = np.random.default_rng(1)
    worst = 0.0
    for n in (3, 5, 6):
        X, Y = rng.random((n, 3)), rng.random((n, 3))
        cost = np.sqrt(sq_distances(X, Y))
        brute = min(cost[np.arange(n), list(p)].mean() for p in itertools.permutations(range(n)))
        if abs(emd_exact(X, Y).total_cost - brute) > 1e-12:
            return False, f"exact EMD disagrees with enumeration at N={n}"
    for n in (16, 48):
        X, Y = rng.random((n, 3)), rng.random((n, 3))
        exact = emd_exact(X, Y).total_cost
        worst = max(worst, abs(emd_approx(X, Y) - exact) / exact)
    return worst <= 0.01, f"auction relative error {worst:.2e}"


def check_identities():
    rng = np.random.default_rng(2)
    X = rng.random((64, 3))
    if warp_points(X, np.zeros_like(X), 0.3).tobytes() != X.tobytes():
        return False, "zero flow warp is not the identity"
    if chamfer(X, X) != 0.0:
        return False, "CD(X, X) != 0"
    if chamfer(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]])) != 2.0:
        return False, "singleton CD != 2"
    return True, "warp and chamfer identities hold"


def check_fps():
    rng = np.random.default_rng(3)
    for _ in range(10):
        X = rng.random((int(rng.integers(2, 64)), 3))
        m = int(rng.integers(1, len(X) + 1))
        sel = [0]
        mind = sq_distances(X, X[:1])[:, 0]
        for _ in range(1, m):
            d = mind.copy()
            d[sel] = -1
            j = int(np.argmax(d))
            sel.append(j)
            mind = np.minimum(mind, sq_distances(X, X[j:j + 1])[:, 0])
        if list(fps(X, m)) != sel:
            return False, "fps differs from greedy enumeration"
    return True, "fps matches greedy enumeration"


def check_checkpoint(corrupt=False):
    rng = np.random.default_rng(4)
    state = {"a.weight": rng.standard_normal((3, 4)).astype(np.float32), "b": np.ones(2, np.float32)}
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "c.fpci"
        checkpoint.save(path, state)
        if corrupt:
            blob = bytearray(path.read_bytes())
            blob[20] ^= 0x01
            path.write_bytes(bytes(blob))
        try:
            back = checkpoint.load(path)
        except ValueError as exc:
            return False, str(exc)
    same = all(back[k].tobytes() == v.tobytes() for k, v in state.items())
    return same, "bitwise round-trip" if same else "round-trip changed values"


CHECKS = {
    "gradients": check_gradients,
    "emd_oracle": check_emd,
    "warp_chamfer_identities": check_identities,
    "fps_oracle": check_fps,
    "checkpoint_roundtrip": check_checkpoint,
}


def run(out=print, corrupt_checkpoint=False):
    """Run every check; returns True when all pass."""
    ok_all = True
    for name, fn in CHECKS.items():
        if name == "checkpoint_roundtrip":
            ok, detail = fn(corrupt_checkpoint)
        else:
            ok, detail = fn()
        ok_all &= ok
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok_all
