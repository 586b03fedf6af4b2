"""Smoke test for the convbeam_py extension module.

Build and install first, e.g.

    cd crates/python && maturin build --release -o dist && pip install dist/*.whl

then run ``python python/smoke_test.py``.
"""

import math
import random

import convbeam_py as cb


def matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def check_linear_algebra():
    rng = random.Random(0)
    b = [[complex(rng.gauss(0, 1), rng.gauss(0, 1)) for _ in range(3)] for _ in range(3)]
    phi = [[sum(b[i][k] * b[j][k].conjugate() for k in range(3)) for j in range(3)] for i in range(3)]
    loaded = cb.diag_load(phi, 1e-6)
    prod = matmul(loaded, cb.cinv(loaded))
    err = max(abs(prod[i][j] - (1 if i == j else 0)) for i in range(3) for j in range(3))
    assert err < 1e-9, err

    x = cb.csolve(loaded, [[1], [2j], [0]])
    back = matmul(loaded, x)
    assert abs(back[1][0] - 2j) < 1e-9

    v = cb.power_iteration([[4, 0], [0, 1]], iters=50)
    assert abs(abs(v[0]) - 1) < 1e-12

    try:
        cb.cinv([[0, 0], [0, 0]])
    except cb.ConvbeamError:
        pass
    else:
        raise AssertionError("singular matrix accepted")


def check_stft():
    rng = random.Random(1)
    x = [[rng.uniform(-1, 1) for _ in range(8000)]]
    spec = cb.stft(x)
    assert spec.bins == 257 and spec.channels == 1
    y = cb.istft(spec)
    err = max(abs(a - b) for a, b in zip(x[0][400:-400], y[0][400:-400]))
    assert err < 1e-9, err


def check_metrics():
    rng = random.Random(2)
    a = [rng.gauss(0, 1) for _ in range(4000)]
    b = [rng.gauss(0, 1) for _ in range(4000)]
    assert cb.si_sdr([2 * s for s in a], a) >= 99.0
    assert cb.sdr(b, a, taps=16) < 0.0
    perm, scores = cb.pit_assign([b, a], [a, b])
    assert perm == [1, 0], perm
    assert all(math.isfinite(s) for s in scores)


def check_pipeline():
    scene = cb.simulate(speakers=2, channels=4, t60=0.3, noise_snr=20.0, duration=2.0, seed=5)
    assert scene.speakers == 2 and len(scene.mixture) == 4
    assert len(scene.steering(0)) == 257

    config = cb.EnhanceConfig()
    config.variant = "wmpdr"
    config.mask_type = "tf"
    assert cb.EnhanceConfig.from_toml(config.to_toml()).variant == "wmpdr"

    outputs = cb.enhance(scene, config)
    assert len(outputs) == 2
    assert all(math.isfinite(s) for out in outputs for s in out)
    report = cb.evaluate(outputs, scene)
    print("delta SI-SDR per speaker:", ["%.2f" % d for d in report["delta_si_sdr"]])
    assert all(d > 0 for d in report["delta_si_sdr"])


if __name__ == "__main__":
    check_linear_algebra()
    check_stft()
    check_metrics()
    check_pipeline()
    print("smoke test passed")
