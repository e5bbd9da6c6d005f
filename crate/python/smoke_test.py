"""Smoke test for the rflab extension module.

Build with `maturin develop -m crates/python/Cargo.toml`, or copy
target/release/librflab_py.so to rflab.so on PYTHONPATH, then run this file.
"""

import json
import math

import rflab


def main():
    field = rflab.Field.iid(1)
    assert field.nu == 1
    assert len(field.sample(8, seed=3)) == 9  # sites 0..=8
    assert field.sample(8, 3) == field.sample(8, 3)

    ma = rflab.Field.gaussian_ma(1, [([0], 1.0), ([1], 1.0)])
    assert ma.autocovariance([1]) == 1.0
    assert ma.autocovariance([2]) == 0.0

    f = rflab.Observable.product(2)
    assert f([2.0, 3.0]) == 6.0

    # F = x0 x1 on an IID N(0,1) field, k = 2: F_1 = 0 and D = diag(0, 1/2).
    model = json.loads(rflab.d_matrix(field, f, 2))
    d = model["D"]
    assert abs(d[0][0]) < 1e-12, d
    assert math.isclose(d[1][1], 0.5, rel_tol=1e-9), d
    assert abs(d[0][1]) < 1e-12
    assert model["psd"]

    exact, predicted = rflab.diophantine_count(2, 3, 0, 60)
    assert exact == 11 and math.isclose(predicted, 10.0)

    q = rflab.QFamily(1, 1, [[2]])
    assert q.ell == 2
    assert q.apply(2, [5]) == [25]
    assert json.loads(q.check_conditions())["pass"]

    s = rflab.Schedule(1000)
    assert s.verify()
    kind, _ = s.classify(s.a(1))
    assert kind == "block"

    x = rflab.xi(field, rflab.Observable.linear([1.0]), rflab.QFamily(1, 1), 16, 7, [1.0])
    assert math.isfinite(x)

    report = json.loads(rflab.simulate(rflab.TEMPLATE, seed=1, replicas=200))
    assert {v["check"] for v in report["verdicts"]} >= {"cov", "gauss"}

    g = json.loads(rflab.gauss_check([math.sin(i) for i in range(1000)]))
    assert g["n"] == 1000

    print("rflab smoke test OK")


if __name__ == "__main__":
    main()
