"""Smoke test for the emo_rs extension module.

Build and install first, e.g. `maturin develop --release -m crates/python/Cargo.toml`
or `pip install` of a wheel from `maturin build`.
"""

import emo_rs


def main():
    report = emo_rs.count("emo-5m", 224)
    params = report["totals"]["params"]
    macs = report["totals"]["macs"]
    assert abs(params / 5.1e6 - 1) < 0.05, params
    assert abs(macs / 903e6 - 1) < 0.10, macs
    print(f"emo-5m: {params} params, {macs} MACs")

    f = emo_rs.formula("mhsa", channels=8, map=4, window=4)
    assert (f["params"], f["flops"]) == (288, 17152), f

    eq = emo_rs.equivalence(channels=8, heads=4, groups=4, expansion_ratio=2.0, seed=7)
    assert eq["holds"] and eq["max_abs_diff"] < 1e-10, eq
    neq = emo_rs.equivalence(channels=8, heads=4, groups=1, seed=7)
    assert neq["max_abs_diff"] > 1e-6, neq

    assert emo_rs.mpl(8, kernel=3, window=None, attn=False)["empirical"] == 7
    assert emo_rs.mpl(8, kernel=3, window=2, conv=False)["empirical"] is None

    mask = emo_rs.influence(9, 2, source=(4, 4), attn=False)
    assert sum(map(sum, mask)) == 25
    assert mask == emo_rs.influence(9, 2, source=(4, 4), attn=False, mode="vjp", seed=3)

    model = emo_rs.Model("emo-1m", seed=0, num_classes=10)
    side = 64
    zeros = [0.0] * (2 * 3 * side * side)
    logits = model.forward(zeros, (2, 3, side, side))
    assert len(logits) == 2 and len(logits[0]) == 10
    assert all(v == logits[0][0] for row in logits for v in row)

    noisy = emo_rs.Model("emo-1m", seed=1, init="generic", num_classes=10)
    other = emo_rs.Model("emo-1m", seed=2, init="generic", num_classes=10)
    other.load_weights(noisy.save_weights())
    x = [((i * 7919) % 101) / 50.0 - 1.0 for i in range(3 * side * side)]
    assert noisy.forward(x, (1, 3, side, side)) == other.forward(x, (1, 3, side, side))

    try:
        emo_rs.count("emo-9m")
    except ValueError as e:
        print(f"rejected bad preset: {e}")
    else:
        raise AssertionError("bad preset accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
