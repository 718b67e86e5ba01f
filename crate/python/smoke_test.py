"""Smoke test for the rnnlab extension module.

Build first:  cd crates/python && maturin develop --release
Run:          python python/smoke_test.py
"""

import math
import os
import tempfile

import rnnlab


def main():
    err = rnnlab.gradcheck(hidden=5, steps=7, seed=1)
    assert err < 1e-5, err
    for variant in ("mn", "dos", "ff"):
        assert rnnlab.gradcheck(hidden=3, steps=5, seed=2, variant=variant) < 1e-5

    surf = rnnlab.demo_surface(steps=50, target=0.7)
    assert len(surf["w"]) * len(surf["b"]) == 10_000
    # the 100-point grid skips 0; a 3-point grid has the origin at its centre
    tiny = rnnlab.demo_surface(steps=5, resolution=3, w_range=(-1.0, 1.0), b_range=(-1.0, 1.0))
    assert abs(tiny["loss"][1][1] - 0.04) < 1e-12

    m = rnnlab.sparse_gaussian(50, 50, 5, seed=3)
    assert all(sum(v != 0.0 for v in row) == 5 for row in m)
    assert rnnlab.spectral_radius(m) > 0

    mean, var = rnnlab.noisy_moments([1.0, 2.0], [3.0, -1.0], 0.5)
    assert mean == 1.0 and abs(var - 0.25) < 1e-15

    data = rnnlab.Dataset.synthetic(seed=0, n_sequences=30, steps=24, motif_gap=1)
    assert data.manifest()["notes"] == rnnlab.NOTES
    cfg = rnnlab.desk_config(hidden=16, seed=4)
    cfg["max_epochs"] = 5
    cfg["batch_size"] = 6
    trace, params = rnnlab.train(cfg, data, chunk_len=12)
    assert trace["records"][-1]["valid_ce"] < trace["records"][0]["valid_ce"]
    assert abs(params.evaluate(data, "test") - trace["test_ce"]) < 1e-12
    assert params.spectral_radius() >= 0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "data.json")
        data.save(path)
        again = rnnlab.Dataset.load(path)
        assert again.split("train") == data.split("train")

    fresh = rnnlab.Params.init(hidden=20, rho_target=1.0, sparsify_k=5, seed=1)
    assert math.isclose(fresh.spectral_radius(), 1.0, rel_tol=1e-6)
    assert rnnlab.Params.from_json(fresh.to_json()).to_json() == fresh.to_json()

    table = rnnlab.sweep("drop_p", [0.0, 0.2], cfg, data, seeds=1, chunk_len=12)
    assert len(table["rows"]) == 2
    report = rnnlab.random_search("mn", cfg, 2, data, chunk_len=12, jobs=1)
    assert report["n_trials"] == 2

    try:
        rnnlab.Dataset.from_json('{"train": [[[200]]]}')
    except ValueError as e:
        assert "note" in str(e)
    else:
        raise AssertionError("out-of-range note accepted")

    print("python smoke test ok (gradcheck %.2e, test CE %.4f)" % (err, trace["test_ce"]))


if __name__ == "__main__":
    main()
