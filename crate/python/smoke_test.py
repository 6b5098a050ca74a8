"""Smoke test for the panlab_py extension: simulate, fuse, score, train briefly."""

import math
import os
import tempfile

import panlab_py as pl


def main():
    hr, t = pl.simulate(seed=3, size=64, bands=4)
    assert hr.shape == (64, 64, 4)
    assert t.lrms.shape == (16, 16, 4)
    assert t.pan.shape == (64, 64, 1)
    assert t.pseudo_hrms is not None

    exp = pl.exp_baseline(t.lrms)
    full = pl.metrics(exp, t.lrms, t.pan)
    assert set(full) == {"d_lambda", "d_s", "qnr"}
    assert abs(full["qnr"] - (1 - full["d_lambda"]) * (1 - full["d_s"])) == 0.0

    lr, pan = pl.reduce(t)
    reduced = pl.metrics(pl.exp_baseline(lr), lr, pan, reference=t.lrms)
    assert len(reduced) == 7 and all(math.isfinite(v) for v in reduced.values())

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "lrms.panr")
        t.lrms.write(path)
        assert pl.Raster.read(path).to_list() == t.lrms.to_list()

    triplets = [pl.simulate(seed=s, size=64, bands=4)[1] for s in range(4)]
    enc, s1 = pl.align(triplets, pl.Encoder(bands=4, seed=1), iterations=3, batch_size=2)
    assert len(s1) == 3 and len(enc.embed(t.pan, "pan")) > 0
    pseudo, _ = pl.pretrain(triplets, pl.Backbone(4, seed=2), iterations=2, batch_size=2)
    net, s2 = pl.train(triplets, pl.Backbone(4, seed=2), encoder=enc, pseudo=pseudo, iterations=2, batch_size=2)
    assert len(s2) == 2 and all(math.isfinite(v) for v in s2)
    assert net.fuse(t.lrms, t.pan).shape == (64, 64, 4)

    try:
        pl.train(triplets, pl.Backbone(4), iterations=1, batch_size=2)
    except pl.PanlabError as e:
        assert "dependency" in str(e)
    else:
        raise AssertionError("missing encoder was accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
