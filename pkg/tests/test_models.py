import numpy as np
import pytest
from numpy.testing import assert_array_equal

from mtresp.models import CONFS, TOY, ConfSpec, Widths, build_conf, get_conf, model_from_spec
from mtresp.nn import grad_check, param_count


def conv_units(cin, cout, k):
    return cin * cout * k + cout


def incres_units(c, k=15):
    return conv_units(c, c // 2, 1) + conv_units(c, c // 2, k) + 2 * c


def block_units(cin, cout, k):
    return conv_units(cin, cout, k) + 2 * cout + incres_units(cout)


def closed_form(conf_id):
    """Independent tally of trainable scalars from the block schedule."""
    spec = CONFS[conf_id]
    n_down = 10 if spec.input_kind == "raw" else 6
    total, cin = 0, 3
    for i in range(n_down):
        c = min(32 * 2 ** i, 1024)
        total += block_units(cin, c, 3)
        cin = c
    if spec.wave_head:
        d = cin
        for i in range(6):
            c = max(512 // 2 ** i, 16)
            total += block_units(d, c, 3)
            d = c
        total += conv_units(d, 1, 1)
    if spec.rr_head:
        total += block_units(cin, 128, 4) + 128 + 1
    return total


@pytest.fixture(scope="module")
def conf_e():
    return build_conf("E", seed=0)


def test_conf_membership():
    assert (CONFS["A"].input_kind, CONFS["A"].wave_head, CONFS["A"].rr_head) == ("raw", False, True)
    assert (CONFS["B"].input_kind, CONFS["B"].wave_head, CONFS["B"].rr_head) == ("raw", True, True)
    assert (CONFS["C"].input_kind, CONFS["C"].wave_head, CONFS["C"].rr_head) == ("resp", True, False)
    assert (CONFS["D"].input_kind, CONFS["D"].wave_head, CONFS["D"].rr_head) == ("resp", False, True)
    assert (CONFS["E"].input_kind, CONFS["E"].wave_head, CONFS["E"].rr_head) == ("resp", True, True)


def test_inconsistent_spec():
    with pytest.raises(ValueError):
        ConfSpec("X", "resp", False, False)
    with pytest.raises(ValueError):
        get_conf("Z")


def test_bottleneck_and_outputs(conf_e):
    x = np.random.default_rng(0).normal(size=(4, 3, 128))
    assert conf_e.encode(x).shape == (4, 1024, 2)
    wave, rr = conf_e.forward(x)
    assert wave.shape == (4, 1, 128) and rr.shape == (4, 1)


@pytest.mark.parametrize("cid, wave_shape, has_rr", [("C", (2, 1, 128), False), ("D", None, True)])
def test_head_membership(cid, wave_shape, has_rr):
    m = build_conf(cid, seed=1)
    wave, rr = m.forward(np.zeros((2, 3, 128)))
    assert (wave is None) == (wave_shape is None)
    if wave is not None:
        assert wave.shape == wave_shape
    assert (rr is not None) == has_rr


def test_raw_config_shapes():
    m = build_conf("B", seed=0, widths=TOY)
    assert len(m.encoder.layers) == 10
    wave, rr = m.forward(np.random.default_rng(1).normal(size=(3, 3, 2048)))
    assert wave.shape == (3, 1, 128) and rr.shape == (3, 1)
    a = build_conf("A", seed=0, widths=TOY)
    w, r = a.forward(np.zeros((2, 3, 2048)))
    assert w is None and r.shape == (2, 1)


def test_wrong_input_shape(conf_e):
    with pytest.raises(ValueError):
        conf_e.forward(np.zeros((2, 3, 2048)))


def test_deterministic_forward(conf_e):
    x = np.random.default_rng(2).normal(size=(2, 3, 128))
    a = conf_e.forward(x)
    b = build_conf("E", seed=0).forward(x)
    assert_array_equal(a[0], b[0])
    assert_array_equal(a[1], b[1])


@pytest.mark.parametrize("cid", list("CDE"))
def test_param_count_closed_form(cid):
    assert param_count(build_conf(cid, seed=0)) == closed_form(cid)


def test_param_count_raw_closed_form():
    assert param_count(build_conf("A", seed=3)) == closed_form("A")


def test_param_count_seed_independent():
    assert param_count(build_conf("D", seed=0)) == param_count(build_conf("D", seed=99))


def test_conf_e_band(conf_e):
    assert 15e6 <= param_count(conf_e) <= 35e6


def test_head_independence(conf_e):
    m = build_conf("E", seed=4)
    x = np.random.default_rng(3).normal(size=(3, 3, 128))
    w0, r0 = m.forward(x, training=False)
    for p in m.decoder.params():
        p.value[...] = 0
    w1, r1 = m.forward(x, training=False)
    assert_array_equal(r1, r0)
    assert not np.array_equal(w1, w0)
    for p in m.head.params():
        p.value[...] = 0
    w2, r2 = m.forward(x, training=False)
    assert_array_equal(w2, w1)
    assert not np.array_equal(r2, r1)


def test_spec_roundtrip():
    m = build_conf("E", seed=5, widths=TOY)
    r = model_from_spec(m.spec())
    assert r.conf == m.conf and r.widths == m.widths
    for (_, a), (_, b) in zip(m.named_params(), r.named_params()):
        assert_array_equal(a.value, b.value)


def test_toy_composite_gradient():
    m = build_conf("E", seed=0, widths=TOY)
    assert grad_check(m.joint(), (4, 3, 128), seed=1, max_entries=64) < 1e-4


def test_widths_default_schedule():
    w = Widths()
    assert (w.enc_base, w.enc_max, w.dec_start, w.dec_min, w.head_start, w.incres_kernel) == (32, 1024, 512, 16, 128, 15)
