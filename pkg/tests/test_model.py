import numpy as np
import pytest

from subjadapt import diffcore as dc
from subjadapt import model as m
from subjadapt.errors import DimensionError, FormatError, LengthError
from subjadapt.gradcheck import fused_vs_composed

SMALL = m.ModelDims(d_in=6, t_len=5, d_seq=4, d_emb=4, n_classes=3)


def run(fn, params, *args, **kw):
    tape = dc.Tape()
    return fn(tape, params.bind(tape), *args, **kw)


def test_init_is_deterministic_with_zero_biases():
    a, b = m.init_params(SMALL, 7), m.init_params(SMALL, 7)
    for name in m.PARAM_NAMES:
        np.testing.assert_array_equal(a.named()[name], b.named()[name])
        if name.startswith("b_") or name.endswith("_b"):
            assert not a.named()[name].any()


def test_default_shapes():
    shapes = m.ModelDims().shapes()
    assert shapes["emb_W"] == (128, 128)
    assert shapes["cls_W"] == (40, 128)
    assert shapes["W_r"] == (128, 128)


def test_gru_zero_params_stay_at_zero(rng):
    p = m.ModelParams.from_named({n: np.zeros(s) for n, s in SMALL.shapes().items()}, SMALL)
    h = run(m.gru_forward, p, rng.normal(size=(6, 5)), SMALL)
    assert h.shape == (4,)
    assert not h.value.any()


def test_gru_default_dims_output_length(rng):
    dims = m.ModelDims()
    h = run(m.gru_forward, m.init_params(dims, 0), rng.normal(size=(128, 160)), dims)
    assert h.shape == (128,)


def test_gru_output_strictly_inside_unit_interval(rng):
    for seed in range(5):
        p = m.init_params(SMALL, seed)
        h = run(m.gru_forward, p, 10 * rng.normal(size=(8, 6, 5)), SMALL)
        assert (np.abs(h.value) < 1).all()


def test_gru_shape_error(rng):
    with pytest.raises(DimensionError, match="6 x 5"):
        run(m.gru_forward, m.init_params(SMALL, 0), rng.normal(size=(5, 6)), SMALL)


@pytest.mark.parametrize("seed", range(5))
def test_fused_gru_matches_composed_primitives(seed):
    assert fused_vs_composed(seed) <= 1e-12


def test_embed_identity_and_negative_slope():
    dims = m.ModelDims(d_in=2, t_len=1, d_seq=3, d_emb=3, n_classes=2)
    named = m.init_params(dims, 0).named()
    named["emb_W"] = np.eye(3)
    p = m.ModelParams.from_named(named, dims)
    tape = dc.Tape()
    w = m.embed(tape, p.bind(tape), tape.leaf([0.5, 1.0, 2.0]))
    np.testing.assert_array_equal(w.value, [0.5, 1.0, 2.0])
    w = m.embed(tape, p.bind(tape), tape.leaf([-1.0, 1.0, 1.0]))
    assert w.value[0] == pytest.approx(-0.2)


def test_classify_zero_weights_give_uniform_softmax(rng):
    named = m.init_params(SMALL, 0).named()
    named["cls_W"] = np.zeros_like(named["cls_W"])
    p = m.ModelParams.from_named(named, SMALL)
    tape = dc.Tape()
    logits = m.classify(tape, p.bind(tape), tape.leaf(rng.normal(size=4)))
    assert not logits.value.any()
    ce = dc.softmax_cross_entropy(tape, logits, 1)
    assert ce.item() == pytest.approx(np.log(3))


def test_batch_of_one_equals_single_path(rng):
    p = m.init_params(SMALL, 3)
    x = rng.normal(size=(6, 5))
    fwd = run(m.forward_batch, p, x[None], [0], [1], SMALL)
    tape = dc.Tape()
    bound = p.bind(tape)
    single = m.classify(tape, bound, m.embed(tape, bound, m.gru_forward(tape, bound, x, SMALL)))
    np.testing.assert_allclose(fwd.logits.value[0], single.value, rtol=0, atol=1e-14)


def test_forward_batch_is_permutation_equivariant(rng):
    p = m.init_params(SMALL, 4)
    X = rng.normal(size=(7, 6, 5))
    perm = rng.permutation(7)
    a = run(m.forward_batch, p, X, np.zeros(7), np.zeros(7), SMALL)
    b = run(m.forward_batch, p, X[perm], np.zeros(7), np.zeros(7), SMALL)
    for name in ("z_features", "w_features", "logits"):
        np.testing.assert_allclose(getattr(a, name).value[perm], getattr(b, name).value,
                                   rtol=0, atol=1e-14)


def test_forward_batch_reports_bad_row(rng):
    X = rng.normal(size=(3, 6, 5))
    X[2, 0, 0] = np.nan
    with pytest.raises(Exception, match="row 2"):
        run(m.forward_batch, m.init_params(SMALL, 0), X, [0, 0, 0], [0, 0, 0], SMALL)


def test_predict_logits_matches_tape_forward(rng):
    p = m.init_params(SMALL, 5)
    X = rng.normal(size=(9, 6, 5))
    fwd = run(m.forward_batch, p, X, np.zeros(9), np.zeros(9), SMALL)
    np.testing.assert_allclose(m.predict_logits(p, X, chunk=4), fwd.logits.value, atol=1e-13)


def test_argmax_invariant_to_logit_shift(rng):
    logits = rng.normal(size=(20, 6))
    assert (np.argmax(logits, 1) == np.argmax(logits + 3.7, 1)).all()


# -- checkpoint -----------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    p = m.init_params(SMALL, 11)
    path = tmp_path / "p.madp"
    m.save_checkpoint(path, p)
    q = m.load_checkpoint(path)
    assert q.dims == p.dims
    for name in m.PARAM_NAMES:
        assert p.named()[name].tobytes() == q.named()[name].tobytes()
    assert path.read_bytes()[:4] == b"MADP"


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "p.madp"
    m.save_checkpoint(path, m.init_params(SMALL, 0))
    raw = path.read_bytes()
    bad = tmp_path / "bad"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        m.load_checkpoint(bad)
    bad.write_bytes(raw[:-3])
    with pytest.raises(LengthError):
        m.load_checkpoint(bad)
    bad.write_bytes(raw + b"\0")
    with pytest.raises(FormatError):
        m.load_checkpoint(bad)
