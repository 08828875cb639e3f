import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from elcbert import autodiff as ad
from elcbert.autodiff import Tape, Tensor
from elcbert.errors import (
    ConfigError,
    EmptyVector,
    InvalidLayerIndex,
    LengthMismatch,
    RowNotNormalized,
    ShapeMismatch,
)
from elcbert.mixing import (
    PRESETS,
    MixWeights,
    WiringMode,
    alpha_csv,
    alpha_pgm,
    combine,
    entropy,
    init_mix_weights,
    mix_alphas,
    preset,
    rescale_for_display,
    residual_combine,
    unit_normalize,
)


def test_init_examples():
    np.testing.assert_array_equal(init_mix_weights(3, "biased"), [0, 0, 1])
    np.testing.assert_array_equal(init_mix_weights(3, "zero"), [0, 0, 0])
    np.testing.assert_array_equal(init_mix_weights(1, "biased"), [1])
    np.testing.assert_array_equal(mix_alphas(init_mix_weights(1, "biased")), [1.0])
    with pytest.raises(InvalidLayerIndex):
        init_mix_weights(0, "zero")


def test_mix_alphas_examples():
    np.testing.assert_allclose(mix_alphas([0, 0, 0]), [1 / 3] * 3, atol=1e-15)
    e = math.e
    np.testing.assert_allclose(mix_alphas([0, 1]), [1 / (1 + e), e / (1 + e)], rtol=1e-14)
    np.testing.assert_allclose(mix_alphas([0, 1]), [0.26894, 0.73106], atol=5e-6)
    np.testing.assert_allclose(mix_alphas([0, 0, 1]), [0.21194, 0.21194, 0.57612], atol=5e-6)
    with pytest.raises(EmptyVector):
        mix_alphas([])


@given(st.integers(2, 40))
def test_biased_init_peak(n):
    a = mix_alphas(init_mix_weights(n, "biased"))
    assert int(np.argmax(a)) == n - 1
    assert abs(a[n - 1] - math.e / (math.e + n - 1)) < 1e-9


@given(st.integers(1, 40))
def test_zero_init_entropy(n):
    assert abs(entropy(mix_alphas(init_mix_weights(n, "zero"))) - math.log(n)) < 1e-9


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
def test_alphas_row_stochastic(raw):
    a = mix_alphas(raw)
    assert (a > 0).all()
    assert abs(a.sum() - 1.0) < 1e-12


def test_presets_table():
    assert PRESETS["bert-baseline"].scheme == "standard-residual"
    assert PRESETS["elc"] == WiringMode("elc", "biased", mlp_residual=False)
    assert PRESETS["elc-zero"] == WiringMode("elc", "zero", mlp_residual=True)
    assert PRESETS["elc-norm"] == WiringMode("elc", "zero", True, normalize_outputs=True)
    assert PRESETS["elc-weighted"] == WiringMode("elc", "zero", True, weighted_output=True)
    for name, mode in PRESETS.items():
        assert WiringMode.from_dict(mode.to_dict()) == mode
    with pytest.raises(ConfigError) as exc:
        preset("elc-turbo")
    assert exc.value.key == "preset"


@pytest.mark.parametrize("kwargs", [
    dict(scheme="standard-residual", init="zero", mlp_residual=True),
    dict(scheme="standard-residual", init=None, mlp_residual=True, normalize_outputs=True),
    dict(scheme="standard-residual", init=None, mlp_residual=True, weighted_output=True),
    dict(scheme="elc", init=None),
    dict(scheme="highway"),
])
def test_wiring_rejects_bad_flags(kwargs):
    with pytest.raises(ConfigError):
        WiringMode(**kwargs)


def test_mix_weights_layout():
    mw = MixWeights.initialize(4, "biased", weighted_output=True)
    assert mw.destinations() == [1, 2, 3, 4, 5]
    assert [mw.raw[n].size for n in mw.destinations()] == [1, 2, 3, 4, 5]
    # head vector starts uniform even under biased init
    np.testing.assert_array_equal(mw.raw[5].data, 0.0)
    assert mw.has_head
    assert not MixWeights.initialize(4, "zero").has_head


def _tensors(rng, n, shape=(2, 3, 4)):
    return [Tensor(rng.normal(size=shape)) for _ in range(n)]


def test_combine_examples():
    rng = np.random.default_rng(0)
    (h,) = _tensors(rng, 1)
    np.testing.assert_array_equal(combine([h], [1.0]).data, h.data)
    same = [h, h, h]
    np.testing.assert_allclose(combine(same, mix_alphas([0.3, -1.0, 2.0])).data, h.data, atol=1e-15)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_combine_matches_summation_loop(n, seed):
    rng = np.random.default_rng(seed)
    hs = _tensors(rng, n)
    alpha = mix_alphas(rng.normal(size=n))
    expect = np.zeros_like(hs[0].data)
    for a, h in zip(alpha, hs):
        expect = expect + a * h.data
    np.testing.assert_allclose(combine(hs, alpha).data, expect, atol=1e-12, rtol=0)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_all_ones_bypass_equals_residual(n, seed):
    hs = _tensors(np.random.default_rng(seed), n)
    np.testing.assert_allclose(combine(hs, np.ones(n)).data, residual_combine(hs).data,
                               atol=1e-12, rtol=0)


def test_residual_examples():
    rng = np.random.default_rng(1)
    h, = _tensors(rng, 1)
    np.testing.assert_array_equal(residual_combine([h]).data, h.data)
    np.testing.assert_array_equal(residual_combine([h, Tensor(np.zeros_like(h.data))]).data, h.data)


def test_residual_matches_recurrence():
    # h_in^n = h_out^{n-1} + h_in^{n-1}, starting from h_in^1 = h_out^0
    hs = _tensors(np.random.default_rng(2), 3)
    h_in = hs[0].data
    for h in hs[1:]:
        h_in = h.data + h_in
    np.testing.assert_allclose(residual_combine(hs).data, h_in, atol=1e-12, rtol=0)


def test_combine_errors():
    rng = np.random.default_rng(3)
    a, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(3, 2)))
    with pytest.raises(ShapeMismatch):
        combine([a, b], [0.5, 0.5])
    with pytest.raises(ShapeMismatch):
        residual_combine([a, b])
    with pytest.raises(LengthMismatch):
        combine([a, a], [1.0])
    with pytest.raises(LengthMismatch):
        combine([], [])


def test_normalized_combine_uses_unit_vectors():
    rng = np.random.default_rng(4)
    hs = _tensors(rng, 3)
    alpha = mix_alphas([0.1, 0.2, 0.3])
    out = combine(hs, alpha, normalize=True).data
    expect = sum(a * h.data / (np.linalg.norm(h.data, axis=-1, keepdims=True) + 1e-7)
                 for a, h in zip(alpha, hs))
    np.testing.assert_allclose(out, expect, atol=1e-12)
    # the stored outputs are untouched
    assert not np.allclose(np.linalg.norm(hs[0].data, axis=-1), 1.0)


@given(arrays(np.float64, (3, 5), elements=st.floats(0.5, 20) | st.floats(-20, -0.5)))
def test_unit_normalize_idempotent(x):
    once = unit_normalize(Tensor(x)).data
    np.testing.assert_allclose(unit_normalize(Tensor(once)).data, once, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(once, axis=-1), 1.0, atol=1e-6)


def test_gradient_reaches_every_raw_weight():
    rng = np.random.default_rng(5)
    hs = [Tensor(rng.normal(size=(3, 4)), requires_grad=True) for _ in range(3)]
    raw = Tensor(rng.normal(size=3), requires_grad=True)
    target = Tensor(rng.normal(size=(3, 4)))

    def f():
        d = combine(hs, ad.softmax_rows(raw)) - target
        return (d * d).sum()

    with Tape():
        loss = f()
    loss.backward()
    assert (np.abs(raw.grad) > 1e-8).all()
    raw.zero_grad()
    for h in hs:
        h.zero_grad()
    assert ad.finite_diff_check(f, [raw, *hs]) < 1e-7

    def g():
        c = combine(hs, ad.softmax_rows(raw), normalize=True)
        return (c * c).sum()

    assert ad.finite_diff_check(g, [raw, *hs]) < 1e-6


def test_rescale_examples():
    out = rescale_for_display([[1.0], [0.26894, 0.73106], [1 / 3] * 3, [0.25] * 4], tol=1e-5)
    np.testing.assert_array_equal(out[0], [1.0])
    np.testing.assert_allclose(out[1], [0.53788, 1.46212], atol=1e-12)
    np.testing.assert_array_equal(out[3], [1, 1, 1, 1])
    for k, row in enumerate(out, start=1):
        assert abs(row.sum() - k) < 1e-6


@pytest.mark.parametrize("rows", [[[0.9]], [[1.0], [0.5, 0.5, 0.0]], [[1.0], [0.6, 0.6]]])
def test_rescale_rejects(rows):
    with pytest.raises(RowNotNormalized):
        rescale_for_display(rows)


def test_entropy_examples():
    assert entropy([1.0]) == 0.0
    assert math.copysign(1.0, entropy([1.0])) == 1.0
    assert entropy([0.5, 0.5]) == pytest.approx(math.log(2), rel=1e-15)


def test_csv_and_pgm_export():
    rows = [mix_alphas(init_mix_weights(n, "zero")) for n in (1, 2, 3)]
    text = alpha_csv(rows)
    lines = text.splitlines()
    assert lines[0] == "dest_layer,src_layer,alpha,rescaled"
    assert len(lines) == 1 + 1 + 2 + 3
    n, i, a, r = lines[-1].split(",")
    assert (int(n), int(i)) == (3, 2)
    assert float(a) == rows[2][2] and float(r) == pytest.approx(1.0, abs=1e-15)
    pgm = alpha_pgm(rows).split("\n")
    assert pgm[:3] == ["P2", "3 3", "255"]
    # uniform rows rescale to ones everywhere, empty upper cells stay black
    assert pgm[3:6] == ["255 0 0", "255 255 0", "255 255 255"]
