import numpy as np
import pytest

from freqpriv.core.errors import ShapeError
from freqpriv.frequency.fdaf import FdafBlock, fdaf_forward
from freqpriv.frequency.gating import (
    DEFAULT_GATE_INIT,
    PASS_THROUGH_LOGIT,
    SpectralGate,
    apply_gate,
    gate_band_profile,
)
from freqpriv.frequency.loss import freq_consistency_loss, radial_distance, radial_weight
from freqpriv.tensor.ops import dft2


# ---------------------------------------------------------------------
# Spectral gate
# ---------------------------------------------------------------------

def test_gate_at_zero_logit_halves_spectrum():
    """sigmoid(0) = 0.5 scales a single bin by one half."""
    f = np.full((1, 1, 1), 3.0 + 0j)
    gate = SpectralGate.create(1, 1, 1, init=0.0)

    assert apply_gate(f, gate).values[0, 0, 0] == 1.5 + 0j


def test_saturated_gate_passes_spectrum(rng):
    f = dft2(rng.standard_normal((2, 4, 4))).values
    gate = SpectralGate.create(2, 4, 4, init=20.0)

    out = apply_gate(f, gate).values

    assert np.allclose(out, f, rtol=1e-8, atol=0.0)


def test_gate_matches_elementwise_oracle(rng):
    f = rng.standard_normal((1, 4, 4)) + 1j * rng.standard_normal((1, 4, 4))
    logits = rng.standard_normal((1, 4, 4))

    out = apply_gate(f, SpectralGate(logits)).values

    assert np.allclose(out, f / (1.0 + np.exp(-logits)), atol=1e-12)


def test_gate_shrinks_every_nonzero_bin(rng):
    """|F̃| < |F| wherever F ≠ 0, for random logits and spectra."""
    for _ in range(50):
        c, h, w = (int(d) for d in rng.integers(1, 9, size=3))
        f = dft2(rng.standard_normal((c, h, w))).values
        gate = SpectralGate(3.0 * rng.standard_normal((c, h, w)))

        out = apply_gate(f, gate).values

        nonzero = np.abs(f) > 0
        assert np.all(np.abs(out[nonzero]) < np.abs(f[nonzero]))
        assert np.all(out[~nonzero] == 0)


def test_gate_dims_fixed_at_construction():
    gate = SpectralGate.create(1, 4, 4)
    with pytest.raises(ShapeError):
        apply_gate(np.zeros((1, 8, 8), dtype=complex), gate)


def test_gate_mask_is_open_interval():
    gate = SpectralGate.create(3, 2, 5)

    mask = gate.mask()

    assert mask.shape == (3, 2, 5)
    assert np.all((mask > 0) & (mask < 1))
    assert np.allclose(mask, 1.0 / (1.0 + np.exp(-DEFAULT_GATE_INIT)))


def test_gate_band_profile_covers_every_bin():
    """Band 0 holds DC; the bin counts per channel add up to H·W."""
    gate = SpectralGate.create(2, 8, 8, init=0.0)

    profile = gate_band_profile(gate, n_bands=4)

    assert set(profile["channel"]) == {0, 1}
    assert profile.groupby("channel")["n_bins"].sum().tolist() == [64, 64]
    assert np.allclose(profile["mean_activation"], 0.5)
    assert profile.loc[0, "band"] == 0


# ---------------------------------------------------------------------
# FDAF block
# ---------------------------------------------------------------------

def test_fdaf_identity_at_init(rng):
    """Zero fusion parameters leave only the residual path."""
    i = rng.standard_normal((3, 4, 4))
    block = FdafBlock.create(3, 4, 4)

    assert np.array_equal(fdaf_forward(i, block).values, i)


def test_fdaf_open_gate_with_selecting_fusion_doubles_input(rng):
    """Gate at +40 and fusion [I | 0]: the conv returns i, the residual adds i."""
    c = 2
    i = rng.standard_normal((c, 4, 6))
    block = FdafBlock(
        gate=SpectralGate.create(c, 4, 6, init=PASS_THROUGH_LOGIT),
        fusion_weight=np.hstack([np.eye(c), np.zeros((c, c))]),
        fusion_bias=np.zeros(c),
    )

    assert np.allclose(fdaf_forward(i, block).values, 2.0 * i, atol=1e-8)


def test_fdaf_frequency_branch_reaches_output(rng):
    """Fusion [0 | I] with a half-open gate gives i + 0.5·i."""
    c = 1
    i = rng.standard_normal((c, 4, 4))
    block = FdafBlock(
        gate=SpectralGate.create(c, 4, 4, init=0.0),
        fusion_weight=np.hstack([np.zeros((c, c)), np.eye(c)]),
        fusion_bias=np.zeros(c),
    )

    assert np.allclose(fdaf_forward(i, block).values, 1.5 * i, atol=1e-12)


def test_fdaf_rejects_mismatched_input(rng):
    block = FdafBlock.create(2, 4, 4)
    with pytest.raises(ShapeError):
        fdaf_forward(rng.standard_normal((2, 8, 8)), block)


def test_fdaf_rejects_bad_fusion_shape():
    with pytest.raises(ShapeError):
        FdafBlock(SpectralGate.create(2, 4, 4), np.zeros((2, 2)), np.zeros(2))


# ---------------------------------------------------------------------
# Radial weight and frequency loss
# ---------------------------------------------------------------------

def test_radial_weight_lambda_zero_is_ones():
    assert np.array_equal(radial_weight(5, 6, lam=0.0).matrix, np.ones((5, 6)))


def test_radial_weight_range_at_lambda_two():
    """DC gets weight 1, the farthest wrap-aware bin 1 + λ = 3."""
    w = radial_weight(8, 8, lam=2.0).matrix

    assert w[0, 0] == 1.0
    assert w.max() == pytest.approx(3.0)
    assert w[4, 4] == pytest.approx(3.0)


def test_radial_distance_is_wrap_aware():
    r = radial_distance(1, 4)

    assert np.allclose(r[0], [0.0, 0.5, 1.0, 0.5])
    assert np.array_equal(radial_distance(1, 1), np.zeros((1, 1)))


def test_negative_lambda_rejected():
    with pytest.raises(ValueError):
        radial_weight(4, 4, lam=-1.0)


def test_freq_loss_zero_for_identical_crops(rng):
    crops = [rng.standard_normal((2, 4, 4)) for _ in range(3)]

    result = freq_consistency_loss(crops, [c.copy() for c in crops], lam=2.0)

    assert result.value == 0.0
    assert result.n_pairs == 3


@pytest.mark.parametrize("lam", [0.0, 1.0, 2.0, 7.5])
def test_freq_loss_single_dc_bin(lam):
    """1×1 crops: the DFT is the identity and w(DC) = 1."""
    result = freq_consistency_loss([np.full((1, 1, 1), 2.0)], [np.zeros((1, 1, 1))], lam=lam)

    assert result.value == pytest.approx(4.0)


def test_freq_loss_one_by_two_crop():
    """F(P) = (0, 2); bin v=1 has r=1, w=2, so |2·2|² = 16."""
    result = freq_consistency_loss([np.array([[[1.0, -1.0]]])], [np.zeros((1, 1, 2))], lam=1.0)

    assert result.value == pytest.approx(16.0)


def test_freq_loss_averages_over_pairs():
    p = [np.full((1, 1, 1), 2.0), np.zeros((1, 1, 1))]
    t = [np.zeros((1, 1, 1)), np.zeros((1, 1, 1))]

    assert freq_consistency_loss(p, t).value == pytest.approx(2.0)


def random_pairs(rng, n_pairs):
    c, h, w = (int(d) for d in rng.integers(1, 7, size=3))
    h = max(h, 2)
    p = [rng.standard_normal((c, h, w)) for _ in range(n_pairs)]
    t = [rng.standard_normal((c, h, w)) for _ in range(n_pairs)]
    return p, t


def test_freq_loss_is_quadratically_homogeneous(rng):
    """L(a·P, a·T) = a²·L(P, T)."""
    for _ in range(50):
        p, t = random_pairs(rng, int(rng.integers(1, 4)))
        a = float(rng.uniform(-3.0, 3.0))

        base = freq_consistency_loss(p, t, lam=1.5).value
        scaled = freq_consistency_loss([a * x for x in p], [a * x for x in t], lam=1.5).value

        assert scaled == pytest.approx(a * a * base, rel=1e-9)


def test_freq_loss_strictly_increases_with_lambda(rng):
    """With P − T carrying energy off DC, a larger λ gives a larger loss."""
    for _ in range(50):
        p, t = random_pairs(rng, 2)
        lo, hi = sorted(rng.uniform(0.0, 5.0, size=2))
        hi += 0.1

        assert freq_consistency_loss(p, t, lam=lo).value < freq_consistency_loss(p, t, lam=hi).value


def test_freq_loss_without_pairs_is_flagged():
    result = freq_consistency_loss([], [])

    assert result.value == 0.0
    assert result.no_matched_targets


def test_freq_loss_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        freq_consistency_loss([rng.standard_normal((1, 4, 4))], [rng.standard_normal((1, 3, 4))])
    with pytest.raises(ShapeError):
        freq_consistency_loss([rng.standard_normal((1, 4, 4))], [])


def test_freq_loss_fast_backend_agrees(rng):
    p = [rng.standard_normal((2, 8, 8))]
    t = [rng.standard_normal((2, 8, 8))]

    reference = freq_consistency_loss(p, t, dft_backend="reference").value
    fast = freq_consistency_loss(p, t, dft_backend="fast").value

    assert fast == pytest.approx(reference, rel=1e-10)
