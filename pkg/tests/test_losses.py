import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from firegan import losses as L
from firegan.data import ImageTensor, MODEL_SIGNED

W1 = L.LossWeights(lambda_=1.0, xi=0.0)


def toy_g2(gamma=4.5):
    w = L.LossWeights(gamma=gamma, lambda_=1.0, xi=0.0)
    fused = torch.full((1, 1, 2, 2), 0.3, dtype=torch.float64)
    real_ir = fused - 0.1
    return L.g2_loss(torch.tensor([[[[0.5]]]]), torch.tensor([[[[1.0]]]]), fused, real_ir, fused.clone(), w)


def random_g2_inputs(seed, n=2, c=3, h=8, w=8):
    g = torch.Generator().manual_seed(seed)
    r = lambda *s: torch.rand(*s, generator=g, dtype=torch.float64) * 2 - 1
    return r(n, 1, 3, 3), r(n, 1, 3, 3), r(n, c, h, w), r(n, c, h, w), r(n, c, h, w)


class TestG2:
    def test_hand_toy(self):
        terms = toy_g2()
        assert abs(terms.total.item() - 1.135) <= 1e-6
        assert abs(terms.adv_d1.item() - 0.25) <= 1e-12
        assert terms.adv_d2.item() == 0.0

    def test_all_residuals_zero(self):
        x = torch.rand(2, 3, 4, 4)
        ones = torch.ones(2, 1, 2, 2)
        assert L.g2_loss(ones, ones, x, x.clone(), x.clone(), L.LossWeights()).total.item() == 0.0

    @pytest.mark.parametrize("seed", range(20))
    def test_decomposition(self, seed):
        w = L.LossWeights(gamma=2.7, xi=0.5)
        t = L.g2_loss(*random_g2_inputs(seed), w)
        rest = t.total - w.gamma * t.adv_d1 - t.adv_d2 - t.content
        assert abs(rest.item()) <= 1e-6 * abs(t.total.item())

    def test_gamma_linearity(self):
        one, four = toy_g2(1.0), toy_g2(4.5)
        assert abs(one.total.item() - (four.total.item() - 3.5 * four.adv_d1.item())) <= 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.1, 10), st.floats(0.0, 5))
    def test_gamma_monotone(self, g, dg):
        inputs = random_g2_inputs(3)
        lo = L.g2_loss(*inputs, L.LossWeights(gamma=g)).total.item()
        hi = L.g2_loss(*inputs, L.LossWeights(gamma=g + dg)).total.item()
        assert hi >= lo

    def test_content_normalization(self):
        inputs = random_g2_inputs(5, c=3)
        hwc = L.g2_loss(*inputs, L.LossWeights(content_norm="hwc")).content.item()
        hw = L.g2_loss(*inputs, L.LossWeights(content_norm="hw")).content.item()
        assert hw == pytest.approx(3 * hwc, rel=1e-12)

    def test_gradient_term_uses_visible(self):
        d1, d2, fused, ir, vis = random_g2_inputs(6)
        w = L.LossWeights(xi=1.0)
        a = L.g2_loss(d1, d2, fused, ir, vis, w).content
        b = L.g2_loss(d1, d2, fused, ir, vis + 0.5 * torch.rand_like(vis), w).content
        assert a.item() != b.item()
        # a constant offset leaves the Laplacian unchanged
        c = L.g2_loss(d1, d2, fused, ir, vis + 0.25, w).content
        assert c.item() == pytest.approx(a.item(), rel=1e-12)

    def test_batch_mismatch(self):
        d1, d2, fused, ir, vis = random_g2_inputs(0)
        with pytest.raises(L.LossError, match="batch"):
            L.g2_loss(d1[:1], d2, fused, ir, vis, L.LossWeights())

    def test_non_finite(self):
        d1, d2, fused, ir, vis = random_g2_inputs(0)
        fused[0, 0, 0, 0] = float("nan")
        with pytest.raises(L.LossError, match="fused"):
            L.g2_loss(d1, d2, fused, ir, vis, L.LossWeights())


class TestG1:
    def test_content_only(self):
        w = L.LossWeights(lambda_=1.0, g1_adv_weight=0.0)
        gen = torch.full((1, 1, 2, 2), 0.5)
        out = L.g1_loss(torch.zeros(1, 1, 1, 1), gen, gen - 0.2, w)
        assert out.item() == pytest.approx(0.04, abs=1e-6)

    def test_lambda_doubles_content(self):
        g = torch.Generator().manual_seed(0)
        gen, real = torch.rand(2, 3, 4, 4, generator=g), torch.rand(2, 3, 4, 4, generator=g)
        scores = torch.ones(2, 1, 2, 2)  # adversarial residual zero
        a = L.g1_loss(scores, gen, real, L.LossWeights(lambda_=3.0))
        b = L.g1_loss(scores, gen, real, L.LossWeights(lambda_=6.0))
        assert b.item() == pytest.approx(2 * a.item(), rel=1e-12)

    def test_zero(self):
        x = torch.rand(2, 3, 4, 4)
        assert L.g1_loss(torch.ones(2, 1, 2, 2), x, x.clone(), L.LossWeights()).item() == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(L.LossError):
            L.g1_loss(torch.ones(1, 1, 1, 1), torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 2), L.LossWeights())


class TestDiscriminators:
    def test_d1_hand(self):
        out = L.d1_loss(torch.tensor([[[[0.8]]]]), torch.tensor([[[[0.3]]]]), L.LossWeights())
        assert out.item() == pytest.approx(0.13, abs=1e-6)

    def test_at_labels(self):
        w = L.LossWeights()
        ones, zeros = torch.ones(3, 1, 2, 2), torch.zeros(3, 1, 2, 2)
        assert L.d1_loss(ones, zeros, w).item() == 0.0
        assert L.d2_loss(ones, zeros, zeros, w).item() == 0.0

    def test_d2_equal_fakes_collapse(self):
        g = torch.Generator().manual_seed(1)
        real, fake = torch.rand(4, 1, 3, 3, generator=g), torch.rand(4, 1, 3, 3, generator=g)
        w = L.LossWeights()
        assert L.d2_loss(real, fake, fake.clone(), w).item() == pytest.approx(L.d1_loss(real, fake, w).item(), rel=1e-12)

    def test_batch_mismatch(self):
        with pytest.raises(L.LossError):
            L.d2_loss(torch.ones(2, 1, 1, 1), torch.ones(3, 1, 1, 1), torch.ones(2, 1, 1, 1), L.LossWeights())

    def test_score_map_reduced_per_image(self):
        # a map whose mean hits the label counts as a perfect score
        scores = torch.tensor([[[[0.5, 1.5]]]])
        assert L.d1_loss(scores, torch.zeros(1, 1, 1, 2), L.LossWeights()).item() == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_non_negative(seed):
    d1, d2, fused, ir, vis = random_g2_inputs(seed)
    w = L.LossWeights(a_label=0.1, c1_label=0.9)
    t = L.g2_loss(d1, d2, fused, ir, vis, w)
    assert min(t.adv_d1.item(), t.adv_d2.item(), t.content.item()) >= 0
    assert L.g1_loss(d2, fused, ir, w).item() >= 0
    assert L.d1_loss(d1, d2, w).item() >= 0
    assert L.d2_loss(d1, d2, d2.flip(0), w).item() >= 0


class TestGradientMap:
    def test_constant(self):
        assert np.all(L.gradient_map(np.full((5, 6, 3), 0.3)) == 0)

    def test_impulse(self):
        img = np.zeros((5, 5, 1))
        img[2, 2, 0] = 1.0
        g = L.gradient_map(img)[:, :, 0]
        expected = np.zeros((5, 5))
        expected[2, 2] = -4
        expected[1, 2] = expected[3, 2] = expected[2, 1] = expected[2, 3] = 1
        assert np.array_equal(g, expected)

    def test_ramp_interior(self):
        y, x = np.mgrid[0:7, 0:9]
        img = (0.1 * x - 0.05 * y)[:, :, None]
        assert np.allclose(L.gradient_map(img)[1:-1, 1:-1], 0, atol=1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(-1, 1, (6, 7, 3))
        ours = L.gradient_map(ImageTensor(img, MODEL_SIGNED))
        for c in range(3):
            ref = np.array(oracles.laplacian_replicate(img[:, :, c]))
            assert np.allclose(ours[:, :, c], ref, atol=1e-12)

    def test_sobel(self):
        img = np.zeros((5, 5, 1))
        img[:, 3:] = 1.0
        g = L.gradient_map(img, L.SOBEL)[:, :, 0]
        assert g[2, 0] == 0 and g[2, 2] == 4

    def test_unknown_operator(self):
        with pytest.raises(ValueError):
            L.gradient_tensor(torch.zeros(1, 1, 3, 3), "prewitt")


def test_invalid_weights():
    with pytest.raises(ValueError):
        L.LossWeights(gamma=0)
    with pytest.raises(ValueError):
        L.LossWeights(content_norm="chw")


def test_report_row():
    r = L.LossReport(1.0, 2.0, 0.5, 0.25, 1.25)
    row = r.as_row(7)
    assert row["step"] == 7 and row["d1_total"] == "" and list(row)[1:] == list(L.LossReport.FIELDS)


@pytest.mark.parametrize("name", ["g1", "g2", "d1", "d2"])
def test_finite_difference_gradients(name):
    from gradcheck import max_relative_error

    assert max_relative_error(name) <= 1e-3
