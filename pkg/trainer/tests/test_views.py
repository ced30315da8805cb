import numpy as np
import pytest
import torch

from prompt_trainer.encoder import PromptedEncoder
from prompt_trainer.losses import default_pairs, nt_xent_loss
from prompt_trainer.views import PgdConfig, augment_pair, interleave_views, pgd_views

BUDGET = 8.0 / 255.0


@pytest.fixture()
def tiny_batch():
    rng = np.random.default_rng(0)
    images = torch.tensor(rng.random((4, 3, 6, 6)), dtype=torch.float32)
    return images


@pytest.fixture()
def tiny_encoder():
    return PromptedEncoder(height=6, width=6, channels=3, embed_dim=16,
                           tokens=2, seed=0)


class TestAugment:
    def test_views_stay_valid_and_aligned(self, tiny_batch):
        gen = torch.Generator().manual_seed(1)
        vi, vj = augment_pair(tiny_batch, gen)
        for v in (vi, vj):
            assert v.shape == tiny_batch.shape
            assert v.min() >= 0.0 and v.max() <= 1.0
        assert not torch.equal(vi, vj)

    def test_interleave_layout(self, tiny_batch):
        gen = torch.Generator().manual_seed(1)
        vi, vj = augment_pair(tiny_batch, gen)
        stacked = interleave_views(vi, vj)
        assert torch.equal(stacked[0], vi[0])
        assert torch.equal(stacked[1], vj[0])
        assert torch.equal(stacked[6], vi[3])


class TestPgdViews:
    def test_ball_and_range(self, tiny_batch, tiny_encoder):
        gen = torch.Generator().manual_seed(2)
        vi, vj = augment_pair(tiny_batch, gen)
        clean = interleave_views(vi, vj)
        adv = pgd_views(tiny_encoder, clean, PgdConfig())
        assert torch.all((adv - clean).abs() <= BUDGET + 1e-7)
        assert adv.min() >= 0.0 and adv.max() <= 1.0

    def test_zero_budget_is_identity(self, tiny_batch, tiny_encoder):
        clean = interleave_views(tiny_batch, tiny_batch.flip(0))
        adv = pgd_views(tiny_encoder, clean, PgdConfig(budget=0.0))
        assert torch.equal(adv, clean)

    def test_step_size_rule(self):
        cfg = PgdConfig(budget=8 / 255, steps=5)
        assert cfg.step_size == pytest.approx(8 / 255 / 5 * 2.5)

    def test_objective_mostly_non_decreasing(self, tiny_batch, tiny_encoder):
        gen = torch.Generator().manual_seed(3)
        vi, vj = augment_pair(tiny_batch, gen)
        clean = interleave_views(vi, vj)
        increases = 0
        total = 0
        for steps in (5, 8):
            _, trace = pgd_views(tiny_encoder, clean,
                                 PgdConfig(steps=steps), return_trace=True)
            diffs = np.diff(trace)
            increases += int((diffs >= -1e-9).sum())
            total += len(diffs)
        assert increases / total >= 0.95

    def test_gradient_sign_matches_finite_differences(self):
        # double precision throughout so the comparison is about correctness,
        # not float noise
        torch.manual_seed(0)
        enc = PromptedEncoder(height=4, width=4, channels=3, embed_dim=8,
                              tokens=0, seed=2).double()
        rng = np.random.default_rng(1)
        clean = torch.tensor(rng.random((4, 3, 4, 4)), dtype=torch.float64)
        pairs = default_pairs(2)

        adv = clean.clone().requires_grad_(True)
        loss = nt_xent_loss(enc(adv), pairs, 0.2)
        (grad,) = torch.autograd.grad(loss, adv)
        grad = grad.detach().numpy().ravel()

        h = 1e-6
        flat = clean.numpy().ravel().copy()
        agree = 0
        checked = 0
        idx = rng.choice(flat.size, size=120, replace=False)
        for c in idx:
            xp = flat.copy(); xp[c] += h
            xm = flat.copy(); xm[c] -= h
            with torch.no_grad():
                lp = float(nt_xent_loss(enc(
                    torch.tensor(xp.reshape(clean.shape))), pairs, 0.2))
                lm = float(nt_xent_loss(enc(
                    torch.tensor(xm.reshape(clean.shape))), pairs, 0.2))
            fd = (lp - lm) / (2 * h)
            if abs(fd) < 1e-9 and abs(grad[c]) < 1e-9:
                continue
            checked += 1
            if np.sign(fd) == np.sign(grad[c]):
                agree += 1
        assert checked > 100
        assert agree / checked >= 0.99

    def test_non_finite_gradients_abort(self, tiny_batch):
        class ExplodingEncoder(torch.nn.Module):
            def forward(self, x):
                z = torch.log(x.flatten(1) - 10.0)  # nan for x < 10
                return torch.nn.functional.normalize(z, dim=1)

        clean = interleave_views(tiny_batch, tiny_batch.flip(0))
        with pytest.raises(FloatingPointError):
            pgd_views(ExplodingEncoder(), clean, PgdConfig())
