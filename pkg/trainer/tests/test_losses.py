import math

import numpy as np
import pytest
import torch

from prompt_trainer.losses import two_stream_loss, default_pairs, nt_xent_loss


def brute_force_nt_xent(embeddings, pairs, tau):
    """Plain-python recomputation: per ordered direction, -log softmax ratio."""
    z = np.asarray(embeddings, dtype=np.float64)
    n = z.shape[0]
    total = 0.0
    count = 0
    for i, j in pairs:
        for a, b in ((i, j), (j, i)):
            num = math.exp(float(z[a] @ z[b]) / tau)
            den = sum(math.exp(float(z[a] @ z[k]) / tau)
                      for k in range(n) if k != a)
            total += -math.log(num / den)
            count += 1
    return total / count


def random_unit(n, d, seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


class TestNtXent:
    @pytest.mark.parametrize("n_images", [2, 3, 5, 8])
    def test_matches_brute_force_scalar(self, n_images):
        z = random_unit(2 * n_images, 16, seed=n_images)
        pairs = default_pairs(n_images)
        got = nt_xent_loss(torch.tensor(z, dtype=torch.float64), pairs, 0.3)
        expect = brute_force_nt_xent(z, pairs, 0.3)
        assert float(got) == pytest.approx(expect, abs=1e-5)

    def test_hand_built_angles(self):
        # N=2: two orthogonal positive pairs at known angles
        z = np.array([
            [1.0, 0.0], [np.cos(0.3), np.sin(0.3)],
            [0.0, 1.0], [np.sin(0.2), np.cos(0.2)],
        ])
        pairs = [(0, 1), (2, 3)]
        got = nt_xent_loss(torch.tensor(z), pairs, 0.5)
        assert float(got) == pytest.approx(brute_force_nt_xent(z, pairs, 0.5),
                                           abs=1e-5)

    def test_identical_embeddings_give_log_2n_minus_1(self):
        for n_images in (2, 4, 8):
            z = np.tile(random_unit(1, 8, seed=0), (2 * n_images, 1))
            got = nt_xent_loss(torch.tensor(z), default_pairs(n_images), 0.7)
            assert float(got) == pytest.approx(math.log(2 * n_images - 1), abs=1e-6)

    def test_invariant_to_global_rotation(self):
        z = random_unit(8, 8, seed=3)
        rng = np.random.default_rng(5)
        q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
        pairs = default_pairs(4)
        a = nt_xent_loss(torch.tensor(z), pairs, 0.4)
        b = nt_xent_loss(torch.tensor(z @ q), pairs, 0.4)
        assert float(a) == pytest.approx(float(b), abs=1e-9)

    def test_single_pair_rejected(self):
        z = torch.tensor(random_unit(2, 4, seed=1))
        with pytest.raises(ValueError):
            nt_xent_loss(z, [(0, 1)], 0.5)

    def test_bad_temperature(self):
        z = torch.tensor(random_unit(4, 4, seed=1))
        with pytest.raises(ValueError):
            nt_xent_loss(z, default_pairs(2), 0.0)


class TestTwoStreamLoss:
    def _streams(self):
        clean = torch.tensor(random_unit(8, 16, seed=11))
        adv = torch.tensor(random_unit(8, 16, seed=12))
        return clean, adv, default_pairs(4)

    def test_alpha_one_is_clean_stream(self):
        clean, adv, pairs = self._streams()
        got = two_stream_loss(clean, adv, pairs, alpha=1.0, temperature=0.5)
        assert float(got) == pytest.approx(
            float(nt_xent_loss(clean, pairs, 0.5)), abs=1e-12)

    def test_alpha_zero_is_adversarial_stream(self):
        clean, adv, pairs = self._streams()
        got = two_stream_loss(clean, adv, pairs, alpha=0.0, temperature=0.5)
        assert float(got) == pytest.approx(
            float(nt_xent_loss(adv, pairs, 0.5)), abs=1e-12)

    def test_alpha_half_is_the_mean(self):
        clean, adv, pairs = self._streams()
        got = two_stream_loss(clean, adv, pairs, alpha=0.5, temperature=0.5)
        expect = 0.5 * (float(nt_xent_loss(clean, pairs, 0.5))
                        + float(nt_xent_loss(adv, pairs, 0.5)))
        assert float(got) == pytest.approx(expect, abs=1e-6)

    def test_affine_in_alpha(self):
        clean, adv, pairs = self._streams()
        values = {a: float(two_stream_loss(clean, adv, pairs, a, 0.5))
                  for a in (0.0, 0.25, 0.5, 1.0)}
        lerp = {a: values[0.0] + a * (values[1.0] - values[0.0])
                for a in (0.25, 0.5)}
        assert values[0.25] == pytest.approx(lerp[0.25], abs=1e-6)
        assert values[0.5] == pytest.approx(lerp[0.5], abs=1e-6)

    def test_alpha_range_checked(self):
        clean, adv, pairs = self._streams()
        with pytest.raises(ValueError):
            two_stream_loss(clean, adv, pairs, alpha=1.5, temperature=0.5)
