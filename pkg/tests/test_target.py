import numpy as np
import pytest

from queryguard.core import ImageTensor
from queryguard.errors import ContractViolation
from queryguard.target import (
    BlobDataConfig,
    BlobDataset,
    ModelOutput,
    TargetModel,
    is_refusal,
    refusal_output,
)


@pytest.fixture(scope="module")
def mlp(dataset):
    return TargetModel.mlp_centroid(dataset)


class TestModelOutput:
    def test_label_must_match_argmax(self):
        with pytest.raises(ContractViolation):
            ModelOutput(label=0, probs=np.array([0.1, 0.9]))

    def test_probs_must_sum_to_one(self):
        with pytest.raises(ContractViolation):
            ModelOutput(label=0, probs=np.array([0.5, 0.2]))

    def test_refusal_marker(self):
        out = refusal_output()
        assert is_refusal(out)
        assert not is_refusal(ModelOutput(label=0, probs=np.array([0.6, 0.4])))


class TestPredict:
    def test_zero_weight_linear_is_uniform(self):
        model = TargetModel(
            kind="softmax-linear",
            weights={"W": np.zeros((4, 12)), "b": np.zeros(4)},
            num_classes=4, height=2, width=2, channels=3,
        )
        probs = model.predict_proba(np.random.default_rng(0).random((2, 2, 3)))
        assert np.allclose(probs, 0.25, atol=1e-12)
        assert model.predict_label(np.zeros((2, 2, 3))) == 0  # tie -> smallest id

    def test_probs_sum_to_one(self, victim, dataset, rng):
        for _ in range(20):
            image, _ = dataset.sample(rng)
            p = victim.predict_proba(image)
            assert abs(p.sum() - 1.0) < 1e-9
            assert p.min() >= 0.0

    def test_label_matches_argmax(self, victim, dataset, rng):
        for _ in range(1000):
            image, _ = dataset.sample(rng)
            p = victim.predict_proba(image)
            assert victim.predict_label(image) == int(np.argmax(p))

    def test_deterministic_given_seed(self, dataset):
        a = TargetModel.nearest_centroid(dataset)
        b = TargetModel.nearest_centroid(BlobDataset(BlobDataConfig()))
        x = dataset.sample(np.random.default_rng(5))[0]
        assert np.array_equal(a.predict_proba(x), b.predict_proba(x))

    def test_geometry_check(self, victim):
        with pytest.raises(ContractViolation):
            victim.predict_proba(np.zeros((3, 3, 3)))

    def test_classifies_its_distribution(self, victim, dataset):
        rng = np.random.default_rng(77)
        hits = sum(victim.predict_label(im) == label
                   for im, label in (dataset.sample(rng) for _ in range(500)))
        assert hits >= 490

    def test_mlp_forward_matches_independent_implementation(self, mlp, rng):
        x = rng.random((24, 24, 3))
        v = x.ravel()
        # plain-loop forward pass, no shared code with the model class
        W1, b1 = mlp.weights["W1"], mlp.weights["b1"]
        W2, b2 = mlp.weights["W2"], mlp.weights["b2"]
        hidden = np.array([np.tanh(sum(W1[j, k] * v[k] for k in range(v.size)) + b1[j])
                           for j in range(W1.shape[0])])
        logits = np.array([sum(W2[c, j] * hidden[j] for j in range(hidden.size)) + b2[c]
                           for c in range(W2.shape[0])])
        e = np.exp(logits - logits.max())
        expect = e / e.sum()
        assert np.allclose(mlp.predict_proba(x), expect, atol=1e-10)


class TestLossAndGrad:
    def test_loss_non_negative(self, victim, dataset, rng):
        for _ in range(20):
            image, label = dataset.sample(rng)
            loss, _ = victim.loss_and_grad(image, label)
            assert loss >= 0.0

    def test_linear_closed_form(self, victim, rng):
        x = rng.random((24, 24, 3))
        y = 3
        _, grad = victim.loss_and_grad(x, y)
        W = victim.weights["W"]
        z = W @ x.ravel() + victim.weights["b"]
        p = np.exp(z - z.max())
        p /= p.sum()
        expect = W.T @ (p - np.eye(victim.num_classes)[y])
        assert np.allclose(grad.ravel(), expect, atol=1e-12)

    @pytest.mark.parametrize("kind", ["linear", "mlp"])
    def test_gradient_matches_finite_differences(self, victim, mlp, kind, rng):
        model = victim if kind == "linear" else mlp
        flat_dim = model.dim
        failures = 0
        for trial in range(20):
            x = rng.random((24, 24, 3)) * 0.8 + 0.1
            y = int(rng.integers(model.num_classes))
            _, grad = model.loss_and_grad(x, y)
            coords = rng.choice(flat_dim, size=5, replace=False)
            h = 1e-5
            for c in coords:
                xp = x.ravel().copy(); xp[c] += h
                xm = x.ravel().copy(); xm[c] -= h
                lp, _ = model.loss_and_grad(xp.reshape(x.shape), y)
                lm, _ = model.loss_and_grad(xm.reshape(x.shape), y)
                fd = (lp - lm) / (2 * h)
                g = grad.ravel()[c]
                denom = max(abs(fd), abs(g), 1e-8)
                if abs(fd - g) / denom > 1e-4:
                    failures += 1
        assert failures == 0

    def test_label_out_of_range(self, victim):
        with pytest.raises(ContractViolation):
            victim.loss_and_grad(np.zeros((24, 24, 3)), 99)


class TestSerialization:
    def test_round_trip(self, victim, tmp_path, rng):
        path = tmp_path / "victim.aqtm"
        victim.save(path)
        again = TargetModel.load(path)
        assert again.kind == victim.kind
        assert again.num_classes == victim.num_classes
        x = rng.random((24, 24, 3))
        # weights narrow to f32 on disk; predictions agree to that precision
        assert np.allclose(again.predict_proba(x), victim.predict_proba(x), atol=1e-5)

    def test_mlp_round_trip(self, mlp, tmp_path, rng):
        path = tmp_path / "mlp.aqtm"
        mlp.save(path)
        again = TargetModel.load(path)
        x = rng.random((24, 24, 3))
        assert np.allclose(again.predict_proba(x), mlp.predict_proba(x), atol=1e-5)

    def test_magic_check(self, tmp_path):
        p = tmp_path / "bad.aqtm"
        p.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(ContractViolation):
            TargetModel.load(p)


class TestBlobDataset:
    def test_images_valid_and_distinct(self, dataset, rng):
        a, _ = dataset.sample(rng)
        b, _ = dataset.sample(rng)
        assert not np.array_equal(a.data, b.data)
        assert a.data.min() >= 0.0 and a.data.max() <= 1.0

    def test_seeded_reproducibility(self, dataset):
        r1 = np.random.default_rng(3)
        r2 = np.random.default_rng(3)
        a, la = dataset.sample(r1)
        b, lb = dataset.sample(r2)
        assert la == lb
        assert np.array_equal(a.data, b.data)

    def test_patterns_have_no_tile_scale_structure(self, dataset):
        # class patterns are pixel-level white noise, so 7x7 tile means stay
        # near the base level; block hashes then key on per-image noise only
        for c in range(dataset.config.num_classes):
            pattern = dataset.patterns[c].reshape(24, 24, 3).mean(axis=2)
            tiles = [pattern[y*7:(y+1)*7, x*7:(x+1)*7].mean()
                     for y in range(3) for x in range(3)]
            assert np.std(tiles) < 0.01
