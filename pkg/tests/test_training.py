import numpy as np
import pytest

from srbridge import training as tr
from srbridge.errors import ConfigurationError


def small(**kw):
    base = dict(n=10, K=8, batches_per_epoch=2, epochs=3, hidden=(6, 6), seed=11)
    base.update(kw)
    return tr.TrainingConfig(**base)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        dict(geometry="euclidean", x0=(0.0,), loss_kind="denoising_heisenberg", scheme="heisenberg_exact"),
        dict(geometry="euclidean", x0=(0.0,), scheme="heisenberg_exact", loss_kind="divergence"),
        dict(loss_kind="denoising_euclidean", scheme="heisenberg_exact"),
        dict(loss_kind="denoising_general", scheme="euler"),
        dict(loss_kind="denoising_heisenberg", scheme="taylor"),
        dict(geometry="sphere"),
        dict(scheme="milstein"),
        dict(epochs=-1),
        dict(lr=0.0),
        dict(hidden=()),
        dict(x0=(0.0, 0.0)),
        dict(K=0),
    ])
    def test_incompatible(self, kw):
        with pytest.raises(ConfigurationError):
            small(**kw)

    def test_relu_divergence_warns(self):
        with pytest.warns(RuntimeWarning):
            small(loss_kind="divergence", activation="relu", scheme="taylor")

    def test_layer_sizes(self):
        assert small().layer_sizes() == [4, 6, 6, 2]
        assert small(geometry="euclidean", dim=2, x0=(0, 0), loss_kind="divergence",
                     scheme="euler").layer_sizes() == [3, 6, 6, 2]

    def test_custom_model_frames(self):
        m = tr.custom_step2_model()
        x = np.array([0.7, 0.1, 0.2])
        np.testing.assert_allclose(m.frame(x), [[1, 0], [0, 1], [0, 0.7]])


class TestTrain:
    def test_zero_epochs_returns_init(self):
        c = small(epochs=0)
        p, rep = tr.train(c)
        assert p.flat().tobytes() == tr.initial_params(c).flat().tobytes()
        assert rep.epoch_losses == []

    def test_deterministic(self):
        a, ra = tr.train(small())
        b, rb = tr.train(small())
        assert a.flat().tobytes() == b.flat().tobytes()
        assert ra.epoch_losses == rb.epoch_losses

    def test_seed_changes_result(self):
        a, _ = tr.train(small())
        b, _ = tr.train(small(seed=12))
        assert a.flat().tobytes() != b.flat().tobytes()

    def test_progress_callback(self):
        seen = []
        _, rep = tr.train(small(), progress=lambda e, l: seen.append((e, l)))
        assert [e for e, _ in seen] == [0, 1, 2]
        assert [l for _, l in seen] == rep.epoch_losses
        assert len(rep.wall_clock) == 3

    @pytest.mark.parametrize("kw", [
        dict(),
        dict(loss_kind="divergence", scheme="taylor"),
        dict(loss_kind="denoising_general", scheme="taylor"),
        dict(geometry="euclidean", x0=(0.0,), loss_kind="denoising_euclidean", scheme="euler"),
        dict(geometry="custom_step2", x0=(0.0, 0.0, 0.0), loss_kind="denoising_general", scheme="taylor"),
    ])
    def test_all_pairs_run(self, kw):
        _, rep = tr.train(small(**kw))
        assert np.all(np.isfinite(rep.epoch_losses))

    def test_relu_divergence_fails_on_first_evaluation(self):
        with pytest.warns(RuntimeWarning):
            c = small(loss_kind="divergence", activation="relu", scheme="taylor")
        with pytest.raises(ConfigurationError):
            tr.train(c)

    def test_loss_trends_down(self):
        c = tr.TrainingConfig(geometry="euclidean", x0=(0.0,), loss_kind="denoising_euclidean", scheme="euler",
                              n=20, K=32, batches_per_epoch=2, epochs=100, hidden=(8, 8), lr=1e-2, seed=3)
        _, rep = tr.train(c)
        L = np.asarray(rep.epoch_losses)
        assert np.mean(L[-20:]) < np.mean(L[:20])
