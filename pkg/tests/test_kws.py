import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcen.dsp import filterbank_energies, rms_dbfs
from pcen.errors import EmptyOutputError, FormatError, TrainingError
from pcen.kws.data import (
    KEYWORD,
    NON_KEYWORD,
    augment_loudness,
    read_manifest,
    synth_dataset,
    write_dataset,
)
from pcen.kws.model import (
    ToyModel,
    context_windows,
    keyword_frames,
    scatter_window_grad,
    window_labels,
)
from pcen.kws.roc import RocCurve
from pcen.kws.train import clip_scores, evaluate_roc, train_joint
from pcen.trainable import trainable_forward


@pytest.fixture(scope="module")
def small_set():
    return synth_dataset(12, seed=3)


# --- synthetic corpus -----------------------------------------------------


def test_same_seed_same_bytes():
    a, b = synth_dataset(6, seed=5), synth_dataset(6, seed=5)
    for x, y in zip(a, b):
        assert x.audio.samples.tobytes() == y.audio.samples.tobytes()
        assert x.metadata == y.metadata
    c = synth_dataset(6, seed=6)
    assert a[0].audio.samples.tobytes() != c[0].audio.samples.tobytes()


def test_prefix_is_stable():
    short, long = synth_dataset(4, seed=1), synth_dataset(8, seed=1)
    assert short[0].audio.samples.tobytes() == long[0].audio.samples.tobytes()
    assert short[4].audio.samples.tobytes() == long[8].audio.samples.tobytes()


def test_counts_and_levels():
    data = synth_dataset(100, seed=0)
    labels = [c.label for c in data]
    assert labels.count(KEYWORD) == 100 and labels.count(NON_KEYWORD) == 100
    assert all(c.keyword_span is not None for c in data if c.label == KEYWORD)
    assert all(c.keyword_span is None for c in data if c.label == NON_KEYWORD)
    assert all(abs(rms_dbfs(c.audio) + 30) < 1e-5 for c in data)


def test_class_means_are_separated():
    data = synth_dataset(100, seed=0)
    means = np.array([filterbank_energies(c.audio).values.mean(axis=0) for c in data])
    labels = np.array([c.label for c in data])
    pos, neg = means[labels == KEYWORD], means[labels == NON_KEYWORD]
    pooled = np.sqrt((pos.var(axis=0, ddof=1) + neg.var(axis=0, ddof=1)) / 2)
    separation = np.abs(pos.mean(axis=0) - neg.mean(axis=0)) / pooled
    assert np.sum(separation > 3) >= 5


def test_bad_dataset_args():
    with pytest.raises(ValueError):
        synth_dataset(0)
    with pytest.raises(ValueError):
        synth_dataset(2, seconds=0.3)


# --- loudness augmentation ------------------------------------------------


def test_fixed_level(small_set):
    out = augment_loudness(small_set[0], 0, -30, -30)
    assert abs(rms_dbfs(out.audio) + 30) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_default_range(seed):
    clip = synth_dataset(1, seed=seed % 7)[0]
    level = rms_dbfs(augment_loudness(clip, seed).audio)
    assert -45 - 1e-6 <= level <= -15 + 1e-6


def test_idempotent(small_set):
    once = augment_loudness(small_set[1], 11)
    twice = augment_loudness(once, 11)
    np.testing.assert_allclose(twice.audio.samples, once.audio.samples, rtol=1e-12, atol=0)


def test_inverted_range():
    with pytest.raises(ValueError):
        augment_loudness(synth_dataset(1)[0], 0, -10, -20)


# --- context windows ------------------------------------------------------


def test_window_count():
    assert context_windows(np.zeros((100, 40)), 23, 8).shape == (69, 32 * 40)
    assert context_windows(np.zeros((32, 3)), 23, 8).shape == (1, 96)
    with pytest.raises(EmptyOutputError):
        context_windows(np.zeros((31, 3)), 23, 8)


def test_window_layout():
    x = np.arange(40 * 2, dtype=float).reshape(40, 2)
    w = context_windows(x, 23, 8)
    np.testing.assert_array_equal(w[0], x[:32].ravel())
    np.testing.assert_array_equal(w[-1], x[8:40].ravel())


def test_scatter_is_adjoint():
    rng = np.random.default_rng(0)
    x, g = rng.normal(size=(50, 3)), rng.normal(size=(50 - 31, 96))
    lhs = np.sum(context_windows(x) * g)
    rhs = np.sum(x * scatter_window_grad(g, 50, 3))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_window_labels_need_whole_keyword():
    labels = window_labels(60, (30, 40), 23, 8)
    centres = np.arange(23, 23 + labels.size)
    expected = (centres - 23 <= 30) & (40 <= centres + 8)
    np.testing.assert_array_equal(labels, expected.astype(int))
    assert labels.sum() > 0
    assert window_labels(60, None).sum() == 0


def test_keyword_frames_use_centre_sample():
    # frame k covers samples [160k, 160k + 400), centre 160k + 200
    assert keyword_frames((200, 360), 160, 400) == (0, 1)
    assert keyword_frames((201, 519), 160, 400) == (1, 1)
    assert keyword_frames(None, 160, 400) is None


# --- model ----------------------------------------------------------------


def test_model_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    model = ToyModel.init(12, hidden=8, seed=1)
    x, y = rng.normal(size=(5, 12)), np.array([0, 1, 1, 0, 1])
    w = rng.uniform(0.5, 2, 5)
    _, grads, d_x = model.loss_and_grads(x, y, w)
    h = 1e-6
    for idx in [(0, 0), (2, 5), (4, 11)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        numeric = (model.loss(xp, y, w) - model.loss(xm, y, w)) / (2 * h)
        assert d_x[idx] == pytest.approx(numeric, rel=1e-5, abs=1e-9)
    wp = model.copy()
    wp.b2[1] += h
    wm = model.copy()
    wm.b2[1] -= h
    assert grads[3][1] == pytest.approx((wp.loss(x, y, w) - wm.loss(x, y, w)) / (2 * h), rel=1e-5)


def test_model_checkpoint(tmp_path):
    model = ToyModel.init(10, 4, seed=2)
    model.save(tmp_path / "m.npz")
    again = ToyModel.load(tmp_path / "m.npz")
    for a, b in zip(model.params(), again.params()):
        np.testing.assert_array_equal(a, b)
    (tmp_path / "junk.npz").write_bytes(b"nope")
    with pytest.raises(FormatError):
        ToyModel.load(tmp_path / "junk.npz")


# --- ROC ------------------------------------------------------------------


def test_perfect_separation():
    roc = RocCurve.from_scores([1, 1, 1, 0, 0, 0], [1, 1, 1, 0, 0, 0])
    assert roc.fr_at_fa(0.0) == 0.0
    assert roc.auc() == 1.0


def test_random_scores_auc():
    rng = np.random.default_rng(0)
    labels = np.repeat([1, 0], 5000)
    roc = RocCurve.from_scores(rng.uniform(size=10_000), labels)
    assert abs(roc.auc() - 0.5) < 0.02


def test_endpoint_above_max_score():
    roc = RocCurve.from_scores([0.2, 0.9, 0.4], [1, 1, 0])
    assert np.isinf(roc.thresholds[-1])
    assert (roc.fa[-1], roc.fr[-1]) == (0.0, 1.0)
    assert (roc.fa[0], roc.fr[0]) == (1.0, 0.0)


def test_roc_against_brute_force():
    rng = np.random.default_rng(3)
    scores = np.round(rng.uniform(size=60), 1)  # many ties
    labels = rng.integers(0, 2, 60)
    roc = RocCurve.from_scores(scores, labels)
    for thr, fa, fr in zip(roc.thresholds, roc.fa, roc.fr):
        accepted = scores >= thr
        assert fa == np.mean(accepted[labels == 0])
        assert fr == np.mean(~accepted[labels == 1])


def test_fr_at_fa_interpolates():
    roc = RocCurve(np.array([0.0, 0.5, np.inf]), np.array([1.0, 0.2, 0.0]), np.array([0.0, 0.4, 1.0]))
    assert roc.fr_at_fa(0.1) == pytest.approx(0.7)
    assert roc.fr_at_fa(0.2) == pytest.approx(0.4)
    assert roc.nearest_point(0.15)[1] == 0.2


def test_roc_csv(tmp_path):
    roc = RocCurve.from_scores([0.1, 0.7, 0.3, 0.9], [0, 1, 0, 1])
    roc.to_csv(tmp_path / "roc.csv")
    again = RocCurve.from_csv(tmp_path / "roc.csv")
    np.testing.assert_array_equal(again.fa, roc.fa)
    np.testing.assert_array_equal(again.thresholds, roc.thresholds)


def test_roc_needs_both_classes():
    with pytest.raises(ValueError):
        RocCurve.from_scores([0.1, 0.2], [1, 1])


# --- training -------------------------------------------------------------


def test_zero_lr_keeps_history_constant(small_set):
    result = train_joint(small_set, "log-mel", epochs=3, lr=0.0, seed=0)
    assert len(result.history) == 4
    assert len(set(result.history)) == 1


def test_training_is_deterministic(small_set):
    a = train_joint(small_set, "trainable-pcen", epochs=2, seed=4)
    b = train_joint(small_set, "trainable-pcen", epochs=2, seed=4)
    assert a.history == b.history
    np.testing.assert_array_equal(a.layer.z, b.layer.z)


def test_single_class_rejected(small_set):
    with pytest.raises(TrainingError):
        train_joint([c for c in small_set if c.label == KEYWORD], "fixed-pcen", epochs=1)
    with pytest.raises(ValueError):
        train_joint(small_set, "mfcc", epochs=1)


def test_trainable_descends_and_freezes():
    data = synth_dataset(100, seed=0)
    result = train_joint(data, "trainable-pcen", epochs=30, seed=0, bootstrap=False)
    assert result.history[-1] < result.history[0]
    assert result.layer.step > 0
    for clip in data[:20]:
        energies = filterbank_energies(clip.audio).values
        frozen = result.frontend.features(energies).values
        live = trainable_forward(energies, result.layer)[0].values
        np.testing.assert_allclose(frozen, live, rtol=1e-12, atol=0)


def test_manifest_round_trip(small_set, tmp_path):
    manifest = write_dataset(small_set, tmp_path)
    again = read_manifest(manifest)
    assert [c.label for c in again] == [c.label for c in small_set]
    for a, b in zip(again, small_set):
        np.testing.assert_array_equal(a.audio.samples, b.audio.samples)
        assert a.keyword_span == b.keyword_span
    model = ToyModel.init(32 * 40, 8, seed=0)
    result = train_joint(small_set, "fixed-pcen", epochs=0)
    np.testing.assert_array_equal(
        clip_scores(model, result.frontend, again), clip_scores(model, result.frontend, small_set)
    )


def test_manifest_missing_columns(tmp_path):
    (tmp_path / "manifest.tsv").write_text("file\tclass\n")
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "manifest.tsv")


def test_epochs_zero_still_evaluates(small_set):
    result = train_joint(small_set, "log-mel", epochs=0)
    roc = evaluate_roc(result.model, result.frontend, small_set)
    assert len(result.history) == 1
    assert 0.0 <= roc.auc() <= 1.0
