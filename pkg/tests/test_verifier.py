import numpy as np
import pytest

from fvk import corpus
from fvk.audio import verification_frontend
from fvk.autodiff import ShapeError
from fvk.models.encoder import MelCache
from fvk.models.verifier import (
    VerificationModel,
    evaluate_verifier,
    sample_pairs,
    train_verifier,
)


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ver_corpus")
    speakers = corpus.sample_speakers(12, seed=61)
    manifests = corpus.build_corpus(speakers, 8, tmp, seed=61)
    cache = MelCache(manifests["train"], verification_frontend())
    return manifests["train"], cache


def test_untrained_eer_is_chance(setup):
    man, cache = setup
    model = VerificationModel(seed=3)
    report = evaluate_verifier(model, man, man.speakers()[-4:], trials=256,
                               seed=1, cache=cache)
    assert report.eer == pytest.approx(0.5, abs=0.05)


def test_encoding_width_and_band_check(setup):
    man, cache = setup
    model = VerificationModel(seed=3)
    enc = model.encode([cache(man.rows[0]), cache(man.rows[1])])
    assert enc.data.shape == (2, 128)
    with pytest.raises(ShapeError):
        model.encode([np.zeros((30, 40), dtype=np.float32)])


def test_split_overlap_rejected(setup):
    man, cache = setup
    model = VerificationModel(seed=3)
    with pytest.raises(ValueError, match="both"):
        train_verifier(model, man, man.speakers(), iterations=1, cache=cache)


def test_pair_sampler_balanced(setup):
    man, cache = setup
    rng = np.random.default_rng(0)
    pairs = sample_pairs(man, man.speakers(), rng, 64, cache)
    labels = [t for _, _, t in pairs]
    assert sum(labels) == 32


def test_training_learns_and_round_trips(setup, tmp_path):
    man, cache = setup
    model = VerificationModel(seed=5)
    val_ids = man.speakers()[-4:]
    history = train_verifier(model, man, val_ids, iterations=220, batch_size=48,
                             seed=2, eval_every=220, eval_trials=384, cache=cache)
    trained_eer = history["val_eer"][-1]
    assert trained_eer < 0.35  # far below chance on this separable corpus

    # positive pair of identical clips scores above the median negative score
    mel = cache(man.rows[0])
    rng = np.random.default_rng(3)
    pairs = sample_pairs(man, man.speakers(), rng, 64, cache)
    from fvk.autodiff import no_grad

    with no_grad():
        neg_scores = model.pair_logits(
            [[a] for a, _, t in pairs if t == 0.0],
            [b for _, b, t in pairs if t == 0.0],
        ).data
        same_score = float(model.pair_logits([[mel]], [mel]).data[0])
    assert same_score > np.median(neg_scores)

    path = tmp_path / "verifier.fvk"
    model.save(path)
    back = VerificationModel.load(path)
    a = model.encode([cache(man.rows[5])]).data
    b = back.encode([cache(man.rows[5])]).data
    assert np.array_equal(a, b)


def test_enrollment_groups_are_pooled(setup):
    man, cache = setup
    model = VerificationModel(seed=7)
    sid = man.speakers()[0]
    rows = man.rows_for(sid)
    mels = [cache(r) for r in rows[:3]]
    from fvk.autodiff import no_grad

    with no_grad():
        one = model.pair_logits([mels], [mels[0]]).data[0]
        rev = model.pair_logits([mels[::-1]], [mels[0]]).data[0]
    assert one == pytest.approx(rev, abs=1e-4)  # pooling over enrollment order
