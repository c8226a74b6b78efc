import numpy as np
import pytest

from fvk import corpus
from fvk.autodiff import NumericsError, ShapeError, Tensor
from fvk.models.multispeaker import (
    MultiSpeakerModel,
    _dataset,
    evaluate_loss,
    extract_embeddings,
    generative_loss,
    train_multispeaker,
)

from conftest import assert_grads_match


@pytest.fixture(scope="module")
def small_setup(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("corpus")
    speakers = corpus.sample_speakers(10, seed=21)
    manifests = corpus.build_corpus(speakers, 22, tmp, seed=21, validation_per_speaker=2)
    model = MultiSpeakerModel([s.speaker_id for s in speakers], embedding_dim=64, seed=5)
    history = train_multispeaker(
        model, manifests["train"], manifests["validation"], epochs=40, seed=6
    )
    return speakers, manifests, model, history


def test_synthesize_duration_contract():
    model = MultiSpeakerModel(["a", "b"], embedding_dim=16, seed=0)
    text = corpus.TextSequence((0, 3, 7))
    mel = model.synthesize(text, model.embedding_for("a"))
    assert mel.frames.shape == (text.nominal_frames, 80)


def test_synthesize_dimension_mismatch():
    model = MultiSpeakerModel(["a", "b"], embedding_dim=16, seed=0)
    with pytest.raises(ShapeError):
        model.synthesize(corpus.TextSequence((1,)), np.zeros(8, dtype=np.float32))


def test_zero_parameter_model_outputs_zero():
    model = MultiSpeakerModel(["a"], embedding_dim=16, seed=0)
    for p in model.params.values():
        p.data = np.zeros_like(p.data)
    mel = model.synthesize(corpus.TextSequence((2, 2)), model.embedding_for("a"))
    assert np.all(mel.frames == 0.0)


def test_generative_loss_examples():
    pred = Tensor(np.zeros((3, 4), dtype=np.float32))
    target = Tensor(np.full((3, 4), -1.0, dtype=np.float32))
    gl = generative_loss(pred, target, lambda_amp=1.0, tau_amp=0.5)
    assert float(gl.l1_term.data) == pytest.approx(1.0)
    assert float(gl.amplitude_term.data) == pytest.approx(0.25)
    assert float(gl.total.data) == pytest.approx(1.25)

    same = generative_loss(pred, Tensor(np.zeros((3, 4), dtype=np.float32)))
    assert float(same.total.data) == 0.0

    with pytest.raises(ShapeError):
        generative_loss(pred, Tensor(np.zeros((2, 4), dtype=np.float32)))


def test_generative_loss_grads(rng):
    pred = Tensor(rng.standard_normal((4, 6)) * 2, requires_grad=True, dtype=np.float64)
    target = Tensor(rng.standard_normal((4, 6)), dtype=np.float64)

    def build():
        return generative_loss(pred, target, lambda_amp=1.0, tau_amp=0.7).total

    assert_grads_match(build, [pred])


def test_synthesis_differentiable_wrt_embedding_and_weights(rng):
    model = MultiSpeakerModel(["a"], embedding_dim=6, symbol_dim=5, hidden=4, seed=1)
    for p in model.params.values():
        p.data = p.data.astype(np.float64)
    emb = Tensor(rng.standard_normal((1, 6)) * 0.3, requires_grad=True, dtype=np.float64)
    text = corpus.TextSequence((1, 4))
    target = Tensor(rng.standard_normal((1, text.nominal_frames, 80)), dtype=np.float64)

    def build():
        pred, mask, _ = model.decode([text], emb)
        return generative_loss(pred, target, mask=mask, tau_amp=0.5).total

    params = [emb, model.params["conv1_w"], model.params["cond1_gain"], model.params["proj_w"]]
    assert_grads_match(build, params)


def test_training_halves_loss(small_setup):
    _, _, _, history = small_setup
    assert history["train"][-1] < 0.5 * history["train"][0]


def test_conditioning_beats_permuted_embeddings(small_setup):
    speakers, manifests, model, _ = small_setup
    val = _dataset(manifests["validation"])
    own = evaluate_loss(model, val)
    ids = model.speaker_ids
    swap = dict(zip(ids, np.roll(ids, 3)))
    permuted = evaluate_loss(model, [(swap[sid], t, m) for sid, t, m in val])
    assert own < permuted


def test_same_gender_embeddings_closer(small_setup):
    speakers, _, model, _ = small_setup
    emb = extract_embeddings(model)
    gender = {s.speaker_id: s.gender_label for s in speakers}

    def cos(a, b):
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12))

    same, cross = [], []
    ids = list(emb)
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            bucket = same if gender[ids[i]] == gender[ids[j]] else cross
            bucket.append(cos(emb[ids[i]], emb[ids[j]]))
    assert np.mean(same) > np.mean(cross)


def test_two_embeddings_same_text_differ(small_setup):
    _, _, model, _ = small_setup
    text = corpus.TextSequence((4, 9, 17))
    a = model.synthesize(text, model.embedding_for(model.speaker_ids[0]))
    b = model.synthesize(text, model.embedding_for(model.speaker_ids[1]))
    assert not np.allclose(a.frames, b.frames, atol=1e-3)


def test_extract_embeddings_contracts(small_setup):
    _, _, model, _ = small_setup
    emb = extract_embeddings(model)
    assert set(emb) == set(model.speaker_ids)
    again = extract_embeddings(model)
    for sid in emb:
        assert emb[sid].shape == (model.embedding_dim,)
        assert np.array_equal(emb[sid], again[sid])
    emb[model.speaker_ids[0]][:] = 0.0  # copies only
    assert not np.all(model.params["emb_table"].data[0] == 0.0)


def test_checkpoint_round_trip_synthesis(small_setup, tmp_path):
    _, _, model, _ = small_setup
    path = tmp_path / "model.fvk"
    model.save(path)
    back = MultiSpeakerModel.load(path)
    text = corpus.TextSequence((3, 11, 25))
    a = model.synthesize(text, model.embedding_for(model.speaker_ids[2]))
    b = back.synthesize(text, back.embedding_for(model.speaker_ids[2]))
    assert np.array_equal(a.frames, b.frames)


def test_overfit_single_utterance(tmp_path):
    speakers = corpus.sample_speakers(2, seed=31)
    manifests = corpus.build_corpus(speakers, 1, tmp_path / "c", seed=31)
    model = MultiSpeakerModel([s.speaker_id for s in speakers], embedding_dim=16, seed=2)
    history = train_multispeaker(
        model, manifests["train"], epochs=500, batch_size=2, lr=0.002, seed=3
    )
    assert history["train"][-1] < 0.05 * history["train"][0]
    assert history["train"][-1] < 0.3


def test_nan_loss_aborts_with_iteration(tmp_path):
    speakers = corpus.sample_speakers(2, seed=32)
    manifests = corpus.build_corpus(speakers, 2, tmp_path / "c", seed=32)
    model = MultiSpeakerModel([s.speaker_id for s in speakers], embedding_dim=8, seed=2)
    model.params["proj_w"].data[0, 0] = np.nan
    with pytest.raises(NumericsError, match="iteration"):
        train_multispeaker(model, manifests["train"], epochs=1, seed=0)


def test_unknown_speaker_rejected(tmp_path):
    speakers = corpus.sample_speakers(2, seed=33)
    manifests = corpus.build_corpus(speakers, 2, tmp_path / "c", seed=33)
    model = MultiSpeakerModel(["other"], embedding_dim=8, seed=2)
    with pytest.raises(ValueError, match="no embeddings"):
        train_multispeaker(model, manifests["train"], epochs=1, seed=0)
