"""Cloning an unseen speaker: gradient adaptation and encoder-based estimation.

Embedding-only adaptation fits just the new speaker's embedding against the
frozen base model; whole-model adaptation fine-tunes everything with early
stopping on a held-out cloning pair. Both start from the mean of the trained
speaker embeddings. ``clone`` wraps the three methods behind one call and
reports cloning time and the per-speaker parameter footprint.
"""

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip, generative_frontend, invert_mel, mel_spectrogram
from .autodiff import Adam, NumericsError, Tensor, no_grad, ops
from .corpus import TextSequence
from .models.multispeaker import MultiSpeakerModel, generative_loss
from .models.common import pad_batch

log = logging.getLogger(__name__)

EMBEDDING_ONLY = "embedding_only"
WHOLE_MODEL = "whole_model"


class AdaptationError(ValueError):
    pass


@dataclass
class AdaptationJob:
    mode: str
    pairs: list  # [(TextSequence, aligned target mel (frames, bands))]
    max_iterations: int = 1000
    patience: int = 3
    learning_rate: float = 0.05
    eval_every: int = 20
    early_stopping: bool = True
    seed: int = 0
    lambda_amp: float = 1.0
    tau_amp: float = 2.0

    def __post_init__(self):
        if self.mode not in (EMBEDDING_ONLY, WHOLE_MODEL):
            raise AdaptationError(f"unknown adaptation mode {self.mode!r}")
        if not self.pairs:
            raise AdaptationError("cloning pair set is empty")


@dataclass
class AdaptationResult:
    mode: str
    embedding: np.ndarray
    model: MultiSpeakerModel
    loss_trace: list
    stop_reason: str
    iterations: int
    seconds: float = 0.0


def align_mel_to_text(mel_frames, text: TextSequence, log_floor):
    """Pad or trim ground-truth mel frames to the text's nominal frame count."""
    want = text.nominal_frames
    if mel_frames.shape[0] >= want:
        return np.asarray(mel_frames[:want], dtype=np.float32)
    pad = np.full((want - mel_frames.shape[0], mel_frames.shape[1]), log_floor, np.float32)
    return np.concatenate([np.asarray(mel_frames, dtype=np.float32), pad], axis=0)


def pairs_from_clips(clips, texts):
    """Build adaptation pairs from raw audio and matching transcripts."""
    if len(clips) != len(texts):
        raise AdaptationError(f"{len(clips)} clips but {len(texts)} transcripts")
    cfg = generative_frontend()
    pairs = []
    for clip, text in zip(clips, texts):
        mel = mel_spectrogram(clip, cfg).frames
        pairs.append((text, align_mel_to_text(mel, text, cfg.log_floor)))
    return pairs


def _pairs_loss(model, embedding, pairs, lambda_amp, tau_amp):
    texts = [t for t, _ in pairs]
    targets, _, _ = pad_batch([m for _, m in pairs])
    emb = embedding if embedding.data.shape[0] == len(pairs) else _tile(embedding, len(pairs))
    pred, mask, _ = model.decode(texts, emb)
    return generative_loss(pred, targets, mask=mask,
                           lambda_amp=lambda_amp, tau_amp=tau_amp).total


def _tile(embedding, n):
    ones = Tensor(np.ones((n, 1), dtype=np.float32))
    return ops.mul(ones, embedding)


def mean_embedding(model: MultiSpeakerModel):
    return model.params["emb_table"].data.mean(axis=0)


def adapt_embedding(base_model: MultiSpeakerModel, job: AdaptationJob) -> AdaptationResult:
    """Fit only the new speaker's embedding; the base weights stay frozen.

    Plain gradient descent with step halving on any loss increase, so the
    accepted-loss trace is non-increasing by construction.
    """
    if job.mode != EMBEDDING_ONLY:
        raise AdaptationError(f"job mode is {job.mode!r}, expected {EMBEDDING_ONLY!r}")
    t0 = time.perf_counter()
    e = Tensor(mean_embedding(base_model).reshape(1, -1), requires_grad=True)
    frozen = list(base_model.params.values())
    flags = [p.requires_grad for p in frozen]
    for p in frozen:
        p.requires_grad = False
    lr = job.learning_rate
    try:
        loss = _pairs_loss(base_model, e, job.pairs, job.lambda_amp, job.tau_amp)
        current = float(loss.data)
        trace = [current]
        stop_reason = "max_iterations"
        iterations = 0
        for it in range(job.max_iterations):
            iterations = it + 1
            e.grad = None
            loss.backward()
            if not np.all(np.isfinite(e.grad)):
                raise NumericsError(f"non-finite embedding gradient at iteration {it}")
            proposal = Tensor(e.data - lr * e.grad, requires_grad=True)
            new_loss = _pairs_loss(base_model, proposal, job.pairs,
                                   job.lambda_amp, job.tau_amp)
            new_value = float(new_loss.data)
            if new_value <= current:
                e, loss, current = proposal, new_loss, new_value
                trace.append(current)
            else:
                lr *= 0.5  # keep the current point; its graph is still valid
                if lr < 1e-12:
                    stop_reason = "step_collapsed"
                    break
    finally:
        for p, flag in zip(frozen, flags):
            p.requires_grad = flag
    return AdaptationResult(
        mode=EMBEDDING_ONLY,
        embedding=e.data[0].copy(),
        model=base_model,
        loss_trace=trace,
        stop_reason=stop_reason,
        iterations=iterations,
        seconds=time.perf_counter() - t0,
    )


def adapt_whole_model(base_model: MultiSpeakerModel, job: AdaptationJob) -> AdaptationResult:
    """Fine-tune a private copy of the whole model plus the new embedding."""
    if job.mode != WHOLE_MODEL:
        raise AdaptationError(f"job mode is {job.mode!r}, expected {WHOLE_MODEL!r}")
    if job.early_stopping and len(job.pairs) < 2:
        raise AdaptationError("early stopping needs >= 2 cloning pairs (one is held out)")
    t0 = time.perf_counter()
    model = copy.deepcopy(base_model)

    rng = np.random.default_rng(np.random.SeedSequence((job.seed, 0xADA7)))
    pairs = list(job.pairs)
    if job.early_stopping:
        held_idx = int(rng.integers(len(pairs)))
        held = [pairs[held_idx]]
        pairs = [p for i, p in enumerate(pairs) if i != held_idx]
    else:
        held = []

    e = Tensor(mean_embedding(model).reshape(1, -1), requires_grad=True)
    params = {k: v for k, v in model.params.items() if k != "emb_table"}
    params["new_embedding"] = e
    opt = Adam(params, lr=job.learning_rate)

    best = np.inf
    best_state = None
    bad_checks = 0
    trace = []
    stop_reason = "max_iterations"
    iterations = 0
    for it in range(1, job.max_iterations + 1):
        iterations = it
        loss = _pairs_loss(model, e, pairs, job.lambda_amp, job.tau_amp)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericsError(f"non-finite adaptation loss at iteration {it}")
        trace.append(value)
        for p in params.values():
            p.grad = None
        loss.backward()
        opt.step()
        if held and it % job.eval_every == 0:
            with no_grad():
                held_loss = float(
                    _pairs_loss(model, e, held, job.lambda_amp, job.tau_amp).data
                )
            if held_loss < best - 1e-6:
                best = held_loss
                best_state = ({k: p.data.copy() for k, p in params.items()})
                bad_checks = 0
            else:
                bad_checks += 1
                if bad_checks >= job.patience:
                    stop_reason = "early_stop"
                    break
    if best_state is not None:
        for k, p in params.items():
            p.data = best_state[k]
    return AdaptationResult(
        mode=WHOLE_MODEL,
        embedding=e.data[0].copy(),
        model=model,
        loss_trace=trace,
        stop_reason=stop_reason,
        iterations=iterations,
        seconds=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# unified cloning entry point

METHOD_ADAPT_EMBEDDING = "adapt_embedding"
METHOD_ADAPT_WHOLE = "adapt_whole"
METHOD_ENCODER = "encoder"
METHODS = (METHOD_ADAPT_EMBEDDING, METHOD_ADAPT_WHOLE, METHOD_ENCODER)


@dataclass
class CloneReport:
    method: str
    embedding: np.ndarray
    model: MultiSpeakerModel
    mels: list
    cloning_seconds: float
    params_per_speaker: int
    clips: list = field(default_factory=list)
    detail: AdaptationResult = None


def clone(
    base_model: MultiSpeakerModel,
    method: str,
    eval_texts,
    cloning_clips=None,
    cloning_texts=None,
    encoder=None,
    waveforms=False,
    gl_iterations=60,
    job_kwargs=None,
) -> CloneReport:
    """Clone one speaker with the chosen method and synthesize the eval texts.

    Adaptation methods need transcripts for the cloning audio; the encoder
    path needs a trained speaker encoder (audio only, but audio is required).
    """
    if method not in METHODS:
        raise AdaptationError(f"unknown cloning method {method!r}; pick from {METHODS}")
    if not cloning_clips:
        raise AdaptationError("cloning audio samples are required for every method")
    job_kwargs = dict(job_kwargs or {})
    detail = None
    t0 = time.perf_counter()
    if method == METHOD_ENCODER:
        if encoder is None:
            raise AdaptationError("encoder method needs a trained speaker encoder")
        from .audio import encoder_frontend

        mels = [mel_spectrogram(c, encoder_frontend()).frames for c in cloning_clips]
        embedding, _ = encoder.encode(mels)
        model = base_model
        footprint = encoder.embedding_dim
    else:
        if cloning_texts is None:
            raise AdaptationError(
                "adaptation methods need transcripts for the cloning audio"
            )
        pairs = pairs_from_clips(cloning_clips, cloning_texts)
        if method == METHOD_ADAPT_EMBEDDING:
            job = AdaptationJob(mode=EMBEDDING_ONLY, pairs=pairs, **job_kwargs)
            detail = adapt_embedding(base_model, job)
            footprint = base_model.embedding_dim
        else:
            job_kwargs.setdefault("early_stopping", len(pairs) >= 2)
            job = AdaptationJob(mode=WHOLE_MODEL, pairs=pairs, **job_kwargs)
            detail = adapt_whole_model(base_model, job)
            footprint = detail.model.parameter_count()
        embedding = detail.embedding
        model = detail.model
    seconds = time.perf_counter() - t0

    mels = [model.synthesize(t, embedding) for t in eval_texts]
    clips = []
    if waveforms:
        cfg = generative_frontend()
        clips = [invert_mel(m, cfg, iterations=gl_iterations) for m in mels]
    return CloneReport(
        method=method,
        embedding=np.asarray(embedding),
        model=model,
        mels=mels,
        cloning_seconds=seconds,
        params_per_speaker=int(footprint),
        clips=clips,
        detail=detail,
    )
