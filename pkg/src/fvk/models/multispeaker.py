"""Multi-speaker generative model: text + speaker embedding -> log-mel frames.

A duration-expanded gated-convolution decoder with a jointly trained
speaker-embedding table. Speaker identity conditions every decoder layer
through gain and bias vectors projected from the embedding, so synthesis is
differentiable with respect to both the shared weights and the embedding.
"""

import logging
from dataclasses import dataclass

import numpy as np

from ..audio import MelSpectrogram, generative_frontend, mel_spectrogram
from ..autodiff import Adam, NumericsError, ShapeError, Tensor, no_grad, ops
from ..corpus import SYMBOL_DURATIONS, TextSequence
from .common import ParamModel, load_entries, masked_mean_time, pad_batch, param, save_model

log = logging.getLogger(__name__)

EMBEDDING_INIT_STD = 0.1


@dataclass
class GenerativeLoss:
    """L1 spectrogram regression plus a superlinear penalty on large residuals."""

    total: Tensor
    l1_term: Tensor
    amplitude_term: Tensor
    lambda_amp: float
    tau_amp: float


def generative_loss(pred, target, mask=None, lambda_amp=1.0, tau_amp=2.0):
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=np.float32))
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"generative_loss: prediction {pred.data.shape} vs target {target.data.shape}"
        )
    resid = ops.absolute(ops.sub(pred, target))
    excess = ops.square(ops.relu(ops.sub(resid, tau_amp)))
    if mask is None:
        l1 = ops.mean(resid)
        amp = ops.mean(excess)
    else:
        denom = float(mask.data.sum()) * pred.data.shape[-1]
        l1 = ops.mul(ops.total(ops.mul(resid, mask)), 1.0 / denom)
        amp = ops.mul(ops.total(ops.mul(excess, mask)), 1.0 / denom)
    total = ops.add(l1, ops.mul(amp, lambda_amp))
    return GenerativeLoss(total, l1, amp, lambda_amp, tau_amp)


class MultiSpeakerModel(ParamModel):
    def __init__(self, speaker_ids, embedding_dim=128, symbol_dim=32, hidden=64,
                 kernel=5, num_bands=80, seed=0):
        super().__init__()
        self.speaker_ids = list(speaker_ids)
        self.index = {s: i for i, s in enumerate(self.speaker_ids)}
        self.embedding_dim = embedding_dim
        self.symbol_dim = symbol_dim
        self.hidden = hidden
        self.kernel = kernel
        self.num_bands = num_bands
        self.seed = seed

        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x3D0D)))
        n_sym = len(SYMBOL_DURATIONS)
        self.add_param("sym_table", param(rng, (n_sym, symbol_dim), symbol_dim))
        self.add_param("pos_proj", param(rng, (2, symbol_dim), 2))
        self.add_param("conv1_w", param(rng, (kernel, symbol_dim, 2 * hidden), kernel * symbol_dim))
        self.add_param("conv1_b", param(rng, (2 * hidden,), kernel * symbol_dim))
        self.add_param("conv2_w", param(rng, (kernel, hidden, 2 * hidden), kernel * hidden))
        self.add_param("conv2_b", param(rng, (2 * hidden,), kernel * hidden))
        for layer in (1, 2):
            self.add_param(f"cond{layer}_gain", param(rng, (embedding_dim, hidden), embedding_dim))
            self.add_param(f"cond{layer}_bias", param(rng, (embedding_dim, hidden), embedding_dim))
        self.add_param("proj_w", param(rng, (hidden, num_bands), hidden))
        self.add_param("proj_b", param(rng, (num_bands,), hidden))
        table = rng.normal(0.0, EMBEDDING_INIT_STD, size=(len(self.speaker_ids), embedding_dim))
        self.add_param("emb_table", Tensor(table.astype(np.float32)))

    # -- text expansion ----------------------------------------------------

    @staticmethod
    def expand_text(text: TextSequence):
        """Frame-level symbol indices plus positional features (T, 2)."""
        ids = np.asarray(text.symbols, dtype=np.int64)
        durs = SYMBOL_DURATIONS[ids]
        flat = np.repeat(ids, durs)
        within = np.concatenate([np.arange(d) / d for d in durs])
        t = flat.size
        pos = np.stack([within, np.arange(t) / t], axis=1).astype(np.float32)
        return flat, pos

    # -- forward -----------------------------------------------------------

    def decode(self, texts, embeddings: Tensor):
        """Batched synthesis; returns (pred (B,T,bands) Tensor, mask, lengths)."""
        if embeddings.data.ndim != 2 or embeddings.data.shape[1] != self.embedding_dim:
            raise ShapeError(
                f"embedding width {embeddings.data.shape} does not match "
                f"model dimension {self.embedding_dim}"
            )
        expanded = [self.expand_text(t) for t in texts]
        feats, mask_arr, lengths = pad_batch([p for _, p in expanded])
        b, t_max, _ = feats.shape
        idx = np.zeros((b, t_max), dtype=np.int64)
        for i, (flat, _) in enumerate(expanded):
            idx[i, : flat.size] = flat
        mask = Tensor(mask_arr)

        sym = ops.gather_rows(self.params["sym_table"], idx.reshape(-1))
        sym = ops.reshape(sym, (b, t_max, self.symbol_dim))
        pos = ops.matmul(Tensor(feats.reshape(b * t_max, 2)), self.params["pos_proj"])
        x = ops.add(sym, ops.reshape(pos, (b, t_max, self.symbol_dim)))
        x = ops.mul(x, mask)

        h = ops.glu(ops.conv1d(x, self.params["conv1_w"], self.params["conv1_b"]))
        h = self._condition(h, embeddings, 1, b)
        h = ops.mul(h, mask)

        h2 = ops.glu(ops.conv1d(h, self.params["conv2_w"], self.params["conv2_b"]))
        h2 = self._condition(h2, embeddings, 2, b)
        h = ops.mul(ops.add(h, h2), mask)

        flat_h = ops.reshape(h, (b * t_max, self.hidden))
        out = ops.add(ops.matmul(flat_h, self.params["proj_w"]), self.params["proj_b"])
        pred = ops.mul(ops.reshape(out, (b, t_max, self.num_bands)), mask)
        return pred, mask, lengths

    def _condition(self, h, embeddings, layer, batch):
        gain = ops.matmul(embeddings, self.params[f"cond{layer}_gain"])
        bias = ops.matmul(embeddings, self.params[f"cond{layer}_bias"])
        gain = ops.reshape(gain, (batch, 1, self.hidden))
        bias = ops.reshape(bias, (batch, 1, self.hidden))
        return ops.add(ops.mul(h, ops.add(gain, 1.0)), bias)

    def embedding_for(self, speaker_id) -> np.ndarray:
        return self.params["emb_table"].data[self.index[speaker_id]].copy()

    def synthesize(self, text: TextSequence, embedding) -> MelSpectrogram:
        """Deterministic mel frames for one text under one speaker embedding."""
        if not isinstance(embedding, Tensor):
            embedding = Tensor(np.asarray(embedding, dtype=np.float32).reshape(1, -1))
        cfg = generative_frontend()
        with no_grad():
            pred, _, lengths = self.decode([text], embedding)
        frames = pred.data[0, : lengths[0]]
        return MelSpectrogram(frames, cfg.hop_length, cfg.window_size, self.num_bands)

    # -- persistence ---------------------------------------------------------

    def config(self):
        return {
            "embedding_dim": self.embedding_dim,
            "symbol_dim": self.symbol_dim,
            "hidden": self.hidden,
            "kernel": self.kernel,
            "num_bands": self.num_bands,
            "seed": self.seed,
        }

    def save(self, path):
        entries = {k: v for k, v in self.state_entries().items() if k != "emb_table"}
        table = self.params["emb_table"].data
        for i, sid in enumerate(self.speaker_ids):
            entries[f"embedding/{sid}"] = table[i]
        save_model(path, _Raw(entries), self.config())

    @classmethod
    def load(cls, path):
        entries, cfg = load_entries(path)
        speaker_ids = [k[len("embedding/"):] for k in entries if k.startswith("embedding/")]
        model = cls(
            speaker_ids,
            embedding_dim=int(cfg["embedding_dim"]),
            symbol_dim=int(cfg["symbol_dim"]),
            hidden=int(cfg["hidden"]),
            kernel=int(cfg["kernel"]),
            num_bands=int(cfg["num_bands"]),
            seed=int(cfg.get("seed", 0)),
        )
        table = np.stack([entries[f"embedding/{sid}"] for sid in speaker_ids])
        state = {k: v for k, v in entries.items() if k in model.params}
        state["emb_table"] = table
        model.load_state_entries(state)
        return model


class _Raw:
    """Adapter so save_model can write an explicit entry dict."""

    def __init__(self, entries):
        self._entries = entries

    def state_entries(self):
        return self._entries


# ---------------------------------------------------------------------------
# training

def target_mel_for_row(manifest, row, cfg=None):
    """Ground-truth mel aligned to the text's nominal frame count."""
    cfg = cfg or generative_frontend()
    mel = mel_spectrogram(manifest.load_clip(row), cfg).frames
    want = row.text.nominal_frames
    if mel.shape[0] >= want:
        return mel[:want]
    pad = np.full((want - mel.shape[0], mel.shape[1]), cfg.log_floor, dtype=np.float32)
    return np.concatenate([mel, pad], axis=0)


def _dataset(manifest):
    return [
        (row.speaker_id, row.text, target_mel_for_row(manifest, row))
        for row in manifest.rows
    ]


def train_multispeaker(
    model: MultiSpeakerModel,
    train_manifest,
    val_manifest=None,
    epochs=40,
    batch_size=64,
    lr=0.0006,
    anneal=0.6,
    anneal_interval=8000,
    lambda_amp=1.0,
    tau_amp=2.0,
    seed=0,
    checkpoint_path=None,
):
    """Joint optimization of decoder weights and the speaker-embedding table."""
    missing = set(train_manifest.speakers()) - set(model.speaker_ids)
    if missing:
        raise ValueError(f"model has no embeddings for speakers {sorted(missing)}")
    data = _dataset(train_manifest)
    if not data:
        raise ValueError("train manifest is empty")
    val_data = _dataset(val_manifest) if val_manifest else None

    opt = Adam(model.params, lr=lr, anneal=anneal, anneal_interval=anneal_interval)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7EA1)))
    history = {"train": [], "validation": []}
    iteration = 0
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            batch = [data[i] for i in order[start : start + batch_size]]
            loss = _batch_loss(model, batch, lambda_amp, tau_amp)
            value = float(loss.total.data)
            if not np.isfinite(value):
                raise NumericsError(f"non-finite training loss at iteration {iteration}")
            model.zero_grad()
            loss.total.backward()
            opt.step()
            epoch_losses.append(value)
            iteration += 1
        history["train"].append(float(np.mean(epoch_losses)))
        if val_data:
            history["validation"].append(evaluate_loss(model, val_data, lambda_amp, tau_amp))
            log.info(
                "epoch %d train %.4f val %.4f",
                epoch, history["train"][-1], history["validation"][-1],
            )
        else:
            log.info("epoch %d train %.4f", epoch, history["train"][-1])
    if checkpoint_path is not None:
        model.save(checkpoint_path)
    return history


def _batch_loss(model, batch, lambda_amp, tau_amp):
    spk_idx = np.array([model.index[sid] for sid, _, _ in batch], dtype=np.int64)
    texts = [text for _, text, _ in batch]
    targets, t_mask, _ = pad_batch([mel for _, _, mel in batch])
    emb = ops.gather_rows(model.params["emb_table"], spk_idx)
    pred, mask, _ = model.decode(texts, emb)
    return generative_loss(pred, targets, mask=mask, lambda_amp=lambda_amp, tau_amp=tau_amp)


def evaluate_loss(model, data, lambda_amp=1.0, tau_amp=2.0, batch_size=64):
    values = []
    weights = []
    with no_grad():
        for start in range(0, len(data), batch_size):
            batch = data[start : start + batch_size]
            loss = _batch_loss(model, batch, lambda_amp, tau_amp)
            values.append(float(loss.total.data))
            weights.append(len(batch))
    return float(np.average(values, weights=weights))


def extract_embeddings(model: MultiSpeakerModel):
    """Read-only copies of every trained speaker embedding."""
    table = model.params["emb_table"].data
    return {sid: table[i].copy() for i, sid in enumerate(model.speaker_ids)}
