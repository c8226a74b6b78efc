"""Speaker encoder: a set of cloning spectrograms -> one speaker embedding.

Per-clip features go through a fully-connected prenet and a gated-conv
temporal stack, are mean-pooled over time, then combined across the set by
multi-head self-attention followed by a learned convex weighting, so the
output is invariant to the order of the cloning samples. Separate encoder
instances are trained per cloning-set size.
"""

import logging

import numpy as np

from ..audio import encoder_frontend, mel_spectrogram
from ..autodiff import Adam, NumericsError, ShapeError, Tensor, no_grad, ops
from .common import ParamModel, load_entries, masked_mean_time, pad_batch, param, save_model
from .multispeaker import generative_loss, target_mel_for_row

log = logging.getLogger(__name__)


class SpeakerEncoderModel(ParamModel):
    def __init__(self, num_bands=80, prenet_width=128, conv_kernel=12, heads=2,
                 attn_width=128, embedding_dim=512, n_samples=5, use_attention=True,
                 seed=0):
        super().__init__()
        if attn_width % heads:
            raise ValueError("attn_width must divide evenly across heads")
        self.num_bands = num_bands
        self.width = prenet_width
        self.conv_kernel = conv_kernel
        self.heads = heads
        self.attn_width = attn_width
        self.embedding_dim = embedding_dim
        self.n_samples = n_samples
        self.use_attention = use_attention
        self.seed = seed

        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE2C0)))
        w = prenet_width
        self.add_param("pre1_w", param(rng, (num_bands, w), num_bands))
        self.add_param("pre1_b", param(rng, (w,), num_bands))
        self.add_param("pre2_w", param(rng, (w, w), w))
        self.add_param("pre2_b", param(rng, (w,), w))
        for i in (1, 2):
            self.add_param(f"conv{i}_w", param(rng, (conv_kernel, w, 2 * w), conv_kernel * w))
            self.add_param(f"conv{i}_b", param(rng, (2 * w,), conv_kernel * w))
        for name in ("wq", "wk", "wv", "wo"):
            self.add_param(f"attn_{name}", param(rng, (w, attn_width), w))
        self.add_param("score_w", param(rng, (w, 1), w))
        self.add_param("out_w", param(rng, (w, embedding_dim), w))
        self.add_param("out_b", param(rng, (embedding_dim,), w))

    # -- forward -----------------------------------------------------------

    def _clip_summaries(self, mels):
        """(B*N clips of shape (T,F)) -> (clips, width) pooled summaries."""
        for m in mels:
            if m.shape[1] != self.num_bands:
                raise ShapeError(
                    f"cloning sample has {m.shape[1]} bands, expected {self.num_bands}"
                )
        feats, mask_arr, lengths = pad_batch(list(mels))
        b, t, f = feats.shape
        mask = Tensor(mask_arr)

        x = ops.reshape(Tensor(feats), (b * t, f))
        x = ops.elu(ops.add(ops.matmul(x, self.params["pre1_w"]), self.params["pre1_b"]))
        x = ops.elu(ops.add(ops.matmul(x, self.params["pre2_w"]), self.params["pre2_b"]))
        h = ops.mul(ops.reshape(x, (b, t, self.width)), mask)

        for i in (1, 2):
            c = ops.glu(ops.conv1d(h, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"]))
            h = ops.mul(ops.add(h, c), mask)
        return masked_mean_time(h, mask, lengths)

    def _attend(self, summaries, n_sets, set_size):
        """Self-attention across each set plus convex per-sample weights."""
        b, n, w = n_sets, set_size, self.width
        dk = self.attn_width // self.heads
        if self.use_attention:
            flat = ops.reshape(summaries, (b * n, w))
            heads = []
            for name in ("wq", "wk", "wv"):
                proj = ops.matmul(flat, self.params[f"attn_{name}"])
                heads.append(ops.permute(ops.reshape(proj, (b, n, self.heads, dk)), (0, 2, 1, 3)))
            q, k, v = heads
            scores = ops.mul(ops.bmm(q, ops.permute(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
            attn = ops.softmax(scores, axis=-1)
            ctx = ops.permute(ops.bmm(attn, v), (0, 2, 1, 3))
            ctx = ops.matmul(ops.reshape(ctx, (b * n, self.attn_width)), self.params["attn_wo"])
            u = ops.add(summaries, ops.reshape(ctx, (b, n, w)))
            sc = ops.reshape(ops.matmul(ops.reshape(u, (b * n, w)), self.params["score_w"]), (b, n))
            weights = ops.softmax(sc, axis=1)
        else:
            u = summaries
            weights = Tensor(np.full((b, n), 1.0 / n, dtype=np.float32))
        combined = ops.total(ops.mul(u, ops.reshape(weights, (b, n, 1))), axis=1)
        emb = ops.add(ops.matmul(combined, self.params["out_w"]), self.params["out_b"])
        return emb, weights

    def forward_sets(self, mel_sets):
        """List of equally sized mel sets -> (embeddings (B,512), weights (B,n))."""
        if not mel_sets or any(len(s) == 0 for s in mel_sets):
            raise ShapeError("every cloning set must contain at least one sample")
        n = len(mel_sets[0])
        if any(len(s) != n for s in mel_sets):
            raise ShapeError("cloning sets in one batch must share their size")
        flat = [m for s in mel_sets for m in s]
        summaries = self._clip_summaries(flat)
        summaries = ops.reshape(summaries, (len(mel_sets), n, self.width))
        return self._attend(summaries, len(mel_sets), n)

    def encode(self, mels):
        """One cloning set -> (embedding (512,), per-sample weights (n,)).

        Clips are summarized one at a time and combined with element-order
        independent reductions, so bit-identical samples get bit-identical
        treatment (equal weights, and the same embedding as a single sample).
        """
        mels = list(mels)
        if not mels:
            raise ShapeError("cloning set is empty")
        with no_grad():
            rows = [self._clip_summaries([m]).data[0] for m in mels]
        s = np.stack(rows).astype(np.float32)  # (n, width)
        n = s.shape[0]
        if not self.use_attention:
            weights = np.full(n, 1.0 / n, dtype=np.float32)
            combined = weights @ s
            return combined @ self.params["out_w"].data + self.params["out_b"].data, weights
        dk = self.attn_width // self.heads
        q = np.einsum("nw,wa->na", s, self.params["attn_wq"].data)
        k = np.einsum("nw,wa->na", s, self.params["attn_wk"].data)
        v = np.einsum("nw,wa->na", s, self.params["attn_wv"].data)
        ctx = np.empty_like(q)
        for h in range(self.heads):
            sl = slice(h * dk, (h + 1) * dk)
            scores = np.einsum("id,jd->ij", q[:, sl], k[:, sl]) / np.float32(np.sqrt(dk))
            scores = scores - scores.max(axis=1, keepdims=True)
            e = np.exp(scores)
            attn = e / e.sum(axis=1, keepdims=True)
            ctx[:, sl] = np.einsum("ij,jd->id", attn, v[:, sl])
        u = s + np.einsum("na,aw->nw", ctx, self.params["attn_wo"].data)
        sc = np.einsum("nw,wk->nk", u, self.params["score_w"].data)[:, 0]
        sc = sc - sc.max()
        e = np.exp(sc)
        weights = (e / e.sum()).astype(np.float32)
        combined = np.einsum("n,nw->w", weights, u)
        emb = combined @ self.params["out_w"].data + self.params["out_b"].data
        return emb.astype(np.float32), weights

    # -- persistence ---------------------------------------------------------

    def config(self):
        return {
            "num_bands": self.num_bands,
            "prenet_width": self.width,
            "conv_kernel": self.conv_kernel,
            "heads": self.heads,
            "attn_width": self.attn_width,
            "embedding_dim": self.embedding_dim,
            "n_samples": self.n_samples,
            "use_attention": int(self.use_attention),
            "seed": self.seed,
        }

    def save(self, path):
        save_model(path, self, self.config())

    @classmethod
    def load(cls, path):
        entries, cfg = load_entries(path)
        model = cls(
            num_bands=int(cfg["num_bands"]),
            prenet_width=int(cfg["prenet_width"]),
            conv_kernel=int(cfg["conv_kernel"]),
            heads=int(cfg["heads"]),
            attn_width=int(cfg["attn_width"]),
            embedding_dim=int(cfg["embedding_dim"]),
            n_samples=int(cfg["n_samples"]),
            use_attention=bool(int(cfg["use_attention"])),
            seed=int(cfg.get("seed", 0)),
        )
        model.load_state_entries({k: v for k, v in entries.items() if k in model.params})
        return model


# ---------------------------------------------------------------------------
# training

class MelCache:
    """Lazy per-row mel spectrograms at the encoder frontend."""

    def __init__(self, manifest, cfg=None):
        self.manifest = manifest
        self.cfg = cfg or encoder_frontend()
        self._store = {}

    def __call__(self, row):
        if row not in self._store:
            self._store[row] = mel_spectrogram(self.manifest.load_clip(row), self.cfg).frames
        return self._store[row]


def sample_sets(manifest, speaker_ids, n_samples, sets_per_speaker, rng, cache):
    """Fixed evaluation sets: [(speaker_id, [mel, ...], [frame_counts])]."""
    sets = []
    for sid in speaker_ids:
        rows = manifest.rows_for(sid)
        if len(rows) < n_samples:
            continue
        for _ in range(sets_per_speaker):
            pick = rng.choice(len(rows), size=n_samples, replace=False)
            mels = [cache(rows[i]) for i in pick]
            sets.append((sid, mels, [m.shape[0] for m in mels]))
    return sets


def validation_mae(model, sets, targets, batch_size=32):
    """Mean absolute embedding error over fixed evaluation sets."""
    errors = []
    with no_grad():
        for start in range(0, len(sets), batch_size):
            chunk = sets[start : start + batch_size]
            emb, _ = model.forward_sets([mels for _, mels, _ in chunk])
            want = np.stack([targets[sid] for sid, _, _ in chunk])
            errors.append(np.abs(emb.data - want).mean(axis=1))
    return float(np.concatenate(errors).mean())


def train_encoder(
    model: SpeakerEncoderModel,
    manifest,
    target_embeddings,
    iterations=200,
    batch_size=64,
    lr=0.0006,
    anneal=0.6,
    anneal_interval=8000,
    seed=0,
    val_speakers=(),
    val_sets_per_speaker=4,
    eval_every=25,
    cache=None,
):
    """L1 regression onto embeddings extracted from the generative model.

    Each batch example is one training speaker with ``model.n_samples`` of its
    utterances drawn without replacement. Returns the MAE history.
    """
    n = model.n_samples
    cache = cache or MelCache(manifest)
    val_speakers = list(val_speakers)
    train_ids = []
    for sid in manifest.speakers():
        if sid in val_speakers:
            continue
        if sid not in target_embeddings:
            raise ValueError(f"no target embedding for training speaker {sid}")
        if len(manifest.rows_for(sid)) < n:
            log.warning("speaker %s has fewer than %d utterances; skipped", sid, n)
            continue
        train_ids.append(sid)
    if not train_ids:
        raise ValueError("no usable training speakers")

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE2C1)))
    val_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE2C2)))
    val_sets = sample_sets(manifest, val_speakers, n, val_sets_per_speaker, val_rng, cache)

    opt = Adam(model.params, lr=lr, anneal=anneal, anneal_interval=anneal_interval)
    history = {"iteration": [], "train_l1": [], "val_mae": []}
    if val_sets:
        history["iteration"].append(0)
        history["train_l1"].append(float("nan"))
        history["val_mae"].append(validation_mae(model, val_sets, target_embeddings))
    rows_by_id = {sid: manifest.rows_for(sid) for sid in train_ids}
    for it in range(1, iterations + 1):
        chosen = rng.choice(len(train_ids), size=batch_size, replace=True)
        mel_sets, want = [], []
        for ci in chosen:
            sid = train_ids[ci]
            rows = rows_by_id[sid]
            pick = rng.choice(len(rows), size=n, replace=False)
            mel_sets.append([cache(rows[i]) for i in pick])
            want.append(target_embeddings[sid])
        emb, _ = model.forward_sets(mel_sets)
        loss = ops.l1_loss(emb, Tensor(np.stack(want)))
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericsError(f"non-finite encoder loss at iteration {it}")
        model.zero_grad()
        loss.backward()
        opt.step()
        if val_sets and (it % eval_every == 0 or it == iterations):
            history["iteration"].append(it)
            history["train_l1"].append(value)
            history["val_mae"].append(validation_mae(model, val_sets, target_embeddings))
    return history


def joint_finetune(
    gen_model,
    enc_model: SpeakerEncoderModel,
    manifest,
    iterations=50,
    batch_size=16,
    lr=0.0002,
    seed=0,
    lambda_amp=1.0,
    tau_amp=2.0,
    cache=None,
):
    """Fine-tune generator and encoder together on the composed spectrogram loss.

    The generator consumes encoder-estimated embeddings, so spectrogram
    gradients reach both parameter sets. Both models are pre-trained; this
    pass lets the generator absorb residual embedding-estimation error.
    """
    if enc_model.embedding_dim != gen_model.embedding_dim:
        raise ShapeError(
            f"encoder embedding width {enc_model.embedding_dim} does not match "
            f"generative model width {gen_model.embedding_dim}"
        )
    n = enc_model.n_samples
    cache = cache or MelCache(manifest)
    ids = [sid for sid in manifest.speakers() if len(manifest.rows_for(sid)) > n]
    if not ids:
        raise ValueError("no speaker has enough utterances for joint fine-tuning")
    rows_by_id = {sid: manifest.rows_for(sid) for sid in ids}

    params = {f"gen.{k}": v for k, v in gen_model.params.items() if k != "emb_table"}
    params.update({f"enc.{k}": v for k, v in enc_model.params.items()})
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x10E7)))
    losses = []
    for it in range(1, iterations + 1):
        chosen = rng.choice(len(ids), size=min(batch_size, len(ids)), replace=False)
        mel_sets, texts, targets = [], [], []
        for ci in chosen:
            sid = ids[ci]
            rows = rows_by_id[sid]
            pick = rng.choice(len(rows), size=n + 1, replace=False)
            mel_sets.append([cache(rows[i]) for i in pick[:-1]])
            target_row = rows[pick[-1]]
            texts.append(target_row.text)
            targets.append(target_mel_for_row(manifest, target_row))
        emb, _ = enc_model.forward_sets(mel_sets)
        pred, mask, _ = gen_model.decode(texts, emb)
        padded, _, _ = pad_batch(targets)
        loss = generative_loss(pred, padded, mask=mask, lambda_amp=lambda_amp, tau_amp=tau_amp)
        value = float(loss.total.data)
        if not np.isfinite(value):
            raise NumericsError(f"non-finite fine-tune loss at iteration {it}")
        for p in params.values():
            p.grad = None
        loss.total.backward()
        opt.step()
        losses.append(value)
    return losses
