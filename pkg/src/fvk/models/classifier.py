"""Speaker classifier used to grade cloned audio against the cloning pool."""

import logging

import numpy as np

from ..audio import encoder_frontend, mel_spectrogram
from ..autodiff import Adam, NumericsError, ShapeError, Tensor, no_grad, ops
from .common import ParamModel, load_entries, masked_mean_time, pad_batch, param, save_model

log = logging.getLogger(__name__)


class SpeakerClassifier(ParamModel):
    """FC frontend, six gated-conv layers, small bottleneck, softmax over speakers."""

    def __init__(self, speaker_ids, num_bands=80, fc_width=256, conv_layers=6,
                 conv_kernel=4, bottleneck=32, seed=0):
        super().__init__()
        if len(speaker_ids) < 2:
            raise ValueError("classifier needs at least 2 speakers")
        self.speaker_ids = list(speaker_ids)
        self.index = {s: i for i, s in enumerate(self.speaker_ids)}
        self.num_bands = num_bands
        self.fc_width = fc_width
        self.conv_layers = conv_layers
        self.conv_kernel = conv_kernel
        self.bottleneck = bottleneck
        self.seed = seed

        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC1A5)))
        w = fc_width
        self.add_param("fc_w", param(rng, (num_bands, w), num_bands))
        self.add_param("fc_b", param(rng, (w,), num_bands))
        for i in range(conv_layers):
            self.add_param(f"conv{i}_w", param(rng, (conv_kernel, w, 2 * w), conv_kernel * w))
            self.add_param(f"conv{i}_b", param(rng, (2 * w,), conv_kernel * w))
        self.add_param("emb_w", param(rng, (w, bottleneck), w))
        self.add_param("emb_b", param(rng, (bottleneck,), w))
        self.add_param("soft_w", param(rng, (bottleneck, len(self.speaker_ids)), bottleneck))
        self.add_param("soft_b", param(rng, (len(self.speaker_ids),), bottleneck))

    def logits(self, mels):
        """Variable-length mel batch -> (B, n_speakers) pre-softmax scores."""
        for m in mels:
            if m.shape[1] != self.num_bands:
                raise ShapeError(f"input has {m.shape[1]} bands, expected {self.num_bands}")
        feats, mask_arr, lengths = pad_batch(list(mels))
        b, t, f = feats.shape
        mask = Tensor(mask_arr)
        x = ops.reshape(Tensor(feats), (b * t, f))
        x = ops.elu(ops.add(ops.matmul(x, self.params["fc_w"]), self.params["fc_b"]))
        h = ops.mul(ops.reshape(x, (b, t, self.fc_width)), mask)
        for i in range(self.conv_layers):
            c = ops.glu(ops.conv1d(h, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"]))
            h = ops.mul(ops.add(h, c), mask)
        pooled = masked_mean_time(h, mask, lengths)
        emb = ops.elu(ops.add(ops.matmul(pooled, self.params["emb_w"]), self.params["emb_b"]))
        return ops.add(ops.matmul(emb, self.params["soft_w"]), self.params["soft_b"])

    def probabilities(self, mels):
        with no_grad():
            probs = ops.softmax(self.logits(mels), axis=1)
        return probs.data.copy()

    def classify(self, mel):
        """One mel spectrogram -> (speaker_id, probability vector)."""
        probs = self.probabilities([mel])[0]
        return self.speaker_ids[int(np.argmax(probs))], probs

    def accuracy(self, mels, speaker_labels, batch_size=64):
        hits = 0
        for start in range(0, len(mels), batch_size):
            probs = self.probabilities(mels[start : start + batch_size])
            for p, want in zip(probs, speaker_labels[start : start + batch_size]):
                hits += self.speaker_ids[int(np.argmax(p))] == want
        return hits / len(mels)

    def config(self):
        return {
            "num_bands": self.num_bands,
            "fc_width": self.fc_width,
            "conv_layers": self.conv_layers,
            "conv_kernel": self.conv_kernel,
            "bottleneck": self.bottleneck,
            "seed": self.seed,
        }

    def save(self, path):
        save_model(path, self, self.config(),
                   extra_entries={f"speakers/{sid}": np.float32(i)
                                  for i, sid in enumerate(self.speaker_ids)})

    @classmethod
    def load(cls, path):
        entries, cfg = load_entries(path)
        order = sorted(
            ((int(v), k[len("speakers/"):]) for k, v in entries.items() if k.startswith("speakers/"))
        )
        speaker_ids = [sid for _, sid in order]
        model = cls(
            speaker_ids,
            num_bands=int(cfg["num_bands"]),
            fc_width=int(cfg["fc_width"]),
            conv_layers=int(cfg["conv_layers"]),
            conv_kernel=int(cfg["conv_kernel"]),
            bottleneck=int(cfg["bottleneck"]),
            seed=int(cfg.get("seed", 0)),
        )
        model.load_state_entries({k: v for k, v in entries.items() if k in model.params})
        return model


def train_classifier(
    model: SpeakerClassifier,
    train_mels,
    train_labels,
    val_mels=(),
    val_labels=(),
    iterations=300,
    batch_size=64,
    lr=0.0006,
    anneal=0.6,
    anneal_interval=8000,
    seed=0,
    eval_every=50,
):
    """Cross-entropy training on (mel, speaker) pairs; returns accuracy history."""
    if len(train_mels) == 0:
        raise ValueError("no training clips")
    y = np.array([model.index[s] for s in train_labels], dtype=np.int64)
    opt = Adam(model.params, lr=lr, anneal=anneal, anneal_interval=anneal_interval)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC1A6)))
    history = {"iteration": [], "train_ce": [], "val_accuracy": []}
    for it in range(1, iterations + 1):
        pick = rng.choice(len(train_mels), size=min(batch_size, len(train_mels)), replace=False)
        loss = ops.cross_entropy_logits(model.logits([train_mels[i] for i in pick]), y[pick])
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericsError(f"non-finite classifier loss at iteration {it}")
        model.zero_grad()
        loss.backward()
        opt.step()
        if len(val_mels) and (it % eval_every == 0 or it == iterations):
            acc = model.accuracy(list(val_mels), list(val_labels))
            history["iteration"].append(it)
            history["train_ce"].append(value)
            history["val_accuracy"].append(acc)
            log.info("classifier iter %d ce %.4f val acc %.3f", it, value, acc)
    return history


def mels_for_rows(manifest, rows, cfg=None):
    cfg = cfg or encoder_frontend()
    return [mel_spectrogram(manifest.load_clip(r), cfg).frames for r in rows]
