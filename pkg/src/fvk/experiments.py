"""End-to-end experiment recipes behind the CLI subcommands.

Every stage writes its artifacts under one output directory and is
resumable: when a stage's outputs already exist it logs a notice and
returns without recomputing. All randomness derives from the global seed,
so checkpoints and result CSVs are byte-identical across re-runs; measured
wall-clock times go to a separate timings file that is explicitly outside
the determinism contract.
"""

import csv
import logging
import time
from pathlib import Path

import numpy as np

from . import adapt as adapt_mod
from . import corpus as corpus_mod
from .audio import (
    encoder_frontend,
    generative_frontend,
    invert_mel,
    mel_spectrogram,
    verification_frontend,
    write_wav,
)
from .embedding_space import (
    EmbeddingTable,
    accent_mean,
    encoder_table,
    export_scatter,
    gender_mean,
    morph,
    pca_fit,
)
from .evaluation import compute_eer, export_score_distribution, plda_score_batch
from .models.classifier import SpeakerClassifier, mels_for_rows, train_classifier
from .models.encoder import MelCache, SpeakerEncoderModel, train_encoder
from .models.multispeaker import MultiSpeakerModel, extract_embeddings, train_multispeaker
from .models.verifier import VerificationModel, evaluate_verifier, train_verifier
from .autodiff.checkpoint import save_checkpoint

log = logging.getLogger(__name__)

METHODS = (adapt_mod.METHOD_ADAPT_EMBEDDING, adapt_mod.METHOD_ADAPT_WHOLE,
           adapt_mod.METHOD_ENCODER)
DATA_REQUIREMENT = {
    adapt_mod.METHOD_ADAPT_EMBEDDING: "text+audio",
    adapt_mod.METHOD_ADAPT_WHOLE: "text+audio",
    adapt_mod.METHOD_ENCODER: "audio",
}

# cloning-split per-speaker utterance partition (indices into its rows)
CLONE_POOL = slice(0, 10)
ENROLL_POOL = slice(10, 16)
CLF_TRAIN = slice(16, 32)
CLF_VAL = slice(32, 37)


class StageError(RuntimeError):
    pass


class MissingArtifact(StageError):
    """A prerequisite checkpoint or directory is absent (config-level error)."""


def _notice_skip(path, what):
    log.info("%s already exists (%s); skipping", path, what)


def require(path, what):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path}")
    return path


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def fmt(value):
    return f"{value:.6f}"


# ---------------------------------------------------------------------------
# stage: corpus

def stage_corpus(out_dir, seed, train_speakers=60, cloning_speakers=16,
                 texts_per_speaker=24, cloning_texts_per_speaker=37,
                 validation_per_speaker=4, text_symbols=(3, 6),
                 cloning_text_symbols=(4, 8)):
    out_dir = Path(out_dir)
    corpus_dir = out_dir / "corpus"
    if (corpus_dir / "corpus.cfg").exists():
        _notice_skip(corpus_dir, "corpus")
        return corpus_dir
    train = corpus_mod.sample_speakers(train_speakers, seed)
    cloning = corpus_mod.sample_speakers(cloning_speakers, seed + 1, id_prefix="cln")
    corpus_mod.build_corpus(
        train, texts_per_speaker, corpus_dir, seed,
        validation_per_speaker=validation_per_speaker, text_symbols=text_symbols,
    )
    # cloning speakers rendered with their own text-length range, then the
    # manifests are merged into the same corpus directory
    clone_manifests = corpus_mod.build_corpus(
        cloning, cloning_texts_per_speaker, corpus_dir / "cloning_tmp", seed + 1,
        text_symbols=cloning_text_symbols,
    )
    _merge_cloning(corpus_dir, clone_manifests["train"], train + cloning)
    return corpus_dir


def _merge_cloning(corpus_dir, cloning_manifest, all_speakers):
    import shutil

    rows = []
    for row in cloning_manifest.rows:
        src = cloning_manifest.root / row.path
        dst = corpus_dir / row.path
        dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.move(str(src), str(dst))
        rows.append(corpus_mod.ManifestRow(row.path, row.speaker_id, row.text))
    shutil.rmtree(cloning_manifest.root)
    manifest = corpus_mod.Manifest(rows, "cloning", corpus_dir)
    corpus_mod.save_manifest(manifest, corpus_dir / "manifest_cloning.tsv")
    splits = {sp.speaker_id: ("cloning" if sp.speaker_id.startswith("cln") else "train")
              for sp in all_speakers}
    corpus_mod.save_speaker_table(corpus_dir / "speakers.tsv", all_speakers, splits)


def load_built_corpus(out_dir):
    corpus_dir = require(Path(out_dir) / "corpus", "corpus directory (run corpus-gen)")
    return corpus_mod.load_corpus(corpus_dir)


# ---------------------------------------------------------------------------
# stage: multi-speaker model

def multispeaker_path(out_dir, tag):
    return Path(out_dir) / "models" / f"multispeaker_{tag}.fvk"


def stage_train_multispeaker(out_dir, seed, tag, embedding_dim, epochs=60,
                             batch_size=64, lr=0.0006, anneal=0.6,
                             anneal_interval=8000):
    out_dir = Path(out_dir)
    path = multispeaker_path(out_dir, tag)
    if path.exists():
        _notice_skip(path, f"multi-speaker model '{tag}'")
        return path
    manifests, _, _ = load_built_corpus(out_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    model = MultiSpeakerModel(
        manifests["train"].speakers(), embedding_dim=embedding_dim, seed=seed,
    )
    history = train_multispeaker(
        model, manifests["train"], manifests.get("validation"),
        epochs=epochs, batch_size=batch_size, lr=lr, anneal=anneal,
        anneal_interval=anneal_interval, seed=seed, checkpoint_path=path,
    )
    rows = [[i, fmt(t)] + ([fmt(v)] if history["validation"] else [])
            for i, (t, v) in enumerate(zip(
                history["train"],
                history["validation"] or [None] * len(history["train"])))]
    header = ["epoch", "train_loss"] + (["validation_loss"] if history["validation"] else [])
    write_csv(path.with_suffix(".loss.csv"), header, rows)
    return path


# ---------------------------------------------------------------------------
# stage: encoders

def encoder_path(out_dir, n_samples, use_attention=True):
    suffix = "" if use_attention else "_noattn"
    return Path(out_dir) / "models" / f"encoder_n{n_samples}{suffix}.fvk"


def stage_train_encoder(out_dir, seed, n_samples, base_tag="encoder512",
                        iterations=220, batch_size=64, lr=0.0006,
                        use_attention=True, val_speaker_count=25,
                        eval_every=20, cache=None):
    out_dir = Path(out_dir)
    path = encoder_path(out_dir, n_samples, use_attention)
    if path.exists():
        _notice_skip(path, f"encoder n={n_samples}")
        return path
    base_path = require(multispeaker_path(out_dir, base_tag),
                        f"base model checkpoint '{base_tag}' (run train-multispeaker)")
    manifests, _, _ = load_built_corpus(out_dir)
    base = MultiSpeakerModel.load(base_path)
    targets = extract_embeddings(base)
    train_man = manifests["train"]
    val_speakers = train_man.speakers()[-val_speaker_count:]
    model = SpeakerEncoderModel(
        embedding_dim=base.embedding_dim, n_samples=n_samples,
        use_attention=use_attention, seed=seed + n_samples,
    )
    history = train_encoder(
        model, train_man, targets, iterations=iterations, batch_size=batch_size,
        lr=lr, seed=seed, val_speakers=val_speakers, eval_every=eval_every,
        cache=cache,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    write_csv(
        path.with_suffix(".mae.csv"),
        ["iteration", "validation_mae"],
        [[i, fmt(v)] for i, v in zip(history["iteration"], history["val_mae"])],
    )
    return path


# ---------------------------------------------------------------------------
# evaluators

def stage_train_classifier(out_dir, seed, iterations=450, batch_size=64, lr=0.0006):
    out_dir = Path(out_dir)
    path = out_dir / "models" / "classifier.fvk"
    if path.exists():
        _notice_skip(path, "speaker classifier")
        return path
    manifests, _, _ = load_built_corpus(out_dir)
    cloning = manifests["cloning"]
    train_mels, train_labels, val_mels, val_labels = [], [], [], []
    for sid in cloning.speakers():
        rows = cloning.rows_for(sid)
        train_rows, val_rows = rows[CLF_TRAIN], rows[CLF_VAL]
        train_mels += mels_for_rows(cloning, train_rows)
        train_labels += [sid] * len(train_rows)
        val_mels += mels_for_rows(cloning, val_rows)
        val_labels += [sid] * len(val_rows)
    model = SpeakerClassifier(cloning.speakers(), seed=seed)
    history = train_classifier(
        model, train_mels, train_labels, val_mels, val_labels,
        iterations=iterations, batch_size=batch_size, lr=lr, seed=seed,
        eval_every=max(1, iterations // 4),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    write_csv(
        path.with_suffix(".acc.csv"),
        ["iteration", "validation_accuracy"],
        [[i, fmt(a)] for i, a in zip(history["iteration"], history["val_accuracy"])],
    )
    return path


def stage_train_verifier(out_dir, seed, iterations=700, batch_size=64, lr=1e-3,
                         val_speaker_count=None):
    out_dir = Path(out_dir)
    path = out_dir / "models" / "verifier.fvk"
    if path.exists():
        _notice_skip(path, "verification model")
        return path
    manifests, _, _ = load_built_corpus(out_dir)
    train_man = manifests["train"]
    n = len(train_man.speakers())
    if val_speaker_count is None:
        val_speaker_count = max(2, min(15, n // 4))
    val_ids = train_man.speakers()[:val_speaker_count]
    model = VerificationModel(seed=seed)
    cache = MelCache(train_man, verification_frontend())
    history = train_verifier(
        model, train_man, val_ids, iterations=iterations, batch_size=batch_size,
        lr=lr, seed=seed, eval_every=max(1, iterations // 4), cache=cache,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    write_csv(
        path.with_suffix(".eer.csv"),
        ["iteration", "validation_eer"],
        [[i, fmt(v)] for i, v in zip(history["iteration"], history["val_eer"])],
    )
    return path


# ---------------------------------------------------------------------------
# cloning + benchmark

def eval_texts_for(seed, count, symbols=(4, 8)):
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE7A1)))
    return [corpus_mod.random_text(rng, *symbols) for _ in range(count)]


def clone_speaker(base_model, method, count, cloning_man, speaker_id, eval_texts,
                  encoder=None, seed=0, adapt_iters=(250, 600)):
    """Clone one speaker from its first ``count`` pool utterances."""
    rows = cloning_man.rows_for(speaker_id)[CLONE_POOL][:count]
    clips = [cloning_man.load_clip(r) for r in rows]
    texts = [r.text for r in rows]
    if method == adapt_mod.METHOD_ADAPT_EMBEDDING:
        job = {"max_iterations": adapt_iters[0], "learning_rate": 0.3, "seed": seed}
        return adapt_mod.clone(base_model, method, eval_texts, clips, texts,
                               job_kwargs=job)
    if method == adapt_mod.METHOD_ADAPT_WHOLE:
        job = {
            "max_iterations": adapt_iters[1], "learning_rate": 5e-4, "seed": seed,
            "early_stopping": count >= 2, "patience": 3, "eval_every": 25,
        }
        return adapt_mod.clone(base_model, method, eval_texts, clips, texts,
                               job_kwargs=job)
    return adapt_mod.clone(base_model, method, eval_texts, clips, encoder=encoder)


def stage_clone(out_dir, seed, method, samples, base_tag=None, keep_audio=True,
                gl_iterations=30, eval_text_count=4, speakers=None):
    """CLI-facing cloning: synthesize eval texts for cloning-split speakers."""
    out_dir = Path(out_dir)
    clone_dir = out_dir / "clones" / f"{method}_n{samples}"
    done = clone_dir / "clone_report.csv"
    if done.exists():
        _notice_skip(clone_dir, "clone stage")
        return clone_dir
    if method not in METHODS:
        raise StageError(f"unknown method {method!r}; expected one of {METHODS}")
    base_tag = base_tag or ("encoder512" if method == adapt_mod.METHOD_ENCODER
                            else "adapt128")
    base = MultiSpeakerModel.load(
        require(multispeaker_path(out_dir, base_tag),
                f"base model checkpoint '{base_tag}' (run train-multispeaker)")
    )
    encoder = None
    if method == adapt_mod.METHOD_ENCODER:
        encoder = SpeakerEncoderModel.load(
            require(encoder_path(out_dir, samples),
                    f"encoder checkpoint for {samples} samples (run train-encoder)")
        )
    manifests, _, _ = load_built_corpus(out_dir)
    cloning = manifests["cloning"]
    ids = speakers or cloning.speakers()
    texts = eval_texts_for(seed, eval_text_count)
    clone_dir.mkdir(parents=True, exist_ok=True)
    rows, timing_rows = [], []
    gen_cfg = generative_frontend()
    for sid in ids:
        report = clone_speaker(base, method, samples, cloning, sid, texts,
                               encoder=encoder, seed=seed)
        if keep_audio:
            for k, mel in enumerate(report.mels):
                clip = invert_mel(mel, gen_cfg, iterations=gl_iterations)
                write_wav(clone_dir / f"{sid}_eval{k:02d}.wav", clip)
        rows.append([method, samples, sid, report.params_per_speaker,
                     DATA_REQUIREMENT[method]])
        timing_rows.append([method, samples, sid, f"{report.cloning_seconds:.3f}"])
    write_csv(done, ["method", "sample_count", "speaker_id", "params_per_speaker",
                     "data_requirement"], rows)
    write_csv(clone_dir / "timings.csv",
              ["method", "sample_count", "speaker_id", "cloning_seconds"], timing_rows)
    return clone_dir


def stage_evaluate(out_dir, seed, counts=(1, 2, 3, 5, 10), methods=METHODS,
                   eval_text_count=16, enrollment_counts=(1, 5),
                   subsets_per_clip=2, gl_iterations=30,
                   adapt_iters=(250, 600), classifier_iterations=450,
                   verifier_iterations=700):
    """The cloning benchmark: accuracy and EER per (method, sample count)."""
    out_dir = Path(out_dir)
    results = out_dir / "results"
    metrics_path = results / "metrics.csv"
    if metrics_path.exists():
        _notice_skip(metrics_path, "evaluation")
        return metrics_path

    clf_path = stage_train_classifier(out_dir, seed, iterations=classifier_iterations)
    ver_path = stage_train_verifier(out_dir, seed, iterations=verifier_iterations)
    classifier = SpeakerClassifier.load(clf_path)
    verifier = VerificationModel.load(ver_path)
    manifests, _, _ = load_built_corpus(out_dir)
    cloning = manifests["cloning"]
    ids = cloning.speakers()

    base_a = MultiSpeakerModel.load(
        require(multispeaker_path(out_dir, "adapt128"), "base model 'adapt128'"))
    base_b = MultiSpeakerModel.load(
        require(multispeaker_path(out_dir, "encoder512"), "base model 'encoder512'"))
    encoders = {}
    if adapt_mod.METHOD_ENCODER in methods:
        for count in counts:
            encoders[count] = SpeakerEncoderModel.load(
                require(encoder_path(out_dir, count),
                        f"encoder checkpoint for {count} samples"))

    eval_texts = eval_texts_for(seed, eval_text_count)
    enc_cfg = encoder_frontend()
    ver_cfg = verification_frontend()
    gen_cfg = generative_frontend()
    results.mkdir(parents=True, exist_ok=True)

    # enrollment encodings from utterances disjoint from the cloning pool
    enroll_rows = {sid: cloning.rows_for(sid)[ENROLL_POOL] for sid in ids}
    pool_paths = {r.path for sid in ids for r in cloning.rows_for(sid)[CLONE_POOL]}
    overlap = pool_paths & {r.path for rows in enroll_rows.values() for r in rows}
    if overlap:
        raise StageError(f"enrollment and cloning audio overlap: {sorted(overlap)[:3]}")
    enroll_enc = {
        sid: verifier.encode(
            [mel_spectrogram(cloning.load_clip(r), ver_cfg).frames for r in rows]
        ).data
        for sid, rows in enroll_rows.items()
    }
    plda = verifier.plda()

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE7A2)))
    metric_rows, footprint_rows, timing_rows = [], [], []
    dist_exports = {}
    for method in methods:
        base = base_b if method == adapt_mod.METHOD_ENCODER else base_a
        for count in counts:
            t0 = time.perf_counter()
            cell_mels_enc, cell_mels_ver, cell_labels = [], [], []
            per_speaker_seconds = []
            for sid in ids:
                report = clone_speaker(
                    base, method, count, cloning, sid, eval_texts,
                    encoder=encoders.get(count), seed=seed,
                )
                per_speaker_seconds.append(report.cloning_seconds)
                footprint_rows.append([method, count, sid, report.params_per_speaker,
                                       DATA_REQUIREMENT[method]])
                for mel in report.mels:
                    clip = invert_mel(mel, gen_cfg, iterations=gl_iterations)
                    cell_mels_enc.append(mel_spectrogram(clip, enc_cfg).frames)
                    cell_mels_ver.append(mel_spectrogram(clip, ver_cfg).frames)
                    cell_labels.append(sid)
            accuracy = classifier.accuracy(cell_mels_enc, cell_labels)
            metric_rows.append([method, count, "", "classification_accuracy",
                                fmt(accuracy)])
            test_enc = _encode_all(verifier, cell_mels_ver)
            for n_enroll in enrollment_counts:
                scores, labels = _verification_trials(
                    test_enc, cell_labels, enroll_rows, cloning, verifier, plda,
                    ver_cfg, n_enroll, subsets_per_clip, rng,
                )
                report = compute_eer(scores, labels, enrollment_count=n_enroll)
                metric_rows.append([method, count, n_enroll, "eer", fmt(report.eer)])
                if count == max(counts) and n_enroll == max(enrollment_counts):
                    dist_exports[method] = (scores, labels)
            timing_rows.append([method, count,
                                f"{float(np.mean(per_speaker_seconds)):.3f}",
                                f"{time.perf_counter() - t0:.3f}"])
            log.info("evaluated %s n=%d: accuracy %.3f", method, count, accuracy)

    # ground-truth reference rows
    gt_mels_enc, gt_mels_ver, gt_labels = [], [], []
    for sid in ids:
        for row in cloning.rows_for(sid)[CLF_VAL]:
            clip = cloning.load_clip(row)
            gt_mels_enc.append(mel_spectrogram(clip, enc_cfg).frames)
            gt_mels_ver.append(mel_spectrogram(clip, ver_cfg).frames)
            gt_labels.append(sid)
    gt_acc = classifier.accuracy(gt_mels_enc, gt_labels)
    metric_rows.append(["ground_truth", "", "", "classification_accuracy", fmt(gt_acc)])
    gt_enc = _encode_all(verifier, gt_mels_ver)
    for n_enroll in enrollment_counts:
        scores, labels = _verification_trials(
            gt_enc, gt_labels, enroll_rows, cloning, verifier, plda, ver_cfg,
            n_enroll, subsets_per_clip, rng,
        )
        report = compute_eer(scores, labels, enrollment_count=n_enroll)
        metric_rows.append(["ground_truth", "", n_enroll, "eer", fmt(report.eer)])

    write_csv(metrics_path, ["method", "sample_count", "enrollment_count",
                             "metric", "value"], metric_rows)
    write_csv(results / "clone_report.csv",
              ["method", "sample_count", "speaker_id", "params_per_speaker",
               "data_requirement"], footprint_rows)
    write_csv(results / "timings.csv",
              ["method", "sample_count", "mean_cloning_seconds", "cell_seconds"],
              timing_rows)
    for method, (scores, labels) in dist_exports.items():
        export_score_distribution(scores, labels,
                                  results / f"score_dist_{method}.csv")
    return metrics_path


def _encode_all(verifier, mels, batch=128):
    from .autodiff import no_grad

    out = []
    with no_grad():
        for start in range(0, len(mels), batch):
            out.append(verifier.encode(mels[start : start + batch]).data.copy())
    return np.concatenate(out)


def _verification_trials(test_enc, test_labels, enroll_rows, cloning, verifier,
                         plda, ver_cfg, n_enroll, subsets_per_clip, rng):
    """Positive and negative trials against pooled enrollment encodings."""
    ids = sorted(enroll_rows)
    subset_enc = {}

    def enrollment_encoding(sid, subset):
        key = (sid, subset)
        if key not in subset_enc:
            rows = [enroll_rows[sid][i] for i in subset]
            mels = [mel_spectrogram(cloning.load_clip(r), ver_cfg).frames for r in rows]
            enc = _encode_all(verifier, mels)
            subset_enc[key] = enc.mean(axis=0)
        return subset_enc[key]

    n_pool = len(next(iter(enroll_rows.values())))
    xs, ys, labels = [], [], []
    for i, sid in enumerate(test_labels):
        for _ in range(subsets_per_clip):
            subset = tuple(sorted(rng.choice(n_pool, size=n_enroll, replace=False)))
            xs.append(enrollment_encoding(sid, subset))
            ys.append(test_enc[i])
            labels.append(True)
            other = ids[int(rng.integers(len(ids)))]
            while other == sid:
                other = ids[int(rng.integers(len(ids)))]
            subset = tuple(sorted(rng.choice(n_pool, size=n_enroll, replace=False)))
            xs.append(enrollment_encoding(other, subset))
            ys.append(test_enc[i])
            labels.append(False)
    scores = plda_score_batch(np.stack(xs), np.stack(ys), plda)
    return scores, np.asarray(labels, dtype=bool)


# ---------------------------------------------------------------------------
# stage: morphing

def stage_morph(out_dir, seed, transform="gender", base_tag="adapt128",
                eval_text_count=3, gl_iterations=40, keep_audio=False):
    """Apply the attribute-difference transform to every source speaker."""
    out_dir = Path(out_dir)
    morph_dir = out_dir / "morph"
    report_path = morph_dir / f"morph_{transform}.csv"
    if report_path.exists():
        _notice_skip(report_path, "morph stage")
        return report_path
    if transform not in ("gender", "accent"):
        raise StageError(f"unknown transform {transform!r}; use gender or accent")
    base = MultiSpeakerModel.load(
        require(multispeaker_path(out_dir, base_tag), f"base model '{base_tag}'"))
    manifests, speakers, _ = load_built_corpus(out_dir)
    by_id = {sp.speaker_id: sp for sp in speakers}
    table = EmbeddingTable.from_speakers(
        {sid: emb for sid, emb in extract_embeddings(base).items()},
        [by_id[sid] for sid in base.speaker_ids],
    )
    if transform == "gender":
        add, sub = gender_mean(table, "F"), gender_mean(table, "M")
        sources = [sid for sid in base.speaker_ids if table.gender[sid] == "M"]
        probe = lambda f0: corpus_mod.gender_from_f0(f0)
        flip_to = "F"
    else:
        add, sub = accent_mean(table, "B"), accent_mean(table, "A")
        sources = [sid for sid in base.speaker_ids if table.accent[sid] == "A"]
        probe = None
        flip_to = "B"

    texts = eval_texts_for(seed + 7, eval_text_count)
    gen_cfg = generative_frontend()
    morph_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    morphed_entries = {}
    for sid in sources:
        original = table.embeddings[sid]
        morphed = morph(original, add, sub)
        morphed_entries[f"embedding/{sid}_morphed"] = morphed.astype(np.float32)
        f0_orig, f0_new = [], []
        for k, text in enumerate(texts):
            mel_o = base.synthesize(text, original.astype(np.float32))
            mel_m = base.synthesize(text, morphed.astype(np.float32))
            clip_o = invert_mel(mel_o, gen_cfg, iterations=gl_iterations)
            clip_m = invert_mel(mel_m, gen_cfg, iterations=gl_iterations)
            f0_orig.append(corpus_mod.estimate_f0(clip_o))
            f0_new.append(corpus_mod.estimate_f0(clip_m))
            if keep_audio:
                write_wav(morph_dir / f"{sid}_orig{k}.wav", clip_o)
                write_wav(morph_dir / f"{sid}_morphed{k}.wav", clip_m)
        f0_before = float(np.median(f0_orig))
        f0_after = float(np.median(f0_new))
        if transform == "gender":
            flipped = probe(f0_after) == flip_to
            rows.append([sid, fmt(f0_before), fmt(f0_after),
                         corpus_mod.gender_from_f0(f0_before),
                         corpus_mod.gender_from_f0(f0_after), int(flipped)])
        else:
            rows.append([sid, fmt(f0_before), fmt(f0_after), "", "", ""])
    header = ["speaker_id", "f0_before", "f0_after", "gender_before",
              "gender_after", "flipped"]
    write_csv(report_path, header, rows)
    save_checkpoint(morph_dir / f"morphed_{transform}.fvk", morphed_entries)
    return report_path


def stage_scatter(out_dir, seed, n_samples=5, base_tag="encoder512"):
    """PCA scatter of encoder-estimated embeddings with attribute labels."""
    out_dir = Path(out_dir)
    path = out_dir / "results" / "embedding_scatter.csv"
    if path.exists():
        _notice_skip(path, "embedding scatter")
        return path
    enc = SpeakerEncoderModel.load(
        require(encoder_path(out_dir, n_samples), f"encoder for {n_samples} samples"))
    manifests, speakers, _ = load_built_corpus(out_dir)
    table = encoder_table(enc, manifests["train"], speakers, n_samples=n_samples,
                          seed=seed)
    proj = pca_fit(table, 2)
    path.parent.mkdir(parents=True, exist_ok=True)
    export_scatter(table, proj, path)
    return path


# ---------------------------------------------------------------------------
# stage: report

def stage_report(out_dir):
    out_dir = Path(out_dir)
    results = out_dir / "results"
    metrics_path = require(results / "metrics.csv", "evaluation results (run evaluate)")
    rows = list(csv.DictReader(open(metrics_path)))
    footprints = list(csv.DictReader(open(results / "clone_report.csv")))
    timings = list(csv.DictReader(open(results / "timings.csv")))

    table1 = []
    for method in METHODS:
        foot = sorted({int(r["params_per_speaker"]) for r in footprints
                       if r["method"] == method})
        data_req = next(r["data_requirement"] for r in footprints
                        if r["method"] == method)
        secs = [float(r["mean_cloning_seconds"]) for r in timings
                if r["method"] == method]
        table1.append([method, data_req,
                       "/".join(str(f) for f in foot),
                       f"{float(np.mean(secs)):.3f}" if secs else ""])
    write_csv(results / "table1.csv",
              ["method", "data_requirement", "params_per_speaker",
               "mean_cloning_seconds"], table1)

    counts = sorted({int(r["sample_count"]) for r in rows if r["sample_count"]})
    acc = {(r["method"], r["sample_count"]): r["value"] for r in rows
           if r["metric"] == "classification_accuracy"}
    fig_a = [[c] + [acc.get((m, str(c)), "") for m in METHODS] for c in counts]
    write_csv(results / "fig4a_accuracy.csv", ["sample_count", *METHODS], fig_a)
    for n_enroll in sorted({r["enrollment_count"] for r in rows
                            if r["metric"] == "eer" and r["enrollment_count"]}):
        eer = {(r["method"], r["sample_count"]): r["value"] for r in rows
               if r["metric"] == "eer" and r["enrollment_count"] == n_enroll}
        fig_b = [[c] + [eer.get((m, str(c)), "") for m in METHODS] for c in counts]
        gt = [r["value"] for r in rows
              if r["metric"] == "eer" and r["method"] == "ground_truth"
              and r["enrollment_count"] == n_enroll]
        fig_b.append(["ground_truth"] + gt * len(METHODS) if gt else [])
        write_csv(results / f"fig4b_eer_enroll{n_enroll}.csv",
                  ["sample_count", *METHODS], [r for r in fig_b if r])

    lines = ["cloning benchmark summary", "=" * 32]
    for row in table1:
        lines.append(f"{row[0]}: data={row[1]} params/speaker={row[2]} "
                     f"mean cloning time={row[3]}s")
    gt_acc = [r["value"] for r in rows
              if r["method"] == "ground_truth"
              and r["metric"] == "classification_accuracy"]
    if gt_acc:
        lines.append(f"ground-truth classifier accuracy: {gt_acc[0]}")
    summary = results / "summary.txt"
    summary.write_text("\n".join(lines) + "\n")
    return summary
