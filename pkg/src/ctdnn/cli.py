"""Batch command-line pipeline: featurize, synth, train, embed, lda, score, eer, identify.

Exit codes: 0 success, 1 runtime/data error, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import configparser
import logging
import os
import sys

from . import data, evaluation, model, train
from .errors import ArchSemanticError, ArchSyntaxError, ConfigError, CtdnnError, ValidationError

log = logging.getLogger("ctdnn")

_SECTION_FIELDS = {
    "arch": {"arch", "width"},
    "train": {"batch_size", "lr", "max_epochs", "patience", "min_delta", "seed", "eval_every"},
    "features": {
        "sample_rate", "frame_len_ms", "hop_ms", "pre_emphasis",
        "mel_filters", "n_coeffs", "log_floor", "target_frames",
    },
    "eval": {"lda_dim", "shrinkage"},
}


@dataclasses.dataclass
class RunConfig:
    arch: str | None = None
    width: int = 512
    train: train.TrainConfig = dataclasses.field(default_factory=train.TrainConfig)
    features: data.MfccConfig = dataclasses.field(default_factory=data.MfccConfig)
    target_frames: int | None = None
    lda_dim: int | None = None
    shrinkage: float | None = None


def load_run_config(path: str | None) -> RunConfig:
    """Parse the key=value run configuration; unknown sections or keys are rejected."""
    cfg = RunConfig()
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise ConfigError(f"config file '{path}' not found")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse '{path}': {e}") from None
    for section in parser.sections():
        if section not in _SECTION_FIELDS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SECTION_FIELDS[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
    try:
        if parser.has_section("arch"):
            cfg.arch = parser.get("arch", "arch", fallback=cfg.arch)
            cfg.width = parser.getint("arch", "width", fallback=cfg.width)
        if parser.has_section("train"):
            t = parser["train"]
            cfg.train = train.TrainConfig(
                batch_size=t.getint("batch_size", cfg.train.batch_size),
                lr=t.getfloat("lr", cfg.train.lr),
                max_epochs=t.getint("max_epochs", cfg.train.max_epochs),
                patience=t.getint("patience", cfg.train.patience),
                min_delta=t.getfloat("min_delta", cfg.train.min_delta),
                seed=t.getint("seed", cfg.train.seed),
                eval_every=t.getint("eval_every", cfg.train.eval_every),
            )
        if parser.has_section("features"):
            f = parser["features"]
            cfg.features = data.MfccConfig(
                sample_rate=f.getint("sample_rate", cfg.features.sample_rate),
                frame_len_ms=f.getfloat("frame_len_ms", cfg.features.frame_len_ms),
                hop_ms=f.getfloat("hop_ms", cfg.features.hop_ms),
                pre_emphasis=f.getfloat("pre_emphasis", cfg.features.pre_emphasis),
                mel_filters=f.getint("mel_filters", cfg.features.mel_filters),
                n_coeffs=f.getint("n_coeffs", cfg.features.n_coeffs),
                log_floor=f.getfloat("log_floor", cfg.features.log_floor),
            )
            cfg.target_frames = f.getint("target_frames", None)
        if parser.has_section("eval"):
            cfg.lda_dim = parser["eval"].getint("lda_dim", None)
            cfg.shrinkage = parser["eval"].getfloat("shrinkage", None)
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"bad value in '{path}': {e}") from None
    return cfg


def _speaker_for(rel_path: str) -> str:
    parts = rel_path.replace(os.sep, "/").split("/")
    if len(parts) > 1:
        return parts[0]
    stem = os.path.splitext(parts[0])[0]
    return stem.split("_")[0]


def cmd_featurize(args) -> int:
    cfg = load_run_config(args.config)
    wav_dir = os.path.abspath(args.wav_dir)
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest_out)) or "."
    feat_dir = os.path.abspath(args.feature_dir or os.path.join(manifest_dir, "features"))
    os.makedirs(feat_dir, exist_ok=True)
    files = []
    for root, _dirs, names in os.walk(wav_dir):
        files.extend(os.path.join(root, n) for n in names)
    files.sort()
    entries = []
    failures = 0
    for path in files:
        rel = os.path.relpath(path, wav_dir)
        try:
            samples, rate = data.read_wav(path)
            mfcc_cfg = dataclasses.replace(cfg.features, sample_rate=rate)
            utt = os.path.splitext(rel)[0].replace(os.sep, "_")
            seq = data.FeatureSequence(utt, _speaker_for(rel), data.mfcc(samples, mfcc_cfg))
            if cfg.target_frames:
                seq = data.normalize_length(seq, cfg.target_frames)
            out_path = os.path.join(feat_dir, f"{utt}.ctdf")
            data.write_features(out_path, seq)
            entries.append(
                data.ManifestEntry(utt, seq.speaker_id, os.path.relpath(out_path, manifest_dir))
            )
        except CtdnnError as e:
            failures += 1
            log.error("skipping %s: %s", rel, e)
    data.write_manifest(args.manifest_out, entries)
    if not entries:
        log.warning("no usable audio under %s; wrote an empty manifest", wav_dir)
    log.info("featurized %d files (%d failed) -> %s", len(entries), failures, args.manifest_out)
    return 1 if (failures and args.strict) else 0


def cmd_synth(args) -> int:
    parser = configparser.ConfigParser()
    if not os.path.exists(args.spec_file):
        raise ConfigError(f"spec file '{args.spec_file}' not found")
    parser.read(args.spec_file)
    if not parser.has_section("synth"):
        raise ConfigError("spec file needs a [synth] section")
    known = {f.name for f in dataclasses.fields(data.SynthSpec)}
    for key in parser["synth"]:
        if key not in known:
            raise ConfigError(f"unknown key '{key}' in [synth]")
    s = parser["synth"]
    try:
        spec = data.SynthSpec(
            n_speakers=s.getint("n_speakers"),
            utts_per_speaker=s.getint("utts_per_speaker"),
            frames_per_utt=s.getint("frames_per_utt"),
            dim=s.getint("dim"),
            speaker_mean_scale=s.getfloat("speaker_mean_scale", 1.0),
            ar_coefficient=s.getfloat("ar_coefficient", 0.5),
            noise_scale=s.getfloat("noise_scale", 0.3),
            seed=s.getint("seed", 0),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad [synth] values: {e}") from None
    paths = data.synth_corpus(spec, args.out_dir)
    for name in sorted(paths):
        log.info("wrote %s", paths[name])
    return 0


def _load_split(manifest_path):
    seqs = data.load_corpus(manifest_path)
    if not seqs:
        raise ValidationError(f"manifest '{manifest_path}' lists no utterances")
    return seqs


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    train_set = _load_split(args.manifest)
    val_set = data.load_corpus(args.val_manifest) if args.val_manifest else []
    class_map = train.class_map_for(train_set)
    arch = args.arch or cfg.arch
    if not arch:
        raise ConfigError("no architecture: pass --arch or set [arch] arch in the config")
    config = model.parse_arch(
        arch, input_dim=train_set[0].frames.shape[1],
        num_classes=len(class_map), width=cfg.width,
    )
    net = model.build_model(config, seed=cfg.train.seed)
    net, curve = train.fit(net, train_set, val_set, cfg.train)
    model.save_model(args.model_out, net)
    if args.curve_out:
        train.write_curve(args.curve_out, curve)
    if curve.diverged:
        log.error("training diverged at epoch %d; kept last finite checkpoint", curve.stopped_epoch)
        return 1
    epoch99 = train.converged_epoch(curve, 0.99)
    best = max(ep.train_acc for ep in curve.epochs)
    print(f"converged_epoch(0.99)={epoch99 if epoch99 is not None else 'none'}")
    print(f"best_train_acc={best:.4f}")
    log.info("model -> %s (best epoch %d)", args.model_out, curve.best_epoch)
    return 0


def cmd_embed(args) -> int:
    net = model.load_model(args.model)
    seqs = _load_split(args.manifest)
    evaluation.write_embeddings(args.out, [model.embed(net, seq) for seq in seqs])
    log.info("wrote %d embeddings -> %s", len(seqs), args.out)
    return 0


def cmd_lda(args) -> int:
    embeddings = evaluation.read_embeddings(args.embeddings)
    lda = evaluation.lda_fit(embeddings, d=args.dim, shrinkage=args.shrinkage)
    evaluation.save_lda(args.out, lda)
    log.info("LDA %dx%d -> %s", *lda.projection.shape, args.out)
    return 0


def cmd_score(args) -> int:
    trials = evaluation.read_trials(args.trials)
    embeddings = evaluation.read_embeddings(args.embeddings)
    if args.lda:
        lda = evaluation.load_lda(args.lda)
        embeddings = [evaluation.lda_project(lda, e) for e in embeddings]
    store = {e.utt_id: e for e in embeddings}
    evaluation.write_scores(args.out, evaluation.score_trials(trials, store))
    log.info("scored %d trials -> %s", len(trials), args.out)
    return 0


def cmd_eer(args) -> int:
    trials = evaluation.read_trials(args.trials)
    scores = evaluation.read_scores(args.scores)
    if len(trials) != len(scores):
        raise ValidationError(f"{len(scores)} scores for {len(trials)} trials")
    target, nontarget = [], []
    for tr, (enroll, test, score) in zip(trials, scores):
        if (tr.enroll_utt, tr.test_utt) != (enroll, test):
            raise ValidationError(f"score row ({enroll},{test}) does not match trial list order")
        (target if tr.target else nontarget).append(score)
    print(f"{evaluation.compute_eer(target, nontarget):.4f}")
    return 0


def cmd_identify(args) -> int:
    net = model.load_model(args.model)
    seqs = _load_split(args.manifest)
    class_map = train.class_map_for(seqs)
    if len(class_map) != net.config.num_classes:
        raise ValidationError(
            f"manifest has {len(class_map)} speakers, model classifies {net.config.num_classes}"
        )
    logits = [model.forward(net, seq)[0] for seq in seqs]
    labels = [class_map[seq.speaker_id] for seq in seqs]
    print(f"{evaluation.top1_accuracy(logits, labels):.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctdnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="extract MFCC features from a directory of WAV files")
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--manifest-out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--feature-dir", default=None)
    p.add_argument("--strict", action="store_true", help="exit nonzero if any file fails")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("synth", help="generate a synthetic speaker corpus")
    p.add_argument("--spec-file", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a classifier on a feature manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--arch", default=None, help="tdnn-paper, ctdnn-paper, or DSL text")
    p.add_argument("--config", default=None)
    p.add_argument("--model-out", required=True)
    p.add_argument("--curve-out", default=None)
    p.add_argument("--val-manifest", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="extract pooled speaker embeddings")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("lda", help="fit a discriminant projection on labeled embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--shrinkage", type=float, default=None)
    p.set_defaults(func=cmd_lda)

    p = sub.add_parser("score", help="cosine-score a trial list")
    p.add_argument("--trials", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--lda", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eer", help="equal error rate of a score file against its trial list")
    p.add_argument("--scores", required=True)
    p.add_argument("--trials", required=True)
    p.set_defaults(func=cmd_eer)

    p = sub.add_parser("identify", help="closed-set top-1 accuracy of a model on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_identify)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ArchSyntaxError, ArchSemanticError) as e:
        log.error("%s", e)
        return 2
    except (CtdnnError, OSError) as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
