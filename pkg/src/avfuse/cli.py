"""Command-line entry points.

Subcommands: gen-corpus, train, decode, eval, fuse, sweep. Exit codes:
0 on success, 2 for configuration or data-format errors, 3 for missing
artifacts (corpora, checkpoints, feature files).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .corpus import CorpusSpec, gen_corpus, load_split, _parse_labels
from .fusion import stream_weight_fuse
from .model import (
    DECODE_MODES,
    AvModelSpec,
    AvModel,
    decode_utterance,
    encode_streams,
    load_model,
    save_model,
)
from .reliability import (
    ReliabilityStream,
    assemble_reliability,
    audio_layout,
    load_visual_reliability,
)
from .streams import FeatureStream, load_features, save_features
from .sweep import SweepConfig, run_sweep, save_sweep_tsv
from .training import FUSION_PHASES, PHASES, TrainConfig, train_phase
from .vocab import Vocab
from .wer import wer_percent

__all__ = ["main"]


def _say(msg: str) -> None:
    print(msg)


def _fail(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# -- gen-corpus -----------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    for key in ("seed", "n_units", "train_utts", "dev_utts", "test_utts",
                "min_len", "max_len"):
        flag = getattr(args, key)
        if flag is not None:
            cfg[key] = flag
    spec = CorpusSpec.from_dict(cfg)
    counts = gen_corpus(spec, args.out)
    _say(f"corpus written to {args.out}: " +
         ", ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


# -- train ----------------------------------------------------------------------

_TRAIN_KEYS = ("epochs", "alpha", "warmup", "lr_factor", "batch", "seed",
               "joint_finetune")


def _split_train_config(raw: dict) -> tuple[dict, dict]:
    train_kwargs = {k: raw.pop(k) for k in list(raw) if k in _TRAIN_KEYS}
    return train_kwargs, raw


def cmd_train(args) -> int:
    raw = load_config(args.config) if args.config else {}
    train_kwargs, model_overrides = _split_train_config(dict(raw))
    for key in ("epochs", "alpha", "warmup", "lr_factor", "batch", "seed"):
        flag = getattr(args, key)
        if flag is not None:
            train_kwargs[key] = flag
    if args.joint_finetune:
        train_kwargs["joint_finetune"] = True
    cfg = TrainConfig(**train_kwargs)

    if args.phase in FUSION_PHASES and not args.init:
        raise ConfigError(
            f"phase {args.phase} fuses pretrained streams; pass --init with the "
            "checkpoint produced by the ao/vo phases"
        )

    utterances = load_split(args.corpus, "train")
    if args.init:
        if model_overrides:
            raise ConfigError(
                "model options " + ", ".join(sorted(model_overrides)) +
                " conflict with --init; the checkpoint fixes the architecture"
            )
        model = load_model(args.init)
    else:
        vocab = Vocab.load(Path(args.corpus) / "vocab.txt")
        first = utterances[0]
        spec = AvModelSpec.from_dict(dict(
            vocab_size=len(vocab),
            audio_dim=first.audio.dim,
            video_dim=first.video.dim,
            rel_audio_dim=first.rel_audio.frames.shape[1],
            rel_video_dim=first.rel_video.frames.shape[1],
            **model_overrides,
        ))
        model = AvModel(spec)

    losses = train_phase(model, utterances, args.phase, cfg,
                         dump_path=str(args.out) + ".diverged",
                         log=_say if not args.quiet else None)
    save_model(args.out, model)
    curve = "\n".join(f"{i + 1}\t{loss!r}" for i, loss in enumerate(losses))
    Path(str(args.out) + ".loss.tsv").write_text("epoch\tloss\n" + curve + "\n")
    _say(f"phase {args.phase}: loss {losses[0]:.4f} -> {losses[-1]:.4f}; "
         f"checkpoint at {args.out}")
    return 0


# -- decode / eval ----------------------------------------------------------------


def _read_hyp_file(path) -> dict[str, list[str]]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    out = {}
    for ln in p.read_text().splitlines():
        if not ln.strip():
            continue
        utt_id, _, words = ln.partition("\t")
        out[utt_id] = words.split()
    return out


def cmd_decode(args) -> int:
    model = load_model(args.ckpt)
    model.set_requires_grad(False)
    lm = None
    if args.lm:
        lm = load_model(args.lm).lm
    vocab = Vocab.load(Path(args.corpus) / "vocab.txt")
    utterances = load_split(args.corpus, args.split)
    if args.utt:
        utterances = [u for u in utterances if u.utt_id == args.utt]
        if not utterances:
            raise ConfigError(f"utterance {args.utt!r} not in split {args.split}")
    lines = []
    for utt in utterances:
        enc = encode_streams(model, utt.audio, utt.video,
                             utt.rel_audio, utt.rel_video, mode=args.mode)
        hyp = decode_utterance(model, enc, args.mode, alpha=args.alpha,
                               theta=args.theta, beam_size=args.beam,
                               max_len=args.max_len,
                               use_lm=args.theta > 0.0, lm=lm)
        lines.append(f"{utt.utt_id}\t{' '.join(vocab.decode(hyp.tokens))}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        _say(f"wrote {len(lines)} hypotheses to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    hyps_by_id = _read_hyp_file(args.hyp)
    if args.ref:
        refs_by_id = _read_hyp_file(args.ref)
    else:
        if not args.corpus:
            raise ConfigError("eval needs --ref or --corpus")
        rows = _parse_labels(Path(args.corpus) / args.split / "labels.tsv")
        refs_by_id = {r["id"]: r["words"] for r in rows}
    missing = sorted(set(refs_by_id) - set(hyps_by_id))
    if missing:
        raise ConfigError(f"hypotheses missing for: {', '.join(missing[:5])}")
    ids = sorted(refs_by_id)
    wer = wer_percent([hyps_by_id[i] for i in ids], [refs_by_id[i] for i in ids])
    _say(f"wer_percent {wer!r} over {len(ids)} utterances")
    return 0


# -- fuse -------------------------------------------------------------------------


def cmd_fuse(args) -> int:
    model = load_model(args.ckpt)
    model.set_requires_grad(False)
    grid_a = load_features(args.logp_a)
    grid_v = load_features(args.logp_v)
    arel_stream = load_features(args.rel_a)
    rel_a = ReliabilityStream(arel_stream.frames, audio_layout(arel_stream.dim - 4))
    vrel = load_visual_reliability(args.rel_v)
    a_rows, v_rows = assemble_reliability(rel_a, vrel, len(rel_a), len(vrel),
                                          subsample=False)
    xi_a = model.rel_a(a_rows)
    xi_v = model.rel_v(v_rows)
    n = grid_a.frames.shape[0]
    if xi_a.shape[0] != n or grid_v.frames.shape[0] != n:
        raise ConfigError(
            f"posterior grids have {n}/{grid_v.frames.shape[0]} rows but the "
            f"reliability embeddings subsample to {xi_a.shape[0]}; all four "
            "inputs must describe the same utterance"
        )
    if args.method == "dfn":
        fused = model.dfn_ctc(grid_a.frames, grid_v.frames, xi_a, xi_v)
    else:
        gam_a = model.weight_ctc(xi_a)
        gam_v = model.weight_ctc(xi_v)
        fused = stream_weight_fuse(grid_a.frames, grid_v.frames, gam_a, gam_v)
    save_features(args.out, FeatureStream(fused.data, grid_a.frame_shift, "audio"))
    _say(f"fused {args.method} grid ({n} frames) written to {args.out}")
    return 0


# -- sweep ------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    raw = load_config(args.config) if args.config else {}
    ckpt_overrides = {}
    for mode in DECODE_MODES:
        key = f"ckpt_{mode}"
        if key in raw:
            ckpt_overrides[mode] = raw.pop(key)
    for key in ("modes", "noise", "visual", "visual_strength", "alpha", "theta",
                "beam", "max_len", "seed"):
        flag = getattr(args, key, None)
        if flag is not None:
            raw[key] = flag
    if args.use_lm:
        raw["use_lm"] = True
    cfg = SweepConfig(**{k: v for k, v in raw.items()})
    checkpoints = {mode: ckpt_overrides.get(mode, args.ckpt) for mode in cfg.modes}
    result = run_sweep(checkpoints, args.corpus, cfg,
                       log=_say if not args.quiet else None)
    save_sweep_tsv(args.out, result)
    for mode in cfg.modes:
        avg = result.rows[mode]["avg."]
        _say(f"{mode}: avg {'failed' if avg is None else f'{avg:.2f}'}")
    _say(f"sweep table written to {args.out}")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avfuse",
        description="two-stream sequence recognition with reliability-driven fusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="synthesize a train/dev/test corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-units", dest="n_units", type=int)
    p.add_argument("--train", dest="train_utts", type=int)
    p.add_argument("--dev", dest="dev_utts", type=int)
    p.add_argument("--test", dest="test_utts", type=int)
    p.add_argument("--min-len", dest="min_len", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train one phase")
    p.add_argument("--corpus", required=True)
    p.add_argument("--phase", required=True, choices=PHASES)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--lr-factor", dest="lr_factor", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--joint-finetune", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode a split with one mode")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mode", required=True, choices=DECODE_MODES)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--max-len", dest="max_len", type=int, default=10)
    p.add_argument("--lm", help="checkpoint supplying the language model")
    p.add_argument("--utt", help="decode a single utterance id")
    p.add_argument("--out", help="write hypotheses here instead of stdout")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref")
    p.add_argument("--corpus")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="fuse serialized frame-level posterior grids")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--level", default="ctc", choices=("ctc",))
    p.add_argument("--method", default="dfn", choices=("dfn", "stream_weight"))
    p.add_argument("--logp-a", dest="logp_a", required=True)
    p.add_argument("--logp-v", dest="logp_v", required=True)
    p.add_argument("--rel-a", dest="rel_a", required=True)
    p.add_argument("--rel-v", dest="rel_v", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("sweep", help="WER grid over SNR conditions per mode")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--modes")
    p.add_argument("--noise")
    p.add_argument("--visual")
    p.add_argument("--vstrength", dest="visual_strength", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--beam", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--use-lm", dest="use_lm", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        _fail(str(exc))
        return 2
    except (FileNotFoundError, CheckpointError, KeyError) as exc:
        _fail(str(exc))
        return 3
    except ValueError as exc:
        _fail(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
