"""Command-line interface: ``switchvae <gen-data|train|eval-recon|eval-classify|latent>``.

Every subcommand accepts ``--config FILE`` (UTF-8 ``key = value`` lines, ``#``
comments, keys spelled like the long flags).  Config values fill in defaults
and explicit flags win.  Outputs go under ``<out-root>/<run-id>/`` where the
root is ``--out-root``, else ``$SWITCHVAE_OUT``, else ``./runs``.

Failures print one line to stderr, ``error: <code>: <message>``, and exit
nonzero (2 for invalid input, 1 for runtime failures).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import FAMILIES, DatasetConfig, build_dataset, load_manifest
from .data.render import MODES as RENDER_MODES
from .evalsuite import (
    classify_eval, embed2d, evaluate_reconstruction, extract_latents, read_bank_csv, svm_predict, svm_train,
    summarize, write_bank_csv, write_embedding_csv, write_metrics_csv,
)
from .latentlab import arithmetic, export_reconstructions, interpolate, traverse
from .losses import POLICIES, LossWeights
from .model import IMG, VOX, ModelConfig, SwitchVAE, load_checkpoint
from .trainer import MODES, PRECISIONS, TrainConfig, train

EXIT_INPUT, EXIT_RUNTIME = 2, 1


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    return [float(t) for t in _csv_list(text)]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config(path) -> dict[str, str]:
    """Parse a ``key = value`` file; keys are normalized to flag destinations."""
    out: dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError("config", f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config", f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file merged under the flags")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-id", default="run", help="output directory name under the output root")
    p.add_argument("--out-root", default=None, help="output root (default $SWITCHVAE_OUT or ./runs)")
    p.add_argument("--threads", type=int, default=1, help="BLAS worker cap (1 keeps runs bit-reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--latent-dim", type=int, default=128)
    p.add_argument("--gru-hidden", type=int, default=128)
    p.add_argument("--view-feature", type=int, default=64)
    p.add_argument("--image-channels", type=lambda s: [int(c) for c in _csv_list(s)], default=[8, 16, 32])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="switchvae", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"switchvae {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    _common(g)
    g.add_argument("--families", type=_csv_list, default=list(FAMILIES))
    g.add_argument("--count", type=int, default=50, help="samples per family")
    g.add_argument("--train-fraction", type=float, default=0.8)
    g.add_argument("--resolution", type=int, default=32)
    g.add_argument("--views", type=int, default=8)
    g.add_argument("--image-size", type=int, default=None)
    g.add_argument("--render-mode", choices=RENDER_MODES, default="silhouette")
    g.add_argument("--out", default=None, help="dataset directory (default <root>/<run-id>)")

    t = sub.add_parser("train", help="train a model")
    _common(t)
    _model_flags(t)
    t.add_argument("--data", required=False, help="dataset directory or manifest")
    t.add_argument("--mode", choices=MODES, default="switch")
    t.add_argument("--p-vox", type=float, default=0.8)
    t.add_argument("--lambda-kl", type=float, default=1e-3)
    t.add_argument("--lambda-contras", type=float, default=1.0)
    t.add_argument("--gamma", type=float, default=0.8)
    t.add_argument("--policy", choices=POLICIES, default="both")
    t.add_argument("--normalize-latents", type=_bool, default=False)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=2e-4)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--precision", choices=tuple(PRECISIONS), default="float64")
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--micro-batch", type=int, default=0)
    t.add_argument("--clip-norm", type=float, default=0.0)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")

    r = sub.add_parser("eval-recon", help="reconstruction metrics on a split")
    _common(r)
    r.add_argument("--checkpoint", required=False)
    r.add_argument("--data", required=False)
    r.add_argument("--split", default="test")
    r.add_argument("--modality", choices=(VOX, IMG), default=VOX)
    r.add_argument("--threshold", type=float, default=0.5)

    c = sub.add_parser("eval-classify", help="SVM accuracy on frozen latents")
    _common(c)
    c.add_argument("--checkpoint", required=False)
    c.add_argument("--data", default=None, help="one manifest providing both train and test splits")
    c.add_argument("--svm-train-manifest", default=None)
    c.add_argument("--svm-test-manifest", default=None)
    c.add_argument("--modality", choices=(VOX, IMG), default=VOX)
    c.add_argument("--C", dest="svm_c", type=float, default=1.0)
    c.add_argument("--gamma-svm", type=float, default=None, help="RBF bandwidth (default 1/latent_dim)")

    lt = sub.add_parser("latent", help="interpolate, arithmetic or traverse in latent space")
    _common(lt)
    lt.add_argument("op", choices=("interpolate", "arithmetic", "traverse"))
    lt.add_argument("--checkpoint", required=False)
    lt.add_argument("--data", default=None, help="manifest to encode codes from")
    lt.add_argument("--bank", default=None, help="latent-bank CSV to take codes from")
    lt.add_argument("--split", default="all")
    lt.add_argument("--modality", choices=(VOX, IMG), default=VOX)
    lt.add_argument("--from", dest="id_from")
    lt.add_argument("--to", dest="id_to")
    lt.add_argument("--steps", type=int, default=8)
    lt.add_argument("--base")
    lt.add_argument("--plus")
    lt.add_argument("--minus")
    lt.add_argument("--id", dest="id_code")
    lt.add_argument("--dim", type=int, default=0)
    lt.add_argument("--values", type=_floats, default=[-2.0, 0.0, 2.0])
    lt.add_argument("--threshold", type=float, default=0.5)
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise CliError("usage", "missing subcommand; expected one of gen-data, train, eval-recon, eval-classify, latent")
    if getattr(args, "config", None):
        cfg = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        dests = {a.dest for a in sub._actions} - {"help", "config", "op"}
        unknown = sorted(set(cfg) - dests)
        if unknown:
            raise CliError("config", f"unknown config keys {unknown} for {args.command}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def out_dir(args) -> Path:
    root = args.out_root or os.environ.get("SWITCHVAE_OUT") or "runs"
    if not args.run_id or "/" in args.run_id or args.run_id in (".", ".."):
        raise CliError("run-id", f"invalid run id {args.run_id!r}")
    return Path(root) / args.run_id


def _require(args, *names) -> None:
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise CliError("missing-flag", f"--{name.replace('_', '-')} is required for {args.command}")


def _load_model(path) -> SwitchVAE:
    ckpt = load_checkpoint(path)
    return SwitchVAE(ckpt.config, ckpt.params)


def cmd_gen_data(args) -> int:
    out = Path(args.out) if args.out else out_dir(args)
    if args.count < 0:
        raise CliError("invalid-value", f"--count must be non-negative, got {args.count}")
    cfg = DatasetConfig(families=tuple(args.families), counts=args.count, train_fraction=args.train_fraction,
                        seed=args.seed, resolution=args.resolution, views=args.views,
                        image_size=args.image_size, mode=args.render_mode)
    manifest = build_dataset(cfg, out)
    print(f"samples={len(manifest.samples)} train={len(manifest.split('train'))} "
          f"test={len(manifest.split('test'))} out={out}")
    return 0


def cmd_train(args) -> int:
    _require(args, "data")
    manifest = load_manifest(args.data)
    manifest.validate()
    render = manifest.render
    mcfg = ModelConfig(latent_dim=args.latent_dim, resolution=manifest.resolution, views=render["views"],
                       view_height=render["height"], view_width=render["width"],
                       view_channels=render.get("channels", 1), image_channels=tuple(args.image_channels),
                       view_feature=args.view_feature, gru_hidden=args.gru_hidden)
    weights = LossWeights(lambda_kl=args.lambda_kl, lambda_contras=args.lambda_contras, gamma=args.gamma,
                          policy=args.policy, normalize_latents=args.normalize_latents)
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr0=args.lr, momentum=args.momentum,
                       p_vox=args.p_vox, mode=args.mode, weights=weights, seed=args.seed,
                       precision=args.precision, checkpoint_every=args.checkpoint_every,
                       micro_batch=args.micro_batch, clip_norm=args.clip_norm)
    out = out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    record = {"model": mcfg.to_dict(), "train": {k: v for k, v in vars(args).items() if k != "func"}}
    (out / "config.json").write_text(json.dumps(record, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    result = train(manifest, mcfg, tcfg, out, resume=args.resume)
    last = result.records[-1] if result.records else None
    summary = f"epochs={len(result.records)} out={out}"
    if last is not None:
        summary += f" recon={last.recon:.6g} total={last.total:.6g} latent_var={last.latent_var:.6g}"
    print(summary)
    return 0


def cmd_eval_recon(args) -> int:
    _require(args, "checkpoint", "data")
    model = _load_model(args.checkpoint)
    manifest = load_manifest(args.data)
    rows = evaluate_reconstruction(model, manifest, args.split, args.modality, args.threshold)
    if not rows:
        raise CliError("empty-split", f"split {args.split!r} has no samples")
    out = out_dir(args)
    write_metrics_csv(rows, out / f"recon_{args.split}_{args.modality}.csv")
    s = summarize([m for _, m in rows])
    print(f"iou={s.iou:.6f} precision={s.precision:.6f} recall={s.recall:.6f} accuracy={s.accuracy:.6f} n={len(rows)}")
    return 0


def cmd_eval_classify(args) -> int:
    _require(args, "checkpoint")
    model = _load_model(args.checkpoint)
    train_src = args.svm_train_manifest or args.data
    test_src = args.svm_test_manifest or args.data
    if not train_src or not test_src:
        raise CliError("missing-flag", "need --data or both --svm-train-manifest and --svm-test-manifest")
    separate = args.svm_train_manifest is not None and args.svm_test_manifest is not None
    train_bank = extract_latents(model, load_manifest(train_src), "all" if separate else "train", args.modality)
    test_bank = extract_latents(model, load_manifest(test_src), "all" if separate else "test", args.modality)
    acc = classify_eval(train_bank, test_bank, args.svm_c, args.gamma_svm)
    out = out_dir(args)
    write_bank_csv(train_bank, out / f"latents_train_{args.modality}.csv")
    write_bank_csv(test_bank, out / f"latents_test_{args.modality}.csv")
    write_embedding_csv(embed2d(test_bank), out / f"embedding_test_{args.modality}.csv")
    svm = svm_train(train_bank.vectors, train_bank.labels, args.svm_c, args.gamma_svm)
    pred = svm_predict(svm, test_bank.vectors)
    with open(out / f"classify_{args.modality}.csv", "w", encoding="utf-8", newline="\n") as fp:
        fp.write("id,label,predicted\n")
        for sid, lab, p in zip(test_bank.ids, test_bank.labels, pred):
            fp.write(f"{sid},{int(lab)},{int(p)}\n")
        fp.write(f"accuracy,,{acc:.17g}\n")
    print(f"accuracy={acc:.6f}")
    return 0


def cmd_latent(args) -> int:
    _require(args, "checkpoint")
    model = _load_model(args.checkpoint)
    if args.bank:
        bank = read_bank_csv(args.bank)
    elif args.data:
        bank = extract_latents(model, load_manifest(args.data), args.split, args.modality)
    else:
        raise CliError("missing-flag", "latent needs --bank or --data to look codes up by id")

    def code(flag: str):
        sid = getattr(args, flag)
        if not sid:
            name = {"id_from": "from", "id_to": "to", "id_code": "id"}.get(flag, flag)
            raise CliError("missing-flag", f"--{name} is required for latent {args.op}")
        try:
            return bank.vector(sid)
        except KeyError as exc:
            raise CliError("unknown-id", str(exc.args[0])) from None

    if args.op == "interpolate":
        codes = interpolate(code("id_from"), code("id_to"), args.steps)
    elif args.op == "arithmetic":
        codes = [arithmetic(code("base"), code("plus"), code("minus"))]
    else:
        codes = traverse(code("id_code"), args.dim, args.values)
    out = out_dir(args) / args.op
    files = export_reconstructions(codes, model, out, prefix=args.op, threshold=args.threshold)
    print(f"codes={len(codes)} files={len(files)} out={out}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval-recon": cmd_eval_recon,
            "eval-classify": cmd_eval_classify, "latent": cmd_latent}


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads < 1:
            raise CliError("invalid-value", f"--threads must be at least 1, got {args.threads}")
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=args.threads), np.errstate(over="ignore"):
            return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc.code}: {_one_line(exc)}", file=sys.stderr)
        return exc.status
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - top-level guard keeps errors single-line
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
