"""Command-line entry point.

Each subcommand reads an optional ``--config`` file, applies flag overrides,
and writes its artifacts under the run directory (``--out``, default the
config's ``output_dir``).  Failures print one JSON line on stderr and exit 1;
argparse usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline, plots
from . import tensor as T
from .bundle import load_base, load_bundle, load_codec, save_base, save_bundle, save_codec
from .config import RunConfig, deterministic_mode, load_config, parse_config, save_config
from .errors import GlyphFusionError
from .glyphs import GlyphSpec, compose_word, coverage, rasterize, resolve_font
from .io import list_images, read_image, write_csv, write_pgm, write_png

logger = logging.getLogger("glyphfusion")

CODEC_FILE = "codec.dsfc"
BASE_FILE = "base.dsfp"
BUNDLE_FILE = "bundle.dsfb"
CLASSIFIER_FILE = "classifier.dsfk"
SAMPLE_DIR = "samples"


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _color(text: str) -> tuple[float, float, float]:
    vals = _floats(text)
    if len(vals) != 3 or not all(0 <= v <= 1 for v in vals):
        raise argparse.ArgumentTypeError(f"expected r,g,b in [0,1], got {text!r}")
    return tuple(vals)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value run configuration")
    p.add_argument("--out", type=Path, help="run directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded numerics (also DSF_DETERMINISTIC=1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glyphfusion",
                                     description="Style-to-glyph diffusion with a latent discriminator.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("render-glyph", help="rasterize text with a stroke font")
    p.add_argument("--text", required=True)
    p.add_argument("--font", default="mono-a", help="bundled font name or .sf path")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--color", type=_color, default=(0.0, 0.0, 0.0))
    p.add_argument("--thickness", type=float, default=1.0)
    p.add_argument("--slant", type=float, default=0.0)
    p.add_argument("--output", type=Path, required=True, help="PNG path")
    p.add_argument("--mask", type=Path, help="also write the coverage mask as PGM")

    p = sub.add_parser("train-codec", help="fit and freeze the image codec, then pretrain the denoiser")
    _common(p)

    p = sub.add_parser("train", help="adversarial diffusion fine-tuning")
    _common(p)
    p.add_argument("--codec", type=Path, help=f"codec checkpoint (default RUN/{CODEC_FILE})")
    p.add_argument("--base", type=Path, help=f"pretrained denoiser (default RUN/{BASE_FILE})")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--text")

    p = sub.add_parser("sample", help="draw candidates and a contact sheet")
    _common(p)
    p.add_argument("--bundle", type=Path)
    p.add_argument("--n", type=int, help="number of candidates")
    p.add_argument("--sampler", choices=("ddim", "ddpm"))
    p.add_argument("--steps", type=int)
    p.add_argument("--eta", type=float)

    p = sub.add_parser("rank", help="score candidates and report the Pareto front")
    _common(p)
    p.add_argument("--samples", type=Path, help=f"candidate directory (default RUN/{SAMPLE_DIR})")
    p.add_argument("--scatter-csv", type=Path, help="also write raw (glyph, style) points")

    p = sub.add_parser("eval", help="OCR and style metrics as CSV")
    _common(p)
    p.add_argument("--samples", type=Path)
    p.add_argument("--tag", default="ours", help="method_tag column value")
    p.add_argument("--blur-sigma", type=float)

    p = sub.add_parser("compose", help="place a stylised letter inside a word")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--word", required=True)
    p.add_argument("--position", type=int, required=True)
    p.add_argument("--font", default="mono-a")
    p.add_argument("--color", default="dominant", help="dominant, spec, or r,g,b")
    p.add_argument("--output", type=Path, required=True)

    p = sub.add_parser("ablate-lambda", help="glyph IoU across discriminator weights")
    _common(p)
    p.add_argument("--lambdas", type=_floats, default=[0.0, 0.01, 1.0])
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    p.add_argument("--n", type=int, default=8, help="samples per run")
    p.add_argument("--codec", type=Path)
    p.add_argument("--base", type=Path)

    p = sub.add_parser("ablate-style-count", help="sample diversity across corpus sizes")
    _common(p)
    p.add_argument("--counts", type=_ints, default=[2, 25])
    p.add_argument("--seeds", type=_ints, default=[0])
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--steps", type=int,
                   help="equal generator-update budget per count (default: configured epochs)")
    p.add_argument("--codec", type=Path)
    p.add_argument("--base", type=Path)
    return parser


# -- helpers ------------------------------------------------------------------------------


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "deterministic", False):
        changes["deterministic"] = True
    if getattr(args, "out", None) is not None:
        changes["output_dir"] = str(args.out)
    for flag, key in (("lam", "lam"), ("epochs", "epochs"), ("text", "text"), ("n", "n_candidates"),
                      ("sampler", "sampler"), ("steps", "sampler_steps"), ("eta", "eta"),
                      ("blur_sigma", "blur_sigma")):
        value = getattr(args, flag, None)
        if value is not None and args.command not in ("ablate-lambda", "ablate-style-count"):
            changes[key] = value
    return cfg.with_overrides(**changes) if changes else cfg


def _run_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _codec(cfg: RunConfig, path: Path | None):
    path = path or (Path(cfg.codec_path) if cfg.codec_path else _run_dir(cfg) / CODEC_FILE)
    if not path.is_file():
        raise GlyphFusionError(f"codec checkpoint {path} not found; run train-codec first")
    return load_codec(path)


def _base(cfg: RunConfig, path: Path | None):
    """Pretrained denoiser weights, or ``None`` to train from scratch (``base_steps = 0``)."""
    explicit = path or (Path(cfg.base_path) if cfg.base_path else None)
    if explicit is None and cfg.base_steps == 0:
        return None
    path = explicit or _run_dir(cfg) / BASE_FILE
    if not path.is_file():
        raise GlyphFusionError(f"denoiser checkpoint {path} not found; run train-codec first")
    return load_base(path)


def _candidates(directory: Path):
    paths = [p for p in list_images(directory) if p.name.startswith("cand_")]
    if not paths:
        raise GlyphFusionError(f"no candidate images (cand_*.png) in {directory}")
    return paths, [read_image(p, 64) for p in paths]


def _contact_sheet(images, columns: int = 8) -> np.ndarray:
    n = len(images)
    cols = min(columns, n)
    rows = -(-n // cols)
    h, w = images[0].shape[1:]
    sheet = np.ones((3, rows * (h + 2) + 2, cols * (w + 2) + 2))
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        sheet[:, 2 + r * (h + 2):2 + r * (h + 2) + h, 2 + c * (w + 2):2 + c * (w + 2) + w] = img
    return sheet


def _write_manifest(path: Path, rows) -> None:
    write_csv(path, ("file", "seed", "index"), rows)


# -- subcommands --------------------------------------------------------------------------


def cmd_render_glyph(args) -> dict:
    spec = GlyphSpec(args.text, resolve_font(args.font), args.size, args.color,
                     thickness_scale=args.thickness, slant=args.slant)
    write_png(args.output, rasterize(spec))
    out = {"image": str(args.output)}
    if args.mask:
        write_pgm(args.mask, coverage(spec) > 0.5)
        out["mask"] = str(args.mask)
    return out


def cmd_train_codec(args, cfg: RunConfig) -> dict:
    run = _run_dir(cfg)
    codec = pipeline.build_codec(cfg)
    save_codec(codec, run / CODEC_FILE)
    write_csv(run / "codec_loss.csv", ("epoch", "mse"), enumerate(codec.history))
    out = {"codec": str(run / CODEC_FILE), "final_mse": codec.history[-1]}
    base = pipeline.build_base(cfg, codec)
    if base is not None:
        save_base(base, run / BASE_FILE)
        write_csv(run / "base_loss.csv", ("step", "l_diff"), enumerate(base["loss"]))
        out["base"] = str(run / BASE_FILE)
    return out


def cmd_train(args, cfg: RunConfig) -> dict:
    run = _run_dir(cfg)
    codec = _codec(cfg, args.codec)

    def progress(epoch, row):
        logger.info("epoch %d l_diff %.4f l_dis %.4f l_total %.4f", *row)

    bundle = pipeline.train(cfg, codec, progress=progress, base=_base(cfg, args.base))
    save_bundle(bundle, run / BUNDLE_FILE)
    save_config(cfg, run / "run.cfg")
    write_csv(run / "loss.csv", ("epoch", "l_diff", "l_dis", "l_total"),
              [(int(e), a, b, c) for e, a, b, c in bundle.history])
    plots.loss_curves(bundle.history, run / "loss.png")
    return {"bundle": str(run / BUNDLE_FILE), "epochs": len(bundle.history)}


def cmd_sample(args, cfg: RunConfig) -> dict:
    run = _run_dir(cfg)
    bundle = load_bundle(args.bundle or run / BUNDLE_FILE)
    images = pipeline.sample_images(bundle, cfg.n_candidates, cfg.seed, cfg.sampler,
                                    cfg.sampler_steps, cfg.eta)
    out = run / SAMPLE_DIR
    rows = []
    for i, img in enumerate(images):
        name = f"cand_{i:03d}.png"
        write_png(out / name, img)
        rows.append((name, cfg.seed, i))
    _write_manifest(out / "manifest.csv", rows)
    write_png(run / "contact.png", _contact_sheet(list(images)))
    return {"samples": str(out), "n": len(images)}


def _scorers(cfg: RunConfig, run: Path):
    clf = pipeline.classifier_for(cfg, run / CLASSIFIER_FILE)
    return clf, pipeline.scorer_for(cfg)


def cmd_rank(args, cfg: RunConfig) -> dict:
    from .ranking import rank_candidates

    run = _run_dir(cfg)
    paths, images = _candidates(args.samples or run / SAMPLE_DIR)
    clf, scorer = _scorers(cfg, run)
    cands = pipeline.score_candidates(images, cfg.text, clf, scorer,
                                      tags=[p.name for p in paths])
    ordered, front = rank_candidates(cands)
    on_front = {id(c) for c in front}
    rows = [(i + 1, c.tag, c.glyph_score, c.style_score, c.total, int(id(c) in on_front))
            for i, c in enumerate(ordered)]
    write_csv(run / "rank.csv", ("rank", "file", "glyph_score", "style_score", "score_sum", "pareto"),
              rows)
    write_png(run / "ranked_contact.png", _contact_sheet([c.image for c in ordered]))
    plots.rank_scatter([(c.glyph_score, c.style_score) for c in cands],
                       [id(c) in on_front for c in cands], run / "rank_scatter.png",
                       labels=[c.tag.removeprefix("cand_").removesuffix(".png") for c in cands])
    if args.scatter_csv:
        write_csv(args.scatter_csv, ("file", "glyph_score", "style_score"),
                  [(c.tag, c.glyph_score, c.style_score) for c in cands])
    return {"report": str(run / "rank.csv"), "front": [c.tag for c in front]}


def cmd_eval(args, cfg: RunConfig) -> dict:
    from .ranking import ocr_accuracy

    run = _run_dir(cfg)
    _, images = _candidates(args.samples or run / SAMPLE_DIR)
    clf, scorer = _scorers(cfg, run)
    if len(cfg.text) != 1:
        raise GlyphFusionError(f"eval scores single letters; text is {cfg.text!r}")
    labels = [cfg.text] * len(images)
    row = (args.tag, ocr_accuracy(images, labels, clf),
           ocr_accuracy(images, labels, clf, cfg.blur_sigma),
           float(scorer.score(np.stack(images)).mean()))
    write_csv(run / "eval.csv", ("method_tag", "ocr", "ocr_blurred", "style_score"), [row])
    return {"report": str(run / "eval.csv"), "ocr": row[1], "ocr_blurred": row[2],
            "style_score": row[3]}


def cmd_compose(args) -> dict:
    color = args.color if args.color in ("dominant", "spec") else _color(args.color)
    image = read_image(args.image, 64)
    spec = GlyphSpec(args.word, resolve_font(args.font), image.shape[1])
    write_png(args.output, compose_word(image, args.position, spec, color=color))
    return {"image": str(args.output)}


def _ablation_report(run: Path, stem: str, column: str, metric: str, rows, log_x: bool) -> dict:
    write_csv(run / f"{stem}.csv", (column, "seed", metric, "seconds"),
              [(r.value, r.seed, r.metric, r.seconds) for r in rows])
    summary = pipeline.summarize(rows)
    write_csv(run / f"{stem}_summary.csv", (column, f"mean_{metric}", f"std_{metric}"),
              [(v, m, s) for v, (m, s) in summary.items()])
    xs = list(summary)
    plots.ablation_plot(xs, [summary[x][0] for x in xs], [summary[x][1] for x in xs],
                        run / f"{stem}.png", column, metric, log_x=log_x)
    return {"report": str(run / f"{stem}.csv"),
            "summary": {f"{k:g}": round(v[0], 6) for k, v in summary.items()}}


def cmd_ablate_lambda(args, cfg: RunConfig) -> dict:
    run = _run_dir(cfg)
    rows = pipeline.ablate_lambda(cfg, _codec(cfg, args.codec), args.lambdas, args.seeds, args.n,
                                  base=_base(cfg, args.base))
    return _ablation_report(run, "ablation_lambda", "lambda", "iou", rows, log_x=True)


def cmd_ablate_style_count(args, cfg: RunConfig) -> dict:
    run = _run_dir(cfg)
    rows = pipeline.ablate_style_count(cfg, _codec(cfg, args.codec), args.counts, args.seeds,
                                       args.n, base=_base(cfg, args.base), steps=args.steps)
    return _ablation_report(run, "ablation_style_count", "style_image_count", "diversity", rows,
                            log_x=False)


COMMANDS = {
    "train-codec": cmd_train_codec,
    "train": cmd_train,
    "sample": cmd_sample,
    "rank": cmd_rank,
    "eval": cmd_eval,
    "ablate-lambda": cmd_ablate_lambda,
    "ablate-style-count": cmd_ablate_style_count,
}


def _error_line(exc: BaseException) -> str:
    # KeyError's str() is the repr of its argument; report the plain text instead
    message = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
    payload = {"error": type(exc).__name__, "message": message}
    key = getattr(exc, "key", None)
    if key:
        payload["key"] = key
    return json.dumps(payload, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "render-glyph":
            result = cmd_render_glyph(args)
        elif args.command == "compose":
            result = cmd_compose(args)
        else:
            cfg = _config(args)
            with deterministic_mode(cfg.is_deterministic), T.default_dtype(cfg.numpy_dtype):
                result = COMMANDS[args.command](args, cfg)
    except (GlyphFusionError, OSError, ValueError, KeyError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
