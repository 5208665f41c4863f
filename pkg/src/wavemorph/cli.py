"""Command line interface wiring the modules into reproducible experiments.

Subcommands: synth, decompose, rank-bands, train, evaluate, reconstruct.
A shared ``--config`` file (key=value lines) supplies defaults; explicit
flags win over the file, the file wins over built-in defaults. Every
output artifact embeds the run configuration that produced it (JSON field
for .json outputs, a leading ``# run_config:`` comment for CSVs).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, backend, bandstats, embednet, evalkit, imaging, pipeline, wavelet
from .errors import WavemorphError

DEFAULT_SIZE = 160


# ---------------------------------------------------------------------------
# Config file handling


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "yes"):
        return True
    if low in ("false", "no"):
        return False
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def load_config_file(path) -> dict:
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise WavemorphError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = _coerce(value.strip())
    return out


# ---------------------------------------------------------------------------
# Shared helpers


def _load_manifests(paths) -> list[imaging.ManifestEntry]:
    """Merge one or more manifests; with several, subject ids are
    namespaced per manifest and image paths made absolute."""
    merged = []
    many = len(paths) > 1
    for i, mp in enumerate(paths):
        entries = imaging.parse_manifest(mp)
        for e in entries:
            abs_path = str(imaging.resolve_entry_path(mp, e))
            prefix = f"d{i}:" if many else ""
            merged.append(
                imaging.ManifestEntry(
                    abs_path,
                    prefix + e.subject_id,
                    e.label,
                    tuple(prefix + c for c in e.contributors),
                    e.split_hint,
                )
            )
    return merged


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _parse_blocks(spec: str | None):
    """Parse a 'filters:kernel:stride,...' block spec; None keeps the
    built-in architecture."""
    if not spec:
        return embednet.DEFAULT_BLOCKS
    blocks = []
    for part in spec.split(","):
        fields = part.split(":")
        if len(fields) != 3:
            raise WavemorphError(
                f"bad block spec {part!r}; expected filters:kernel:stride"
            )
        try:
            blocks.append(tuple(int(v) for v in fields))
        except ValueError:
            raise WavemorphError(f"bad block spec {part!r}; integers required")
    return tuple(blocks)


def _load_mask(path) -> list[str]:
    with open(path) as f:
        data = json.load(f)
    if "bands" not in data or not data["bands"]:
        raise WavemorphError(f"{path}: no 'bands' list in selection mask")
    return list(data["bands"])


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args):
    manifest = imaging.synth_dataset(
        args.seed, args.subjects, args.per_subject, args.out, size=args.size
    )
    print(manifest)
    return 0


def cmd_decompose(args):
    fb = wavelet.filter_bank(args.family)
    img = imaging.load_image(getattr(args, "in"))
    rc = _run_config(args, input=str(getattr(args, "in")))
    if args.mode == "gray":
        g = imaging.to_grayscale(img)
        if args.size:
            g = imaging.resize_bilinear(g, args.size, args.size)
        bands = wavelet.decompose_48(g, fb)
    else:
        if img.ndim == 2:
            img = np.stack([img] * 3, axis=-1)
        if args.size:
            img = np.stack(
                [imaging.resize_bilinear(img[:, :, c], args.size, args.size) for c in range(3)],
                axis=-1,
            )
        bands = wavelet.decompose_rgb(img, fb)
    sidecar = wavelet.dump_bands(bands, args.out, run_config=rc)
    print(f"{len(bands)} bands -> {args.out} ({sidecar.name})")
    return 0


def cmd_reconstruct(args):
    fb = wavelet.filter_bank(args.family)
    img = imaging.load_image(getattr(args, "in"))
    if args.mode == "gray":
        img = imaging.to_grayscale(img)
    if args.drop_ll:
        out = wavelet.ll_removed_image(img, fb)
    else:
        pyr = wavelet.full_pyramid(imaging.to_grayscale(img) if img.ndim == 3 else img, fb, 1)
        out = wavelet.swt_inverse(pyr, fb, 1)
    out_path = Path(args.out)
    imaging.save_image(out_path, np.clip(out, 0.0, 1.0))
    np.save(out_path.with_suffix(".npy"), out)
    _write_json(out_path.with_suffix(".json"), {"run_config": _run_config(args)})
    print(out_path)
    return 0


def cmd_rank_bands(args):
    bins = args.entropy_bins
    fb = wavelet.filter_bank(args.family)
    paths = wavelet.subband_paths()
    per_dataset_scores = []
    names = []
    for mp in args.manifest:
        entries = imaging.parse_manifest(mp)
        ent: dict[str, dict[str, list[float]]] = {
            p: {"bona_fide": [], "morph": []} for p in paths
        }
        for e in entries:
            img = imaging.load_image(imaging.resolve_entry_path(mp, e))
            g = imaging.resize_bilinear(imaging.to_grayscale(img), args.size, args.size)
            bands = wavelet.decompose_48(g, fb)
            for p in paths:
                ent[p][e.label].append(bandstats.band_entropy(bands[p], bins))
        per_dataset_scores.append(
            bandstats.dataset_band_scores(
                ent, direction=args.kld_direction, symmetric=args.symmetric_kld
            )
        )
        names.append(Path(mp).stem if len(args.manifest) == 1 else f"d{len(names)}_{Path(mp).stem}")

    kld_vectors = [
        np.array([scores[p].kld for p in paths]) for scores in per_dataset_scores
    ]
    avg = bandstats.normalize_and_average(kld_vectors)
    avg_map = dict(zip(paths, avg))
    mask = bandstats.select_top_k(avg_map, args.k)
    full_rank = bandstats.select_top_k(avg_map, len(paths))
    rank_of = {b: i + 1 for i, b in enumerate(full_rank)}

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rc = _run_config(args, datasets=names)
    with open(out_dir / "band_ranking.csv", "w", newline="") as f:
        f.write(f"# run_config: {json.dumps(rc, sort_keys=True)}\n")
        f.write("band_id," + ",".join(f"kld_{n}" for n in names) + ",normalized_avg,rank\n")
        for p in paths:
            klds = ",".join(f"{scores[p].kld:.12g}" for scores in per_dataset_scores)
            f.write(f"{p},{klds},{avg_map[p]:.12g},{rank_of[p]}\n")
    _write_json(out_dir / "selection_mask.json", {"bands": mask, "k": args.k, "run_config": rc})
    print(out_dir / "selection_mask.json")
    return 0


def cmd_train(args):
    entries = _load_manifests(args.manifest)
    mask = _load_mask(args.mask)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = pipeline.BandCache(
        args.manifest[0], args.family, mask, args.mode, size=args.size,
        cache_dir=args.cache_dir or out_dir / "band_cache",
    )
    plan = pipeline.make_split(entries, fraction=args.split_fraction, seed=args.seed)
    pairs = pipeline.build_pairs(entries, plan)
    net = embednet.init_net(
        embednet.EmbedNetConfig(in_channels=cache.channels, seed=args.seed,
                                embedding_dim=args.embedding_dim,
                                blocks=_parse_blocks(args.blocks))
    )
    tc = pipeline.TrainConfig(
        batch_size=args.batch, lr0=args.lr, plateau_patience=args.plateau,
        stop_patience=args.stop, max_epochs=args.max_epochs, margin=args.margin,
        seed=args.seed, augment=not args.no_augment,
    )
    result = pipeline.train(net, pairs, cache, tc)

    rc = _run_config(args, pair_counts={k: len(v) for k, v in pairs.items()})
    _write_json(out_dir / "split_plan.json", {"plan": plan.to_dict(), "run_config": rc})
    with open(out_dir / "training_log.csv", "w", newline="") as f:
        f.write(f"# run_config: {json.dumps(rc, sort_keys=True)}\n")
        f.write("epoch,lr,train_loss,val_loss,is_best\n")
        for row in result.log:
            f.write(
                f"{row.epoch},{row.lr:.12g},{row.train_loss:.12g},"
                f"{row.val_loss:.12g},{int(row.is_best)}\n"
            )
    embednet.save_checkpoint(
        net, None, out_dir / "model.ckpt",
        selection_mask=mask, family=args.family, mode=args.mode, run_config=rc,
    )
    print(f"stopped: {result.stop_reason}; best val loss {result.best_val:.6g}")
    print(out_dir / "model.ckpt")
    return 0


def cmd_evaluate(args):
    net, _state, header = embednet.load_checkpoint(args.ckpt)
    mask = _load_mask(args.mask) if args.mask else list(header["selection_mask"])
    mode = args.mode or header.get("mode", "gray")
    family = header.get("family", args.family)
    entries = _load_manifests(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = pipeline.BandCache(
        args.manifest[0], family, mask, mode, size=args.size,
        cache_dir=args.cache_dir or out_dir / "band_cache",
    )
    if args.split_from:
        with open(args.split_from) as f:
            plan = pipeline.SplitPlan.from_dict(json.load(f)["plan"])
    else:
        subjects = sorted({e.subject_id for e in entries if e.label == "bona_fide"})
        plan = pipeline.SplitPlan((), (), tuple(subjects), ())
    pairs = pipeline.build_pairs(entries, plan)[args.subset]
    if not pairs:
        raise WavemorphError(f"no pairs in subset {args.subset!r}")
    scores, rows = evalkit.score_pairs(net, pairs, cache, batch_size=args.batch)

    rc = _run_config(args, family=family, mode=mode, n_pairs=len(pairs))
    with open(out_dir / "scores.csv", "w", newline="") as f:
        f.write(f"# run_config: {json.dumps(rc, sort_keys=True)}\n")
        f.write("pair_id,distance,label\n")
        for pid, dist, y in rows:
            f.write(f"{pid},{dist:.12g},{'morph' if y else 'genuine'}\n")
    summary = evalkit.metrics_summary(scores)
    summary["run_config"] = rc
    _write_json(out_dir / "metrics.json", summary)
    curve = evalkit.det_curve(scores)
    evalkit.write_det_csv(curve, out_dir / "det.csv", run_config=rc)
    evalkit.write_det_svg(curve, out_dir / "det.svg", run_config=rc)
    print(json.dumps({k: summary[k] for k in ("d_eer",)}))
    print(out_dir / "metrics.json")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _run_config(args, **extra) -> dict:
    keep = (
        "family", "entropy_bins", "kld_direction", "symmetric_kld", "k", "mode",
        "seed", "size", "batch", "lr", "plateau", "stop", "max_epochs", "margin",
        "split_fraction", "embedding_dim", "blocks", "subset",
    )
    rc = {k: getattr(args, k) for k in keep if hasattr(args, k)}
    rc["command"] = args.command
    rc["version"] = __version__
    rc.update(extra)
    return rc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavemorph",
        description="Differential morph detection via discriminative wavelet sub-bands.",
    )
    parser.add_argument("--config", help="key=value config file; flags override it")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap kernel worker threads (0 = all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic morph corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--per-subject", dest="per_subject", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=DEFAULT_SIZE)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decompose", help="dump the 48 (or 144) wavelet sub-bands")
    p.add_argument("--in", required=True)
    p.add_argument("--family", default="haar", choices=["haar", "db2", "db4"])
    p.add_argument("--mode", default="gray", choices=["gray", "rgb"])
    p.add_argument("--size", type=int, default=0, help="optional square resize before decomposition")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("reconstruct", help="inverse transform; --drop-ll removes the LL band")
    p.add_argument("--in", required=True)
    p.add_argument("--family", default="haar", choices=["haar", "db2", "db4"])
    p.add_argument("--mode", default="gray", choices=["gray", "rgb"])
    p.add_argument("--drop-ll", dest="drop_ll", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("rank-bands", help="entropy/KLD ranking and top-K selection")
    p.add_argument("--manifest", action="append", required=True,
                   help="dataset manifest CSV; repeat for several datasets")
    p.add_argument("--family", default="haar", choices=["haar", "db2", "db4"])
    p.add_argument("--entropy-bins", dest="entropy_bins", type=int, default=bandstats.DEFAULT_BINS)
    p.add_argument("--kld-direction", dest="kld_direction", default="bf_vs_morph",
                   choices=["bf_vs_morph", "morph_vs_bf"])
    p.add_argument("--symmetric-kld", dest="symmetric_kld", action="store_true")
    p.add_argument("--k", type=int, default=bandstats.DEFAULT_K)
    p.add_argument("--size", type=int, default=DEFAULT_SIZE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank_bands)

    p = sub.add_parser("train", help="train the Siamese embedding network")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--mask", required=True, help="selection_mask.json from rank-bands")
    p.add_argument("--mode", default="gray", choices=["gray", "rgb"])
    p.add_argument("--family", default="haar", choices=["haar", "db2", "db4"])
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--plateau", type=int, default=10)
    p.add_argument("--stop", type=int, default=35)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=150)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=DEFAULT_SIZE)
    p.add_argument("--split-fraction", dest="split_fraction", type=float, default=0.5)
    p.add_argument("--embedding-dim", dest="embedding_dim", type=int, default=128)
    p.add_argument("--blocks", default=None,
                   help="conv blocks as filters:kernel:stride,... (default architecture if omitted)")
    p.add_argument("--no-augment", dest="no_augment", action="store_true")
    p.add_argument("--cache-dir", dest="cache_dir", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score pairs and compute detection metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--mask", default=None, help="defaults to the checkpoint's mask")
    p.add_argument("--mode", default=None, choices=["gray", "rgb"])
    p.add_argument("--family", default="haar", choices=["haar", "db2", "db4"])
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--size", type=int, default=DEFAULT_SIZE)
    p.add_argument("--split-from", dest="split_from", default=None,
                   help="split_plan.json from train; restricts pairs to --subset")
    p.add_argument("--subset", default="test", choices=["train", "val", "test"])
    p.add_argument("--cache-dir", dest="cache_dir", default=None)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    return parser


def _apply_config(parser: argparse.ArgumentParser, cfg: dict):
    """Push config-file values down as defaults; a flag present in the
    file also stops being mandatory on the command line."""
    parser.set_defaults(**cfg)
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                _apply_config(sp, cfg)
        elif action.dest in cfg:
            action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        try:
            _apply_config(parser, load_config_file(cfg_path))
        except (WavemorphError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    args = parser.parse_args(argv)
    if args.threads:
        backend.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (WavemorphError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
