"""Command-line pipeline: prepare -> extract -> train / evaluate -> predict.

One master ``--seed`` reproduces a whole run: named sub-seeds are derived
from it by hashing ``"<seed>:<label>"`` with blake2b (labels ``folds`` and
``train``), and fold i trains at the derived train seed plus i.  Exit
codes: 0 ok, 2 input/config, 3 model/backbone, 4 evaluation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from .backbone import resolve_backbone
from .dataset import ArtSchool, DatasetManifest, scan_dataset
from .errors import ManifestError, MiniaturesError
from .evaluation import EvalReport, run_cross_validation, write_confusion_csv
from .features import extract_dataset_features
from .fusion import FUSION_MODES, decide, fuse
from .head import TrainConfig, load_checkpoint, predict_proba, save_checkpoint, train
from .patching import PatchPosition, extract_patch, load_image, patch_rects, resize_normalize


def derive_seed(master: int, label: str) -> int:
    """Stable 63-bit sub-seed for a named stage of the pipeline."""
    digest = hashlib.blake2b(f"{master}:{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        dropout_rate=args.dropout,
        learning_rate=args.lr,
        seed=seed,
        optimizer=args.optimizer,
    )


def _make_run_dir(out: str | Path) -> Path:
    base = Path(out)
    base.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    for i in range(10_000):
        candidate = base / (stamp if i == 0 else f"{stamp}-{i}")
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            continue
    raise OSError(f"cannot allocate a run directory under {base}")


def _write_config(run_dir: Path, args, extra: dict) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    resolved.update(extra)
    resolved["created_utc"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    (run_dir / "config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True, default=str), encoding="utf-8"
    )


def _print_summary(report: EvalReport, out=None) -> None:
    out = out or sys.stdout
    fp = report.fingerprint
    print(f"backbone: {fp['backbone']}  fusion: {fp['fusion_mode']}  folds: {fp['k']}", file=out)
    print("fold  patch_train  patch_test  fused_train  fused_test", file=out)
    for f in report.folds:
        print(
            f"{f.fold_index:>4}  {f.patch_train_acc:>11.4f}  {f.patch_test_acc:>10.4f}"
            f"  {f.fused_train_acc:>11.4f}  {f.fused_test_acc:>10.4f}",
            file=out,
        )
    m, cv = report.means, report.cvs_percent
    print("mean train acc:  patch {:.4f}  fused {:.4f}".format(m["patch_train_acc"], m["fused_train_acc"]), file=out)
    print("mean test acc:   patch {:.4f}  fused {:.4f}".format(m["patch_test_acc"], m["fused_test_acc"]), file=out)
    print("test acc CV (%): patch {:.4f}  fused {:.4f}".format(cv["patch_test_acc"], cv["fused_test_acc"]), file=out)


def cmd_prepare(args) -> int:
    manifest = scan_dataset(args.dataset)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest.save(out)
    for school in ArtSchool:
        print(f"{school.display_name}: {manifest.counts[school]}")
    print(f"total: {len(manifest.records)}  skipped: {len(manifest.skipped)}")
    print(f"manifest: {out}")
    return 0


def _load_store(args, manifest: DatasetManifest):
    extractor, preproc = resolve_backbone(args.backbone)
    progress = lambda done, total: print(f"extracting {done}/{total}", file=sys.stderr)
    store = extract_dataset_features(manifest, extractor, preproc, args.cache, progress=progress)
    return store, extractor


def cmd_extract(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    store, extractor = _load_store(args, manifest)
    print(f"cached entries: {len(store)}")
    print(f"new inferences: {extractor.inference_count}")
    if store.skipped:
        print(f"skipped images: {len(store.skipped)}")
    return 0


def cmd_train(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    store, _ = _load_store(args, manifest)
    config = _train_config(args, seed=derive_seed(args.seed, "train"))
    labels = {r.id: int(r.label) for r in manifest.records}
    params, trace = train(store, labels, manifest.ids(), config)
    run_dir = _make_run_dir(args.out)
    save_checkpoint(run_dir / "head.ckpt", params, config)
    (run_dir / "trace.json").write_text(
        json.dumps({"train_acc_per_epoch": trace}, indent=2), encoding="utf-8"
    )
    _write_config(run_dir, args, {"derived_train_seed": config.seed})
    print(f"final train accuracy: {trace[-1]:.4f}")
    print(f"run directory: {run_dir}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    store, _ = _load_store(args, manifest)
    config = _train_config(args, seed=derive_seed(args.seed, "train"))
    report = run_cross_validation(
        manifest,
        store,
        config,
        fusion_mode=args.fusion,
        k=args.folds,
        seed=derive_seed(args.seed, "folds"),
    )
    run_dir = _make_run_dir(args.out)
    report.save(run_dir / "report.json")
    write_confusion_csv(report.patch_confusion_mean, run_dir / "confusion_patch.csv")
    write_confusion_csv(report.fused_confusion_mean, run_dir / "confusion_fused.csv")
    _write_config(run_dir, args, {"derived_train_seed": config.seed, "master_seed": args.seed})
    _print_summary(report)
    print(f"run directory: {run_dir}")
    return 0


def cmd_predict(args) -> int:
    extractor, preproc = resolve_backbone(args.backbone)
    params, header = load_checkpoint(args.head)
    if params.feature_dim != extractor.feature_dim:
        raise ManifestError(
            f"checkpoint expects feature_dim {params.feature_dim}, "
            f"backbone {extractor.name} emits {extractor.feature_dim}"
        )
    image = load_image(args.image)
    height, width = image.shape[:2]
    rects = patch_rects(width, height)
    patch_probs = {}
    for position, rect in rects.items():
        tensor = resize_normalize(extract_patch(image, rect), preproc)
        patch_probs[position.name] = predict_proba(params, extractor.extract(tensor))
    fused = fuse([patch_probs[p.name] for p in PatchPosition], mode=args.fusion)
    index = decide(fused)
    result = {
        "school": ArtSchool(index).display_name,
        "class_index": index,
        "fusion_mode": args.fusion,
        "fused_scores": [float(v) for v in fused],
        "patch_probs": {name: [float(v) for v in probs] for name, probs in patch_probs.items()},
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    report = EvalReport.load(args.report)
    _print_summary(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="miniatures",
        description="Patch-based classification of Persian miniature paintings "
        "into five artistic schools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_backbone_cache(p):
        p.add_argument("--backbone", required=True,
                       help="backbone manifest JSON path, or stub:<seed>:<dim>")
        p.add_argument("--cache", required=True, help="feature cache directory")

    def add_train_flags(p):
        p.add_argument("--epochs", type=int, default=15, help="training epochs")
        p.add_argument("--batch-size", type=int, default=32, help="mini-batch size")
        p.add_argument("--dropout", type=float, default=0.3, help="dropout rate of the hidden layer")
        p.add_argument("--lr", type=float, default=1e-3, help="learning rate")
        p.add_argument("--optimizer", choices=["sgd", "adam"], default="adam", help="optimizer")
        p.add_argument("--seed", type=int, default=0, help="master seed; all sub-seeds derive from it")

    p = sub.add_parser("prepare", help="scan a dataset directory into a manifest",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--dataset", required=True, help="dataset root (one folder per school)")
    p.add_argument("--out", required=True, help="manifest JSON output path")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("extract", help="cache pooled features for every image patch",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--manifest", required=True, help="manifest JSON from prepare")
    add_backbone_cache(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train one head on the full manifest",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--manifest", required=True, help="manifest JSON from prepare")
    add_backbone_cache(p)
    p.add_argument("--out", required=True, help="directory for run outputs")
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run k-fold cross-validation and write a report",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--manifest", required=True, help="manifest JSON from prepare")
    add_backbone_cache(p)
    p.add_argument("--out", required=True, help="directory for run outputs")
    add_train_flags(p)
    p.add_argument("--fusion", choices=list(FUSION_MODES), default="soft", help="patch fusion mode")
    p.add_argument("--folds", type=int, default=5, help="number of cross-validation folds")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify a single image",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--image", required=True, help="image file to classify")
    p.add_argument("--backbone", required=True,
                   help="backbone manifest JSON path, or stub:<seed>:<dim>")
    p.add_argument("--head", required=True, help="head checkpoint from train")
    p.add_argument("--fusion", choices=list(FUSION_MODES), default="soft", help="patch fusion mode")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="re-print the summary of an existing report",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--report", required=True, help="report.json from evaluate")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MiniaturesError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
