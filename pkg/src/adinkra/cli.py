"""Command-line entry point: ``adinkra <command> [options]``.

Every invocation writes one JSON run manifest holding the fully resolved
configuration, timings and artifact paths; ``adinkra --replay manifest.json``
runs the same configuration again. Option values come from flags, then a
flat ``key=value`` config file, then built-in defaults.

Exit codes: 0 success, 1 internal error (including a non-finite training
loss), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__
from .errors import AdinkraError, ConfigurationError, InputError, UsageError

log = logging.getLogger("adinkra")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable = str
    default: Any = None
    help: str = ""
    required: bool = False
    choices: Optional[tuple] = None

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


def _int_or_none(text):
    return None if text in (None, "", "None", "none") else int(text)


COMMANDS: dict[str, list[Opt]] = {
    "synth": [
        Opt("classes", int, 62, "number of glyph classes (at most 62)"),
        Opt("per-class", int, 200, "images per class"),
        Opt("size", int, 64, "image side in pixels"),
        Opt("seed", int, 0),
        Opt("out", str, None, "dataset directory to create", required=True),
    ],
    "train": [
        Opt("data", str, None, "dataset directory", required=True),
        Opt("spec", str, "reduced", "network preset (paper, reduced) or a JSON spec file"),
        Opt("epochs", int, 50),
        Opt("lr", float, 1e-4),
        Opt("batch", int, 32, "training batch size"),
        Opt("batch-pred", int, 4, "prediction batch size"),
        Opt("workers", int, 4, "batch preparation threads"),
        Opt("seed", int, 0, "initialisation, shuffling and dropout seed"),
        Opt("split-seed", int, 0, "seed of the stratified train/val/test split"),
        Opt("precision", str, "float32", choices=("float32", "float64")),
        Opt("checkpoint-every", _int_or_none, None, "save every N epochs"),
        Opt("patience", _int_or_none, None, "early-stopping patience in epochs"),
        Opt("out", str, None, "checkpoint path; history goes to <stem>.history.csv", required=True),
    ],
    "eval": [
        Opt("checkpoint", str, None, required=True),
        Opt("data", str, None, required=True),
        Opt("split", str, "test", choices=("train", "val", "test")),
        Opt("split-seed", int, 0),
        Opt("batch", int, 32),
        Opt("out", str, None, "confusion matrix CSV (default <checkpoint stem>.<split>.confusion.csv)"),
    ],
    "predict": [
        Opt("checkpoint", str, None, required=True),
        Opt("image", str, None, required=True),
        Opt("catalog", str, None, "labels.tsv of the training data", required=True),
    ],
    "features": [
        Opt("checkpoint", str, None, required=True),
        Opt("data", str, None, required=True),
        Opt("tap", str, "fc2", choices=("flatten", "fc1", "fc2")),
        Opt("split", str, "all", choices=("all", "train", "val", "test")),
        Opt("split-seed", int, 0),
        Opt("batch", int, 32),
        Opt("out", str, None, "directory receiving <split>.adnf files", required=True),
    ],
    "classical": [
        Opt("features", str, None, "directory holding train.adnf and test.adnf"),
        Opt("pixels", str, None, "dataset directory; classify raw flattened pixels instead"),
        Opt("pixel-size", int, 16, "side the images are resized to for --pixels"),
        Opt("split-seed", int, 0, "split seed for --pixels"),
        Opt("grid", str, "paper", "'paper' or a CSV file with family,params columns"),
        Opt("runs", int, 5),
        Opt("seed", int, 0),
        Opt("out", str, None, "results CSV", required=True),
    ],
    "heatmap": [
        Opt("checkpoint", str, None, required=True),
        Opt("image", str, None, required=True),
        Opt("layer", str, "conv6,relu6,pool3", "comma-separated layer tags"),
        Opt("alpha", float, 0.4, "overlay weight of the heatmap"),
        Opt("out", str, None, "PNG path; several layers write <stem>_<tag>.png", required=True),
    ],
    "bench": [
        Opt("checkpoint", str, None, required=True),
        Opt("data", str, None, required=True),
        Opt("split", str, "test", choices=("train", "val", "test")),
        Opt("split-seed", int, 0),
        Opt("images", int, 64, "images classified in the timed workload"),
        Opt("train-steps", int, 2, "training steps in the timed workload"),
        Opt("batch", int, 32),
        Opt("seed", int, 0),
    ],
}

# --- configuration --------------------------------------------------------------

def read_config(path: Path) -> dict[str, str]:
    """Flat ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    known = {o.dest for opts in COMMANDS.values() for o in opts}
    unknown = sorted(set(out) - known)
    if unknown:
        raise ConfigurationError(f"{path}: unknown config keys {unknown}")
    return out


def _convert(opt: Opt, value):
    if value is None:
        return None
    try:
        v = opt.type(value) if not isinstance(value, bool) else value
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"--{opt.name}: cannot parse {value!r}") from exc
    if opt.choices is not None and v not in opt.choices:
        raise ConfigurationError(f"--{opt.name} must be one of {opt.choices}, got {v!r}")
    return v


def resolve(command: str, flags: dict, config: dict) -> dict:
    """Flags beat the config file, which beats the defaults."""
    resolved = {}
    for opt in COMMANDS[command]:
        if flags.get(opt.dest) is not None:
            value = flags[opt.dest]
        elif opt.dest in config:
            value = config[opt.dest]
        else:
            value = opt.default
        resolved[opt.dest] = _convert(opt, value)
        if opt.required and resolved[opt.dest] is None:
            raise UsageError(f"{command}: --{opt.name} is required")
    return resolved


# --- helpers --------------------------------------------------------------------

class Run:
    """Context handed to command implementations."""

    def __init__(self, command: str, cfg: dict, workdir: Path):
        self.command, self.cfg, self.workdir = command, cfg, workdir
        self.artifacts: dict[str, Any] = {}
        self.results: dict[str, Any] = {}

    def path(self, key: str) -> Optional[Path]:
        value = self.cfg.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.workdir / p

    def artifact(self, name: str, path: Path) -> Path:
        self.artifacts[name] = str(path)
        return path


def _load_split(run: Run, key: str = "data"):
    from .datasets import load_directory, split
    data = load_directory(run.path(key))
    if len(data) == 0:
        raise InputError(f"no images found under {run.path(key)}")
    return split(data, seed=run.cfg.get("split_seed", 0))


def _load_model(run: Run, dtype=np.float32):
    from .checkpoint import load_checkpoint
    return load_checkpoint(run.path("checkpoint"), dtype)


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


# --- commands -------------------------------------------------------------------

def cmd_synth(run: Run) -> None:
    """Render the procedural symbol dataset to a directory."""
    from .datasets import write_directory
    from .synth import synth_generate
    c = run.cfg
    out = run.path("out")
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"{out} exists and is not empty")
    data = synth_generate(c["classes"], c["per_class"], c["size"], c["seed"])
    write_directory(data, out)
    run.artifact("dataset", out)
    run.results["images"] = len(data)


def _model_spec(run: Run):
    from .model import ModelSpec
    name = run.cfg["spec"]
    if name == "paper":
        return ModelSpec.paper()
    if name == "reduced":
        return ModelSpec.reduced()
    try:
        spec = ModelSpec.from_dict(json.loads(run.path("spec").read_text(encoding="utf-8")))
    except OSError as exc:
        raise InputError(f"--spec is neither paper, reduced nor a readable file: {exc}") from exc
    except (json.JSONDecodeError, TypeError) as exc:
        raise ConfigurationError(f"cannot parse spec file {name}: {exc}") from exc
    spec.validate()
    return spec


def cmd_train(run: Run) -> None:
    """Train the CNN and write a checkpoint plus per-epoch history."""
    from .checkpoint import save_checkpoint
    from .model import ModelSpec, build_model
    from .training import TrainConfig, train
    c = run.cfg
    if c["epochs"] < 1:
        raise UsageError(f"--epochs must be >= 1, got {c['epochs']}")
    cfg = TrainConfig(epochs=c["epochs"], lr=c["lr"], batch_train=c["batch"],
                      batch_pred=c["batch_pred"], workers=c["workers"], seed=c["seed"],
                      checkpoint_every=c["checkpoint_every"], early_stop_patience=c["patience"],
                      precision=c["precision"])
    cfg.validate()
    data = _load_split(run)
    spec = _model_spec(run)
    if spec.num_classes != data.num_classes:
        spec = ModelSpec.from_dict({**spec.to_dict(), "num_classes": data.num_classes,
                                    "fc_widths": [*spec.fc_widths[:-1], data.num_classes]})
    model = build_model(spec, seed=c["seed"], dtype=cfg.dtype)
    out = run.path("out")
    history = train(model, data, cfg, checkpoint_path=out)
    save_checkpoint(model, history, out)
    run.artifact("checkpoint", out)
    hist_path = run.artifact("history", out.with_name(out.stem + ".history.csv"))
    fields = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds", "peak_mem"]
    _write_csv(hist_path, fields, [[getattr(r, f) for f in fields] for r in history.records])
    run.results.update(training_seconds=history.total_seconds, training_peak_mem=history.peak_mem,
                       best_epoch=history.best_epoch,
                       final_val_acc=history.records[-1].val_acc if history.records else None)


def cmd_eval(run: Run) -> None:
    """Report split accuracy and write the confusion matrix."""
    from .training import evaluate
    model, _ = _load_model(run)
    data = _load_split(run)
    ev = evaluate(model, data, run.cfg["split"], run.cfg["batch"])
    ckpt = run.path("checkpoint")
    out = run.path("out") or ckpt.with_name(f"{ckpt.stem}.{run.cfg['split']}.confusion.csv")
    k = ev.confusion.shape[0]
    _write_csv(out, ["true"] + [str(j) for j in range(k)],
               [[i, *ev.confusion[i].tolist()] for i in range(k)])
    run.artifact("confusion", out)
    run.results.update(accuracy=ev.accuracy, mean_loss=ev.mean_loss)
    print(f"accuracy\t{ev.accuracy:.4f}")


def cmd_predict(run: Run) -> None:
    """Classify one image and print name, meaning and confidence."""
    from .datasets import LabelCatalog
    from .training import predict
    model, _ = _load_model(run)
    catalog = LabelCatalog.read(run.path("catalog"))
    p = predict(model, run.path("image"), catalog)
    run.results.update(index=p.index, twi_name=p.twi_name, confidence=p.confidence)
    print(f"{p.twi_name}\t{p.english}\t{p.confidence:.4f}")


def cmd_features(run: Run) -> None:
    """Write CNN activations of each split to feature files."""
    from .classical import FeatureMatrix, write_features
    from .datasets import SPLITS, preprocess
    from .model import extract_features
    c = run.cfg
    model, _ = _load_model(run)
    data = _load_split(run)
    out = run.path("out")
    out.mkdir(parents=True, exist_ok=True)
    splits = SPLITS if c["split"] == "all" else (c["split"],)
    for s in splits:
        idx = data.indices(s)
        values = np.zeros((0, 0), np.float32)
        if idx.size:
            chunks = []
            for start in range(0, idx.size, c["batch"]):
                imgs = np.stack([preprocess(data.images[i], model.spec.input_size, model.dtype)
                                 for i in idx[start:start + c["batch"]]])
                chunks.append(extract_features(model, imgs, c["tap"], c["batch"]))
            values = np.concatenate(chunks)
        fm = FeatureMatrix(values, data.labels[idx], data.num_classes)
        run.artifact(f"features_{s}", write_features(fm, out / f"{s}.adnf"))
        run.results[f"{s}_rows"], run.results["dim"] = fm.rows, fm.dim


def _pixel_matrix(data, split_name: str, size: int):
    from .classical import FeatureMatrix
    from .datasets import preprocess
    idx = data.indices(split_name)
    values = np.stack([preprocess(data.images[i], size).reshape(-1) for i in idx])
    return FeatureMatrix(values, data.labels[idx], data.num_classes)


def cmd_classical(run: Run) -> None:
    """Run the classical classifier grid on features or pixels."""
    from .classical import paper_grid, read_features, read_grid, run_grid, write_results
    c = run.cfg
    if (c["features"] is None) == (c["pixels"] is None):
        raise UsageError("give exactly one of --features or --pixels")
    if c["features"] is not None:
        src = run.path("features")
        train, test = read_features(src / "train.adnf"), read_features(src / "test.adnf")
    else:
        data = _load_split(run, "pixels")
        train, test = (_pixel_matrix(data, s, c["pixel_size"]) for s in ("train", "test"))
    grid = paper_grid() if c["grid"] == "paper" else read_grid(run.path("grid") or c["grid"])
    results = run_grid(train, test, grid, runs=c["runs"], seed=c["seed"])
    per_run, means = write_results(results, run.path("out"))
    run.artifact("results", per_run)
    run.artifact("mean_accuracy", means)
    run.results["rows"] = len(results)
    run.results["failed"] = sum(r.error is not None for r in results)


def cmd_heatmap(run: Run) -> None:
    """Render original / heatmap / overlay panels for layer tags."""
    from .datasets import LabeledImage, bilinear_resize, preprocess, read_image
    from .interpret import capture, heatmap, overlay, render_panel
    c = run.cfg
    if not 0.0 <= c["alpha"] <= 1.0:
        raise UsageError(f"--alpha must be in [0, 1], got {c['alpha']}")
    tags = [t.strip() for t in c["layer"].split(",") if t.strip()]
    if not tags:
        raise UsageError("--layer needs at least one tag")
    model, _ = _load_model(run)
    image = read_image(run.path("image"))
    size = model.spec.input_size
    x = preprocess(image, size, model.dtype)
    caps = capture(model, x, tags)
    # panels are drawn at network resolution
    small = LabeledImage(np.clip(np.rint(bilinear_resize(image.rgb(), size, size)), 0, 255)
                         .astype(np.uint8), -1)
    out = run.path("out")
    for cap in caps:
        hm = heatmap(cap, size)
        target = out if len(caps) == 1 else out.with_name(f"{out.stem}_{cap.tag}{out.suffix or '.png'}")
        render_panel(small, hm, overlay(small, hm, c["alpha"]), cap.tag, target)
        run.artifact(f"panel_{cap.tag}", target)


def cmd_bench(run: Run) -> None:
    """Time a fixed inference and training workload."""
    from .core import GradientTape, adam_step, softmax_cross_entropy, zero_grad
    from .datasets import batches
    from .model import forward
    from .training import peak_rss_bytes, predict_logits
    c = run.cfg
    model, _ = _load_model(run)
    data = _load_split(run)
    size = model.spec.input_size
    t0 = time.perf_counter()
    n_img = 0
    for x, _ in batches(data, c["split"], c["batch"], size=size, dtype=model.dtype):
        x = x[:max(0, c["images"] - n_img)]
        if not len(x):
            break
        predict_logits(model, x, batch=c["batch"])
        n_img += len(x)
    infer_s = time.perf_counter() - t0
    t1 = time.perf_counter()
    steps = 0
    if data.indices("train").size == 0:
        raise UsageError("bench needs a non-empty train split")
    # small train splits are cycled so the workload always has train_steps steps
    epoch = 0
    while steps < c["train_steps"]:
        for x, y in batches(data, "train", c["batch"], shuffle=True, seed=c["seed"] + epoch,
                            size=size, dtype=model.dtype):
            if steps >= c["train_steps"]:
                break
            with GradientTape() as tape:
                loss = softmax_cross_entropy(
                    forward(model, x, training=True, seed=c["seed"] + steps), y)
            tape.backward(loss)
            adam_step(model.parameters, 1e-4)
            zero_grad(model.parameters)
            steps += 1
        epoch += 1
    train_s = time.perf_counter() - t1
    run.results.update(images=n_img, inference_seconds=infer_s, train_steps=steps,
                       train_seconds=train_s, workload_seconds=infer_s + train_s,
                       workload_peak_mem=peak_rss_bytes())
    print(f"seconds\t{infer_s + train_s:.3f}\npeak_mem\t{peak_rss_bytes()}")


HANDLERS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "features": cmd_features, "classical": cmd_classical, "heatmap": cmd_heatmap,
            "bench": cmd_bench}


# --- driver ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adinkra", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--workdir", help="base directory for relative paths (default: cwd)")
    parser.add_argument("--config", help="flat key=value file of option defaults")
    parser.add_argument("--manifest", help="manifest path (default: <workdir>/manifests/...)")
    parser.add_argument("--replay", help="rerun the configuration recorded in a manifest")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name, help=HANDLERS[name].__doc__)
        for o in opts:
            p.add_argument(f"--{o.name}", dest=o.dest, default=None,
                           help=o.help + (f" (default: {o.default})" if o.default is not None else ""))
    return parser


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="microseconds")


def _peak_rss() -> int:
    from .training import peak_rss_bytes
    return peak_rss_bytes()


def _write_manifest(path: Path, manifest: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                   encoding="utf-8")
    os.replace(tmp, path)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, InputError, OSError)):
        return EXIT_USAGE
    return EXIT_INTERNAL


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")

    try:
        if args.replay:
            recorded = json.loads(Path(args.replay).read_text(encoding="utf-8"))
            command = recorded["command"]
            if command not in COMMANDS:
                raise ConfigurationError(f"manifest names unknown command {command!r}")
            workdir = Path(args.workdir or recorded["workdir"])
            flags = {k: v for k, v in recorded["config"].items()}
            config: dict = {}
        else:
            if args.command is None:
                parser.print_usage(sys.stderr)
                return EXIT_USAGE
            command = args.command
            workdir = Path(args.workdir or os.getcwd())
            flags = {o.dest: getattr(args, o.dest) for o in COMMANDS[command]}
            config = read_config(Path(args.config)) if args.config else {}
        cfg = resolve(command, flags, config)
    except (AdinkraError, OSError, ValueError, KeyError) as exc:
        print(f"adinkra: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    run = Run(command, cfg, workdir.resolve())
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    manifest_path = Path(args.manifest) if args.manifest else \
        run.workdir / "manifests" / f"{command}-{stamp}-{os.getpid()}.json"
    manifest = {"command": command, "config": cfg, "workdir": str(run.workdir),
                "seed": cfg.get("seed"), "version": __version__, "started": _now()}
    t0 = time.perf_counter()
    code, error = EXIT_OK, None
    try:
        HANDLERS[command](run)
    except Exception as exc:  # noqa: BLE001 - mapped onto the exit-code contract
        code = _exit_code(exc)
        error = f"{type(exc).__name__}: {exc}"
        if code == EXIT_INTERNAL:
            log.exception("internal error")
        print(f"adinkra: error: {exc}", file=sys.stderr)
    manifest.update(finished=_now(), seconds=time.perf_counter() - t0, peak_mem=_peak_rss(),
                    artifacts=run.artifacts, results=run.results, exit_code=code, error=error)
    try:
        _write_manifest(manifest_path, manifest)
    except OSError as exc:
        print(f"adinkra: cannot write manifest {manifest_path}: {exc}", file=sys.stderr)
        return code or EXIT_USAGE
    return code


if __name__ == "__main__":
    sys.exit(main())
