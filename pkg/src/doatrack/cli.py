"""Command-line pipeline: generate data, train, evaluate, infer, report.

Every subcommand resolves its configuration (defaults < --config file < CLI
flags), locks its output directory, and writes a manifest with the resolved
key-value config and its hash. Re-running a manifest reproduces the outputs
byte-for-byte. Exit codes: 0 ok, 2 config error, 3 data error, 4 training
divergence, 5 report --check failure, 6 config-hash mismatch on resume.
"""

import argparse
import glob
import json
import math
import os
import sys

import numpy as np

from . import __version__, hnet
from . import localizer as loc
from .audio import mix_scenes, read_wav, synthesize_foa, synthesize_mic, write_wav
from .config import config_hash, coerce, format_config, read_config_file
from .errors import (
    AugmentationError,
    ConfigError,
    DataError,
    EvaluationError,
    TrainingDivergence,
)
from .features import extract_features_foa, extract_features_mic
from .mot_metrics import evaluate_sequence
from .scenes import (
    SceneGenConfig,
    generate_scene,
    read_timeline_csv,
    write_timeline_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_CHECK = 5
EXIT_HASH_MISMATCH = 6

CONFIG_LABELS = {
    (1.0, 0.0, 0.0): "dMOTp",
    (1.0, 0.0, 1.0): "dMOTp+Act",
    (1.0, 1.0, 1.0): "dMOTp+dMOTa+Act",
}

CURVE_COLUMNS = ["epoch", "loss_total", "loss_dmotp", "loss_dmota", "loss_act",
                 "val_le_deg", "val_lr", "val_mota", "val_ids"]


def config_label(weights, mse=False):
    if mse:
        return "MSE"
    return CONFIG_LABELS.get(tuple(float(w) for w in weights),
                             "+".join(str(w) for w in weights))


class OutputDir:
    """Creates/locks an output directory and owns its manifest."""

    def __init__(self, path, command, config):
        self.path = path
        self.command = command
        self.config = dict(config)
        self.lock_path = os.path.join(path, ".lock")

    def __enter__(self):
        os.makedirs(self.path, exist_ok=True)
        manifest_path = os.path.join(self.path, "manifest.txt")
        new_hash = config_hash(self.config)
        if os.path.exists(manifest_path):
            old = read_config_file(manifest_path)
            if old.get("config_hash") not in (None, new_hash):
                raise HashMismatch(
                    f"{self.path}: existing manifest hash {old.get('config_hash')} "
                    f"differs from resolved config hash {new_hash}")
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
        except FileExistsError:
            raise DataError(f"output directory is locked: {self.lock_path}")
        body = dict(self.config)
        body["command"] = self.command
        body["config_hash"] = new_hash
        body["package_version"] = __version__
        with open(manifest_path, "w") as f:
            f.write(format_config(body))
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.lock_path)
        except OSError:
            pass
        return False


class HashMismatch(RuntimeError):
    pass


def resolve_config(args, defaults, keys):
    """defaults < --config file < explicit CLI flags."""
    config = dict(defaults)
    if getattr(args, "config", None):
        for k, v in read_config_file(args.config).items():
            if k in ("command", "config_hash", "package_version"):
                continue
            config[k] = v
    for key in keys:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            config[key] = value if not isinstance(value, (list, tuple)) else ",".join(
                str(v) for v in value)
    return {k: str(v) for k, v in config.items()}


# -- subcommands -----------------------------------------------------------------


def cmd_gen_hungarian_data(args):
    defaults = {"count": 63000, "n_max": 2, "seed": 0, "val_fraction": 0.1}
    config = resolve_config(args, defaults, ["count", "n_max", "seed", "val_fraction"])
    if args.full:
        config["count"] = "405000"
    count = coerce(config, "count", "int")
    with OutputDir(args.out, "gen-hungarian-data", config):
        n_train, n_val = hnet.generate_hnet_dataset(
            args.out, count,
            n_max=coerce(config, "n_max", "int"),
            seed=coerce(config, "seed", "int"),
            val_fraction=coerce(config, "val_fraction", "float"))
    print(f"wrote {n_train} train / {n_val} val association samples to {args.out}")
    return EXIT_OK


def cmd_train_hnet(args):
    defaults = {"weights": "1,1,1", "epochs": 30, "batch": 256, "lr": 3e-3,
                "seed": 0, "units": 128, "n_max": 2, "patience": 6}
    config = resolve_config(args, defaults,
                            ["weights", "epochs", "batch", "lr", "seed", "units",
                             "n_max", "patience"])
    if not os.path.isdir(args.data):
        raise ConfigError(f"dataset directory not found: {args.data}")
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    config["data"] = args.data
    with OutputDir(out_dir, "train-hnet", config):
        model = hnet.HnetModel(n_max=coerce(config, "n_max", "int"),
                               units=coerce(config, "units", "int"),
                               seed=coerce(config, "seed", "int"))
        best, _ = hnet.train_hnet(
            model, args.data,
            weights=coerce(config, "weights", "floats"),
            epochs=coerce(config, "epochs", "int"),
            batch=coerce(config, "batch", "int"),
            lr=coerce(config, "lr", "float"),
            seed=coerce(config, "seed", "int"),
            patience=coerce(config, "patience", "int"),
            log_path=args.out + ".metrics.jsonl",
            checkpoint_path=args.out)
    print(f"best validation F-score {best:.4f}; checkpoint at {args.out}")
    return EXIT_OK


def cmd_eval_hnet(args):
    model, _ = hnet.load_hnet_model(args.model)
    if args.data:
        d, a, _, _ = hnet.load_hnet_split(args.data, args.split)
    else:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((int(args.seed), 2))))
        records = hnet.sample_distance_records(int(args.count), model.n_max, rng)
        d = np.stack([r[0].values for r in records])
        a = np.stack([r[1].values for r in records]).astype(np.float64)
    fscore = hnet.eval_hnet_fscore(model, d, a)
    discipline = hnet.row_col_discipline(model, d)
    result = {"fscore": fscore, "row_col_discipline": discipline, "n_samples": len(d),
              "fscore_definition": "micro-averaged element-wise binary F1 over "
                                   "matrix cells at threshold 0.5"}
    print(json.dumps(result, indent=2))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(result, f, indent=2)
    return EXIT_OK


def _scene_config(config):
    return SceneGenConfig(
        duration_s=coerce(config, "duration", "float"),
        n_max=coerce(config, "n_max", "int"),
        event_duration=(coerce(config, "event_min", "float"),
                        coerce(config, "event_max", "float")),
        p_moving=coerce(config, "p_moving", "float"),
        speed_range=(coerce(config, "speed_min", "float"),
                     coerce(config, "speed_max", "float")),
        events_per_second=coerce(config, "events_per_second", "float"),
    )


def cmd_gen_scenes(args):
    defaults = {"count": 10, "seed": 0, "duration": 60.0, "n_max": 2,
                "snr_db": 30.0, "format": "foa", "sample_rate": 24000,
                "event_min": 1.0, "event_max": 10.0, "p_moving": 0.5,
                "speed_min": 5.0, "speed_max": 40.0, "events_per_second": 0.25}
    keys = list(defaults)
    config = resolve_config(args, defaults, keys)
    scene_cfg = _scene_config(config)
    fmt = coerce(config, "format", "str").upper()
    if fmt not in ("FOA", "MIC"):
        raise ConfigError(f"format must be foa or mic, got {fmt}")
    sr = coerce(config, "sample_rate", "int")
    snr = coerce(config, "snr_db", "float")
    seed = coerce(config, "seed", "int")
    count = coerce(config, "count", "int")
    synth = synthesize_foa if fmt == "FOA" else synthesize_mic
    with OutputDir(args.out, "gen-scenes", config):
        for i in range(count):
            timeline, specs = generate_scene(scene_cfg, (seed, i))
            clip = synth(timeline, specs, sample_rate=sr,
                         snr_db=None if math.isinf(snr) else snr, seed=(seed, i, 1))
            stem = os.path.join(args.out, f"scene_{i:04d}")
            write_wav(stem + ".wav", clip)
            write_timeline_csv(timeline, stem + ".csv")
    print(f"wrote {count} {fmt} scenes to {args.out}")
    return EXIT_OK


def list_scene_stems(directory):
    stems = sorted(p[:-4] for p in glob.glob(os.path.join(directory, "*.wav")))
    if not stems:
        raise ConfigError(f"no scene wav files under {directory}")
    for stem in stems:
        if not os.path.exists(stem + ".csv"):
            raise DataError(f"scene {stem} has no timeline csv")
    return stems


def cmd_augment(args):
    defaults = {"multiplier": 4, "seed": 0, "n_max": 2}
    config = resolve_config(args, defaults, ["multiplier", "seed", "n_max"])
    stems = list_scene_stems(args.scenes)
    config["scenes"] = args.scenes
    mult = coerce(config, "multiplier", "int")
    n_max = coerce(config, "n_max", "int")
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(coerce(config, "seed", "int"))))
    written = 0
    skipped = 0
    with OutputDir(args.out, "augment", config):
        for round_idx in range(mult):
            # uniform pairing without replacement within each round
            partners = rng.permutation(len(stems))
            for i, stem in enumerate(stems):
                clip_a = read_wav(stem + ".wav")
                tl_a = read_timeline_csv(stem + ".csv", n_max=n_max,
                                         n_frames=_frames_for(clip_a))
                order = [int(partners[i])] + [int(j) for j in partners if j != partners[i]]
                mixed = None
                for j in order:
                    if stems[j] == stem:
                        continue
                    clip_b = read_wav(stems[j] + ".wav")
                    tl_b = read_timeline_csv(stems[j] + ".csv", n_max=n_max,
                                             n_frames=_frames_for(clip_b))
                    try:
                        mixed = mix_scenes((clip_a, tl_a), (clip_b, tl_b), n_max=n_max)
                        break
                    except (AugmentationError, ValueError):
                        continue
                if mixed is None:
                    skipped += 1
                    continue
                stem_out = os.path.join(
                    args.out, f"aug_{round_idx}_{os.path.basename(stem)}")
                write_wav(stem_out + ".wav", mixed[0])
                write_timeline_csv(mixed[1], stem_out + ".csv")
                written += 1
    print(f"wrote {written} mixed scenes to {args.out} ({skipped} skipped)")
    return EXIT_OK


def _frames_for(clip):
    return int(round(clip.length / clip.sample_rate / 0.1))


def load_scene_records(directory, n_max, fmt):
    extract = extract_features_foa if fmt == "FOA" else extract_features_mic
    records = []
    for stem in list_scene_stems(directory):
        clip = read_wav(stem + ".wav", fmt)
        timeline = read_timeline_csv(stem + ".csv", n_max=n_max,
                                     n_frames=_frames_for(clip))
        records.append(loc.prepare_scene(clip, timeline, n_max,
                                         features=extract(clip)))
    return records


def cmd_train_doanet(args):
    defaults = {"weights": "1,0,0", "mse": False, "epochs": 20, "batch": 10,
                "lr": 1e-3, "seed": 0, "width": 32, "n_max": 2, "format": "foa",
                "fp_mode": "activity-gated", "threshold": 0.5, "gamma": 1.0,
                "min_epochs": 6, "eval_every": 1}
    config = resolve_config(args, defaults, list(defaults))
    fmt = coerce(config, "format", "str").upper()
    n_max = coerce(config, "n_max", "int")
    mse = coerce(config, "mse", "bool")
    config["scenes"] = args.scenes
    if args.val_scenes:
        config["val_scenes"] = args.val_scenes
    hnet_model = None
    if not mse:
        if not args.hnet:
            raise ConfigError("--hnet checkpoint required unless --mse")
        hnet_model, _ = hnet.load_hnet_model(args.hnet)
        hnet_model.freeze()
        if hnet_model.n_max != n_max:
            raise ConfigError(
                f"association checkpoint n_max={hnet_model.n_max} != {n_max}")
        config["hnet"] = args.hnet
    train_records = load_scene_records(args.scenes, n_max, fmt)
    val_records = (load_scene_records(args.val_scenes, n_max, fmt)
                   if args.val_scenes else [])
    train_cfg = loc.TrainConfig(
        weights=coerce(config, "weights", "floats"),
        mse=mse,
        epochs=coerce(config, "epochs", "int"),
        min_epochs=coerce(config, "min_epochs", "int"),
        batch_scenes=coerce(config, "batch", "int"),
        lr=coerce(config, "lr", "float"),
        seed=coerce(config, "seed", "int"),
        gamma=coerce(config, "gamma", "float"),
        fp_mode=coerce(config, "fp_mode", "str"),
        activity_threshold=coerce(config, "threshold", "float"),
        eval_every=coerce(config, "eval_every", "int"),
    )
    with OutputDir(args.out, "train-doanet", config):
        model = loc.LocalizerModel(format_tag=fmt, n_max=n_max,
                                   width=coerce(config, "width", "int"),
                                   seed=train_cfg.seed)
        ckpt = os.path.join(args.out, "model.ckpt")
        history, converged = loc.train_localizer(
            model, train_records, val_records, hnet_model, train_cfg,
            log_path=os.path.join(args.out, "train_log.jsonl"),
            checkpoint_path=ckpt)
        _write_curves(os.path.join(args.out, "curves.csv"), history)
        summary = {"config_label": config_label(train_cfg.weights, mse),
                   "converged": converged, "epochs_run": len(history)}
        if val_records:
            le_open, gated = loc.evaluate_on_scenes(
                model, val_records, train_cfg.activity_threshold)
            summary["val_le_deg_ungated"] = le_open
            summary["val_report"] = gated.as_dict()
        with open(os.path.join(args.out, "final_report.json"), "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
    print(f"trained {summary['config_label']} (converged={converged}); "
          f"outputs in {args.out}")
    return EXIT_OK


def _write_curves(path, history):
    lines = [",".join(CURVE_COLUMNS)]
    for entry in history:
        row = []
        for col in CURVE_COLUMNS:
            v = entry.get(col, "")
            if isinstance(v, float):
                row.append(f"{v:.6f}" if math.isfinite(v) else "nan")
            else:
                row.append(str(v))
        lines.append(",".join(row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def cmd_evaluate(args):
    refs = read_timeline_csv(args.refs, n_frames=args.frames)
    preds = read_timeline_csv(args.preds, n_frames=args.frames)
    report = evaluate_sequence(refs, preds, gate_deg=args.gate_deg)
    payload = report.as_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_infer(args):
    model, manifest = loc.load_localizer_model(args.model)
    clip = read_wav(args.audio, model.format_tag)
    extract = extract_features_foa if model.format_tag == "FOA" else extract_features_mic
    traj = loc.infer_trajectories(model, extract(clip),
                                  activity_threshold=args.threshold)
    write_timeline_csv(traj.to_timeline(model.n_max), args.out)
    print(f"wrote {sum(len(r[2]) for r in traj.runs)} DOA rows to {args.out}")
    return EXIT_OK


def cmd_report(args):
    run_dirs = []
    for part in args.runs.split(","):
        run_dirs.extend(sorted(glob.glob(part)))
    if not run_dirs:
        raise ConfigError(f"no run directories match {args.runs}")
    configs = {}
    for run in run_dirs:
        path = os.path.join(run, "final_report.json")
        if not os.path.exists(path):
            raise DataError(f"{run} has no final_report.json")
        with open(path) as f:
            summary = json.load(f)
        configs[summary.get("config_label", os.path.basename(run))] = summary
    os.makedirs(args.out, exist_ok=True)
    table_rows = ["config,le_deg/motp,mota,ids,lr"]
    for name, summary in configs.items():
        rep = summary.get("val_report", {})
        le = summary.get("val_le_deg_ungated", rep.get("motp", float("nan")))
        table_rows.append(
            f"{name},{le:.3f},{rep.get('mota', float('nan')):.4f},"
            f"{rep.get('ids', 'nan')},{rep.get('lr', float('nan')):.4f}")
    with open(os.path.join(args.out, "table.csv"), "w") as f:
        f.write("\n".join(table_rows) + "\n")
    with open(os.path.join(args.out, "metrics.json"), "w") as f:
        json.dump(configs, f, indent=2, sort_keys=True)
    print("\n".join(table_rows))
    if args.check:
        order = ["dMOTp", "dMOTp+Act", "dMOTp+dMOTa+Act"]
        present = [c for c in order if c in configs and "val_report" in configs[c]]
        motas = [configs[c]["val_report"]["mota"] for c in present]
        if any(b < a for a, b in zip(motas, motas[1:])):
            print(f"check failed: MOTa not monotone across {present}: {motas}")
            return EXIT_CHECK
        print(f"check ok: MOTa monotone across {present}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="doatrack",
        description="differentiable tracking-based DOA estimator pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="key=value config file")
        return p

    p = add("gen-hungarian-data", cmd_gen_hungarian_data,
            help="generate association-network training shards")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--full", action="store_true",
                   help="use the full-size 405k training count")

    p = add("train-hnet", cmd_train_hnet, help="train the association network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--units", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--patience", type=int)

    p = add("eval-hnet", cmd_eval_hnet, help="evaluate association F-score")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="val")
    p.add_argument("--count", type=int, default=10000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out")

    p = add("gen-scenes", cmd_gen_scenes, help="synthesize spatial scenes")
    p.add_argument("--out", required=True)
    for flag, typ in (("--count", int), ("--seed", int), ("--duration", float),
                      ("--n-max", int), ("--snr-db", float), ("--format", str),
                      ("--sample-rate", int), ("--event-min", float),
                      ("--event-max", float), ("--p-moving", float),
                      ("--speed-min", float), ("--speed-max", float),
                      ("--events-per-second", float)):
        p.add_argument(flag, type=typ)

    p = add("augment", cmd_augment, help="mix scene pairs without overlap")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--multiplier", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-max", type=int)

    p = add("train-doanet", cmd_train_doanet, help="train the localizer")
    p.add_argument("--scenes", required=True)
    p.add_argument("--val-scenes")
    p.add_argument("--hnet")
    p.add_argument("--out", required=True)
    p.add_argument("--weights")
    p.add_argument("--mse", action="store_true", default=None)
    for flag, typ in (("--epochs", int), ("--batch", int), ("--lr", float),
                      ("--seed", int), ("--width", int), ("--n-max", int),
                      ("--format", str), ("--fp-mode", str), ("--threshold", float),
                      ("--gamma", float), ("--min-epochs", int), ("--eval-every", int)):
        p.add_argument(flag, type=typ)

    p = add("evaluate", cmd_evaluate, help="CLEAR-MOT report for two timelines")
    p.add_argument("--refs", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--gate-deg", type=float)
    p.add_argument("--out")

    p = add("infer", cmd_infer, help="run a localizer checkpoint on audio")
    p.add_argument("--model", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)

    p = add("report", cmd_report, help="aggregate run metrics into a table")
    p.add_argument("--runs", required=True,
                   help="comma-separated run directories or globs")
    p.add_argument("--out", required=True)
    p.add_argument("--check", action="store_true",
                   help="exit 5 unless MOTa ordering is monotone")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except HashMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_HASH_MISMATCH
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, EvaluationError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"config error: missing input: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
