"""Operator command line: data generation, preparation, training, evaluation, serving.

Every run resolves its configuration (file plus ``--set key=value`` overrides),
logs the resolved form to stderr as one JSON line, and reports failures to
stderr as single-line JSON.  Exit codes: 0 success, 1 usage error, 2 data or
contract error, 3 training or inference failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from . import baselines as bl
from .dataprep import SplitSpec, align_lst, flatten_tabular, partition_patches, split_by_year, tabular_to_csv
from .diffusion import ScheduleMode, inpaint_sample, make_schedule
from .errors import (
    ConfigError,
    ContractError,
    HeatdiffError,
    InpaintError,
    TrainingError,
)
from .grids import (
    NormSpec,
    Raster,
    denormalize,
    list_scene_paths,
    read_scene,
    write_raster,
    write_scene,
)
from .nn import load_model
from .planner.engine import ModelBundle
from .synthscene import DEFAULT_LAW, SynthLaw, gen_corpus
from .taskseval import (
    EvalReport,
    SceneMetrics,
    TaskSetting,
    build_rgb_conditions,
    evaluate,
    evaluate_30m,
    infer_30m,
    mae,
    predict_scene_batch,
    rmse,
    ssim,
    write_summary_csv,
)
from .training import TrainConfig, train, train_rgb2lst

USAGE_EXIT = 1
DATA_EXIT = 2
RUN_EXIT = 3

_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_EXTRA_KEYS = {"data_dir", "sampler_steps", "law"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _log(record: dict) -> None:
    sys.stderr.write(json.dumps(record) + "\n")


def load_run_config(path: str | None, overrides: list[str]) -> dict:
    """Config file plus key=value overrides; unknown keys are rejected."""
    config: dict = {}
    if path:
        try:
            config = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise UsageError(f"config file is not valid JSON: {e}")
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            config[key] = json.loads(raw)
        except json.JSONDecodeError:
            config[key] = raw
    unknown = set(config) - _TRAIN_KEYS - _EXTRA_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    if "law" in config:
        law_fields = {f.name for f in dataclasses.fields(SynthLaw)}
        bad = set(config["law"]) - law_fields
        if bad:
            raise UsageError(f"unknown law keys: {sorted(bad)}")
    return config


def _train_config(config: dict) -> TrainConfig:
    kwargs = {k: v for k, v in config.items() if k in _TRAIN_KEYS}
    return TrainConfig(**kwargs)


def load_scenes(root: str | Path):
    paths = list_scene_paths(root)
    if not paths:
        raise ContractError(f"no scenes found under {root}")
    return [read_scene(p) for p in paths], [p.name for p in paths]


def _split(scenes, ids):
    pairs_train, pairs_test = [], []
    train_s, test_s = split_by_year(scenes)
    train_set = {id(s) for s in train_s}
    test_set = {id(s) for s in test_s}
    for s, sid in zip(scenes, ids):
        if id(s) in train_set:
            pairs_train.append((s, sid))
        elif id(s) in test_set:
            pairs_test.append((s, sid))
    return pairs_train, pairs_test


def _bundle(ckpt_path: str) -> ModelBundle:
    model, header = load_model(ckpt_path)
    return ModelBundle.from_header(model, header)


def cmd_synth(args) -> int:
    config = load_run_config(args.config, args.set)
    law = SynthLaw(**config.get("law", {})) if "law" in config else DEFAULT_LAW
    scenes = gen_corpus(
        args.count, args.seed, sat_size=args.sat_size, law=law,
        cloud_fraction=args.cloud, scanline_fraction=args.scanlines,
    )
    out = Path(args.out)
    for i, s in enumerate(scenes):
        write_scene(s, out / f"scene{i:05d}")
    _log({"resolved_config": {"count": args.count, "seed": args.seed,
                              "sat_size": args.sat_size, "cloud": args.cloud,
                              "scanlines": args.scanlines, "law": dataclasses.asdict(law)}})
    print(json.dumps({"written": len(scenes), "out": str(out)}))
    return 0


def cmd_prep(args) -> int:
    scenes, ids = load_scenes(args.inp)
    out = Path(args.out)
    written = []
    for s, sid in zip(scenes, ids):
        s = align_lst(s)
        if args.patch:
            for j, p in enumerate(partition_patches(s, args.patch)):
                name = f"{Path(sid).stem}_p{j:03d}"
                write_scene(p, out / name)
                written.append((name, p.meta.year))
        else:
            name = Path(sid).stem
            write_scene(s, out / name)
            written.append((name, s.meta.year))
    spec = SplitSpec()
    manifest = {
        "train": [n for n, y in written if y in spec.train_years],
        "test": [n for n, y in written if y in spec.test_years],
        "dropped": [n for n, y in written
                    if y not in spec.train_years and y not in spec.test_years],
    }
    (out / "split.json").write_text(json.dumps(manifest, indent=1))
    _log({"resolved_config": {"in": str(args.inp), "out": str(out), "patch": args.patch}})
    print(json.dumps({"written": len(written), "train": len(manifest["train"]),
                      "test": len(manifest["test"])}))
    return 0


def cmd_train(args, rgb2lst: bool = False) -> int:
    config = load_run_config(args.config, args.set)
    tc = _train_config(config)
    data_dir = config.get("data_dir")
    if not data_dir:
        raise UsageError("config must set data_dir")
    scenes, _ = load_scenes(data_dir)
    _log({"resolved_config": {**dataclasses.asdict(tc), "data_dir": data_dir}})
    if rgb2lst:
        _, history = train_rgb2lst(tc, scenes)
    else:
        train_s, val_s = split_by_year(scenes)
        _, history = train(tc, train_s, val_scenes=val_s if tc.eval_interval else None)
    print(json.dumps({"steps": len(history), "final_loss": history[-1]["loss"],
                      "checkpoint": tc.checkpoint_path}))
    return 0


def _truth_report(pairs, norm: NormSpec) -> EvalReport:
    report = EvalReport(task="truth", checkpoint_id="truth-as-prediction")
    for s, sid in pairs:
        m = s.ta.mask_or_full()
        report.scenes.append(
            SceneMetrics(scene_id=sid, rmse=rmse(s.ta, s.ta), mae=mae(s.ta, s.ta),
                         ssim=ssim(s.ta, s.ta, norm), valid_px=int(m.sum()))
        )
    return report


def cmd_eval(args) -> int:
    scenes, ids = load_scenes(args.inp)
    pairs_train, pairs_test = _split(scenes, ids)
    pairs = pairs_test if args.split == "test" else pairs_train
    if not pairs:
        raise ContractError(f"empty {args.split} split")
    norm = NormSpec()
    if args.predict_truth:
        report = _truth_report(pairs, norm)
        label = "truth"
    else:
        if not args.ckpt:
            raise UsageError("eval requires --ckpt (or --predict-truth)")
        bundle = _bundle(args.ckpt)
        task = TaskSetting(args.task or bundle.task, bundle.point_stride)
        sched = make_schedule(bundle.schedule_T, bundle.schedule_shape)
        report = evaluate(
            bundle.model, [s for s, _ in pairs], task, sched, steps=args.steps,
            mode=bundle.mode, norm=bundle.norm, checkpoint_id=args.ckpt,
            scene_ids=[sid for _, sid in pairs],
        )
        label = task.kind
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_json(out.with_suffix(".json"))
    write_summary_csv(out.with_suffix(".csv"), [(label, report)])
    print(json.dumps({"rmse": report.rmse, "mae": report.mae, "ssim": report.ssim,
                      "scenes": report.scene_count}))
    return 0


def cmd_sample(args) -> int:
    bundle = _bundle(args.ckpt)
    scene = read_scene(args.scene)
    task = TaskSetting(bundle.task)
    sched = make_schedule(bundle.schedule_T, bundle.schedule_shape)
    pred = predict_scene_batch(bundle.model, [scene], task, sched, steps=args.steps,
                               mode=bundle.mode, norm=bundle.norm)[0]
    out_scene = dataclasses.replace(scene, ta=pred)
    write_scene(out_scene, args.out)
    print(json.dumps({"out": str(args.out), "rmse_vs_truth": rmse(pred, scene.ta)}))
    return 0


def cmd_infer30m(args) -> int:
    bundle = _bundle(args.ckpt)
    scene = read_scene(args.scene)
    task = TaskSetting(bundle.task, bundle.point_stride)
    sched = make_schedule(bundle.schedule_T, bundle.schedule_shape)
    pred = infer_30m(bundle.model, scene, scene.ta, task, sched, steps=args.steps,
                     norm=bundle.norm)
    write_raster(pred, args.out)
    print(json.dumps({"out": str(args.out), "width": pred.width, "height": pred.height}))
    return 0


def cmd_inpaint(args) -> int:
    bundle = _bundle(args.ckpt)
    scene = read_scene(args.scene)
    if bundle.target != "lst":
        raise ContractError("inpaint expects an lst-target (rgb-conditioned) checkpoint")
    cond, meta = build_rgb_conditions(scene, bundle.norm)
    sched = make_schedule(bundle.schedule_T, bundle.schedule_shape)
    filled = inpaint_sample(bundle.model, scene.lst, cond, meta, sched, steps=args.steps,
                            mode=bundle.mode, norm=bundle.norm)
    filled.gsd = scene.lst.gsd
    out_scene = dataclasses.replace(scene, lst=filled)
    write_scene(out_scene, args.out)
    print(json.dumps({"out": str(args.out)}))
    return 0


def cmd_baseline(args) -> int:
    kind = {"lr": "ridge_linear", "mlp": "mlp", "rf": "random_forest", "gbdt": "gbdt"}[args.model]
    scenes, ids = load_scenes(args.inp)
    pairs_train, pairs_test = _split(scenes, ids)
    train_scenes = [s for s, _ in pairs_train]
    test_scenes = [s for s, _ in pairs_test]
    table_train = flatten_tabular(train_scenes)
    table_test = flatten_tabular(test_scenes, scene_ids=[sid for _, sid in pairs_test])
    model = bl.fit(bl.BaselineModel(kind), table_train, seed=args.seed)
    preds = bl.predict(model, table_test)
    rasters = bl.predictions_to_rasters(table_test, preds, test_scenes)
    norm = NormSpec()
    report = EvalReport(task=f"baseline:{kind}", checkpoint_id=str(args.out))
    for (s, sid), pred in zip(pairs_test, rasters):
        report.scenes.append(
            SceneMetrics(scene_id=sid, rmse=rmse(pred, s.ta), mae=mae(pred, s.ta),
                         ssim=ssim(pred, s.ta, norm),
                         valid_px=int((pred.mask_or_full() & s.ta.mask_or_full()).sum()))
        )
    bl.save_baseline(model, args.out)
    report.to_json(Path(args.out).with_suffix(".eval.json"))
    print(json.dumps({"model": kind, "rmse": report.rmse, "mae": report.mae,
                      "ssim": report.ssim}))
    return 0


def cmd_ablate(args) -> int:
    config = load_run_config(args.config, args.set)
    data_dir = config.get("data_dir")
    if not data_dir:
        raise UsageError("config must set data_dir")
    scenes, _ = load_scenes(data_dir)
    train_s, test_s = split_by_year(scenes)
    rows = []
    results = {}
    for mode in (ScheduleMode.LST_ANCHORED, ScheduleMode.PURE_NOISE):
        tc = _train_config({**config, "mode": mode.value})
        if tc.checkpoint_path:
            tc = dataclasses.replace(tc, checkpoint_path=f"{tc.checkpoint_path}.{mode.value}")
        model, _ = train(tc, train_s)
        sched = make_schedule(tc.schedule_T, tc.schedule_shape)
        report = evaluate(model, test_s, tc.task_setting, sched,
                          steps=config.get("sampler_steps", 50), mode=mode, norm=tc.norm,
                          checkpoint_id=mode.value)
        rows.append((mode.value, report))
        results[mode.value] = {"rmse": report.rmse, "mae": report.mae,
                               "ssim": report.ssim, "scenes": report.scene_count}
    write_summary_csv(args.out, rows)
    print(json.dumps(results))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .planner.service import create_app

    app = create_app(args.data, rgb2lst=args.rgb2lst, difftemp=args.difftemp,
                     sampler_steps=args.steps)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_bench(args) -> int:
    bundle = _bundle(args.ckpt)
    from .synthscene import corpus_meta, gen_scene

    scene = read_scene(args.scene) if args.scene else gen_scene(0, args.sat_size, corpus_meta(0, 4, 0))
    task = TaskSetting(bundle.task)
    sched = make_schedule(bundle.schedule_T, bundle.schedule_shape)
    t0 = time.time()
    for _ in range(args.repeat):
        predict_scene_batch(bundle.model, [scene], task, sched, steps=args.steps,
                            mode=bundle.mode, norm=bundle.norm)
    elapsed = time.time() - t0
    print(json.dumps({
        "scenes_per_s": args.repeat / elapsed,
        "net_evals_per_s": args.repeat * args.steps / elapsed,
        "steps": args.steps,
        "seconds": elapsed,
    }))
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="heatdiff", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", default=None)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    sp = sub.add_parser("synth", help="generate a synthetic scene corpus")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sat-size", type=int, default=160)
    sp.add_argument("--cloud", type=float, default=0.0, help="fraction of scenes given cloud masks")
    sp.add_argument("--scanlines", type=float, default=0.0)
    add_common(sp)

    sp = sub.add_parser("prep", help="align, optionally patch, and write the split manifest")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--patch", type=int, default=0)

    for name in ("train", "train-rgb2lst"):
        sp = sub.add_parser(name, help=f"{name} from a config file")
        add_common(sp)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a year split")
    sp.add_argument("--ckpt", default=None)
    sp.add_argument("--task", default=None)
    sp.add_argument("--split", choices=("train", "test"), default="test")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--predict-truth", action="store_true",
                    help="smoke fixture: score the ground truth against itself")

    for name in ("sample", "infer30m", "inpaint"):
        sp = sub.add_parser(name)
        sp.add_argument("--ckpt", required=True)
        sp.add_argument("--scene", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--steps", type=int, default=50)

    sp = sub.add_parser("baseline", help="fit and evaluate a tabular baseline")
    sp.add_argument("--model", choices=("lr", "mlp", "rf", "gbdt"), required=True)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("ablate", help="paired anchored vs pure-noise runs on identical data")
    add_common(sp)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("serve", help="run the planner HTTP service")
    sp.add_argument("--data", required=True)
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--rgb2lst", default=None)
    sp.add_argument("--difftemp", default=None)
    sp.add_argument("--steps", type=int, default=50)

    sp = sub.add_parser("bench", help="sampling throughput report")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--scene", default=None)
    sp.add_argument("--sat-size", type=int, default=160)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--repeat", type=int, default=3)

    return p


COMMANDS = {
    "synth": cmd_synth,
    "prep": cmd_prep,
    "train": cmd_train,
    "train-rgb2lst": lambda args: cmd_train(args, rgb2lst=True),
    "eval": cmd_eval,
    "sample": cmd_sample,
    "infer30m": cmd_infer30m,
    "inpaint": cmd_inpaint,
    "baseline": cmd_baseline,
    "ablate": cmd_ablate,
    "serve": cmd_serve,
    "bench": cmd_bench,
}

_DATA_ERRORS = (ContractError,)
_RUN_ERRORS = (TrainingError, InpaintError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _emit_error("usage", str(e))
        return USAGE_EXIT
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else USAGE_EXIT
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        _emit_error("usage", str(e))
        return USAGE_EXIT
    except ConfigError as e:
        _emit_error("config", str(e))
        return USAGE_EXIT
    except _RUN_ERRORS as e:
        _emit_error(type(e).__name__, str(e))
        return RUN_EXIT
    except HeatdiffError as e:
        _emit_error(type(e).__name__, str(e))
        return DATA_EXIT
    except FileNotFoundError as e:
        _emit_error("missing-file", str(e))
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
