"""Command-line entry point covering the full pipeline.

Subcommands: gen-dataset, render, optimize-scene, select-channels, infer,
classify, evaluate, adi. Every subcommand honors --seed and writes only to
its --out destinations; progress goes to stderr. Exit codes: 0 success,
1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import FILE_FORMAT_VERSIONS, __version__
from . import imgio
from .benchmark import (
    DatasetSpec,
    PoseEstimate,
    adi_error,
    generate_dataset,
    load_dataset_index,
    pose_from_omega_vector,
    posterior_for_image,
    posterior_median,
    run_episodes,
    scale_sigma_for_image,
)
from .distributions import LogNormal
from .genmodel import BijectedTarget, ObjectParams, PriorSet, TargetDensity
from .likelihood import (
    ChannelSelection,
    ConvFeatureExtractor,
    LikelihoodConfig,
    random_weights,
    select_channels,
    write_bigw,
)
from .mcmc import RMHConfig, diagnostics, sample_posterior, save_bigp
from .protoprogram import build_program, classify as classify_programs, merge
from .raytracer import render
from .scene import ShapeClass, load_scene, save_scene
from .sceneopt import SceneOptConfig, optimize_scene


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _log(msg):
    print(msg, file=sys.stderr)


def _write_metadata(path, config):
    """Sidecar JSON recording the fully resolved configuration."""
    meta_path = Path(str(path) + ".meta.json")
    with open(meta_path, "w") as fh:
        json.dump({"config": config, "version": __version__}, fh, indent=0,
                  sort_keys=True)


def _mcmc_config(args):
    return RMHConfig(
        chains=args.chains,
        draws=args.draws,
        burn_in=args.burn_in,
        proposal_scale=args.proposal_scale,
        seed=args.seed,
        threads=args.threads,
    )


def _likelihood_setup(args):
    cfg = LikelihoodConfig(
        sigma_image=args.sigma_image, neural_scale=args.neural_scale,
        mode=args.mode,
    )
    cfg.validate()
    extractor = None
    selection = None
    if args.mode == "np3":
        if not args.weights or not args.selection:
            raise ValidationError("np3 mode requires --weights and --selection")
        extractor = ConvFeatureExtractor.from_bigw(args.weights)
        selection = ChannelSelection.from_json(args.selection)
    return cfg, extractor, selection


def _resolved(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


# --- subcommand implementations ------------------------------------------------


def cmd_gen_dataset(args):
    spec = DatasetSpec(
        classes=args.classes,
        shots=args.shots,
        width=args.width,
        height=args.height,
        profile=args.profile,
        split=args.split,
        seed=args.seed,
        scale_sigma=args.scale_sigma,
        shadows=args.shadows,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ValidationError(str(exc))
    split = generate_dataset(spec, args.out)
    _write_metadata(split / "index.json", _resolved(args))
    _log(f"wrote {spec.classes * spec.shots} images to {split}")
    return 0


def cmd_render(args):
    scene = load_scene(args.scene)
    try:
        scene.validate()
    except ValueError as exc:
        raise ValidationError(f"invalid scene: {exc}")
    image = render(scene)
    out = Path(args.out)
    if out.suffix == ".bigi":
        imgio.write_bigi(image, out)
    else:
        imgio.write_png(image, out)
    _write_metadata(out, _resolved(args))
    _log(f"rendered {scene.camera.width}x{scene.camera.height} -> {out}")
    return 0


def _load_targets(split_dir):
    split_dir = Path(split_dir)
    index, scene = load_dataset_index(split_dir)
    targets = []
    for entry in index["classes"]:
        for shot in entry["shots"]:
            base = split_dir / entry["class_id"] / shot
            image = imgio.read_png(base.with_suffix(".png"))
            with open(base.with_suffix(".json")) as fh:
                meta = json.load(fh)
            omega = ObjectParams.from_dict(meta["omega"])
            targets.append((image, omega.to_instance()))
    return targets, scene


def cmd_optimize_scene(args):
    targets, init = _load_targets(args.dataset)
    if args.limit:
        targets = targets[: args.limit]
    cfg = SceneOptConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        steps_per_epoch=args.steps_per_epoch,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ValidationError(str(exc))
    _log(f"optimizing globals + {len(targets)} object materials")
    result = optimize_scene(
        targets, init, cfg,
        progress=lambda e, l: _log(f"epoch {e}: mean loss {l:.6f}"),
    )
    out = Path(args.out)
    save_scene(
        result.globals_scene, out,
        extra={
            "config": _resolved(args),
            "initial_loss": result.initial_loss,
            "epoch_losses": result.epoch_losses,
            "final_losses": result.final_losses,
        },
    )
    if args.loss_csv:
        with open(args.loss_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss"])
            for e, loss in enumerate(result.epoch_losses):
                writer.writerow([e, loss])
    _log(
        f"loss {result.initial_loss:.6f} -> {np.mean(result.final_losses):.6f}"
    )
    return 0


def cmd_select_channels(args):
    if args.weights:
        extractor = ConvFeatureExtractor.from_bigw(args.weights)
    else:
        kernel, bias = random_weights(seed=args.random_weights_seed)
        extractor = ConvFeatureExtractor(kernel, bias)
        if args.save_weights:
            write_bigw([kernel, bias], args.save_weights)
    split_dir = Path(args.dataset)
    index, scene = load_dataset_index(split_dir)
    pairs = []
    for entry in index["classes"]:
        for shot in entry["shots"]:
            base = split_dir / entry["class_id"] / shot
            observed = imgio.read_png(base.with_suffix(".png"))
            with open(base.with_suffix(".json")) as fh:
                meta = json.load(fh)
            omega = ObjectParams.from_dict(meta["omega"])
            redo = scene.copy()
            redo.shadows_enabled = False
            redo.objects = redo.objects + [omega.to_instance()]
            pairs.append((observed, render(redo)))
            if args.limit and len(pairs) >= args.limit:
                break
        if args.limit and len(pairs) >= args.limit:
            break
    selection = select_channels(pairs, extractor, top_k=args.top_k)
    selection.to_json(args.out)
    _write_metadata(args.out, _resolved(args))
    _log(f"selected channels {selection.indices} (losses {selection.losses})")
    return 0


def cmd_infer(args):
    scene = load_scene(args.scene)
    observation = imgio.read_png(args.image)
    if observation.shape[:2] != (scene.camera.height, scene.camera.width):
        observation = imgio.resize_image(
            observation, scene.camera.width, scene.camera.height
        )
    lik_cfg, extractor, selection = _likelihood_setup(args)
    sigma = args.scale_sigma
    if sigma is None:
        sigma = scale_sigma_for_image(args.image)
    priors = PriorSet(scale=LogNormal(0.025, sigma))
    target = TargetDensity(
        priors, scene, observation, config=lik_cfg,
        extractor=extractor, selection=selection,
    )
    cfg = _mcmc_config(args)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ValidationError(str(exc))
    _log(f"sampling {cfg.chains} chains x {cfg.draws} draws ({args.mode})")
    samples = sample_posterior(BijectedTarget(target), cfg)
    save_bigp(samples, args.out)
    _write_metadata(args.out, _resolved(args))
    diag = {"acceptance": samples.acceptance.tolist()}
    if cfg.chains >= 2:
        diag = diagnostics(samples)
    _log(f"acceptance rates: {np.round(samples.acceptance, 3).tolist()}")
    if "rhat" in diag:
        _log(f"max split-Rhat: {max(diag['rhat']):.3f}")
    return 0


def _program_for_image(path, scene, mcmc_cfg, lik_cfg, extractor, selection, cache):
    samples = posterior_for_image(
        path, scene, mcmc_cfg, lik_cfg,
        extractor=extractor, selection=selection, cache=cache,
    )
    return build_program(samples, provenance={"shots": 1, "source": str(path)})


def cmd_classify(args):
    support_dir = Path(args.support)
    index, scene = load_dataset_index(support_dir)
    lik_cfg, extractor, selection = _likelihood_setup(args)
    mcmc_cfg = _mcmc_config(args)
    cache = {}
    class_ids = []
    class_programs = []
    for entry in index["classes"]:
        program = None
        for shot in entry["shots"][: args.k_shot]:
            path = support_dir / entry["class_id"] / f"{shot}.png"
            p = _program_for_image(
                path, scene, mcmc_cfg, lik_cfg, extractor, selection, cache
            )
            program = p if program is None else merge(program, p)
        class_ids.append(entry["class_id"])
        class_programs.append(program)
        _log(f"built class program for {entry['class_id']}")
    query = Path(args.query)
    queries = sorted(query.glob("*.png")) if query.is_dir() else [query]
    rows = []
    for q in queries:
        qprog = _program_for_image(
            q, scene, mcmc_cfg, lik_cfg, extractor, selection, cache
        )
        probs = classify_programs(qprog, class_programs)
        rows.append((q.name, class_ids[int(probs.argmax())], probs))
        _log(f"{q.name} -> {rows[-1][1]}")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query-id", "predicted-class"] + class_ids)
        for name, pred, probs in rows:
            writer.writerow([name, pred] + [f"{p:.6f}" for p in probs])
    _write_metadata(args.out, _resolved(args))
    return 0


def _adi_table(split_dir, cache, scene):
    """Per-class mean ADI of posterior-median poses, over cached posteriors."""
    split_dir = Path(split_dir)
    per_class = {}
    for key, samples in cache.items():
        image_path = Path(key[0])
        meta_path = image_path.with_suffix(".json")
        if not meta_path.exists():
            continue
        with open(meta_path) as fh:
            meta = json.load(fh)
        omega = ObjectParams.from_dict(meta["omega"])
        truth = pose_from_omega_vector(omega.to_vector())
        est = pose_from_omega_vector(posterior_median(samples))
        shape = omega.to_instance().shape
        err = adi_error(est, truth, shape)
        per_class.setdefault(meta["class_id"], []).append(err)
    return {
        cid: {"mean_adi": float(np.mean(v)), "count": len(v)}
        for cid, v in sorted(per_class.items())
    }


def cmd_evaluate(args):
    lik_cfg, extractor, selection = _likelihood_setup(args)
    mcmc_cfg = _mcmc_config(args)
    cache = {}
    _log(
        f"evaluating {args.episodes} episodes of {args.n_way}-way "
        f"{args.k_shot}-shot ({args.mode})"
    )
    result = run_episodes(
        args.dataset,
        n_way=args.n_way,
        k_shot=args.k_shot,
        episodes=args.episodes,
        mcmc_cfg=mcmc_cfg,
        likelihood_cfg=lik_cfg,
        extractor=extractor,
        selection=selection,
        seed=args.seed,
        shuffle_labels=args.shuffle_labels,
        cache=cache,
        progress=lambda ep, acc: _log(f"episode {ep}: accuracy {acc:.3f}"),
    )
    _, scene = load_dataset_index(args.dataset)
    report = {
        "accuracy": result.accuracy,
        "stderr": result.stderr,
        "episodes": result.per_episode,
        "adi": _adi_table(args.dataset, cache, scene),
        "config": _resolved(args),
    }
    with open(args.report, "w") as fh:
        json.dump(report, fh, indent=0, sort_keys=True)
    _log(f"accuracy {result.accuracy:.3f} +/- {result.stderr:.3f}")
    return 0


def _load_pose(path):
    with open(path) as fh:
        d = json.load(fh)
    return PoseEstimate(
        translation=np.asarray(d["translation"], dtype=np.float64),
        z_rotation=float(d["z_rotation"]),
        scale=np.asarray(d["scale"], dtype=np.float64),
    )


def cmd_adi(args):
    est = _load_pose(args.estimate)
    truth = _load_pose(args.truth)
    try:
        shape = ShapeClass(args.shape)
        value = adi_error(est, truth, shape, n_points=args.points)
    except ValueError as exc:
        raise ValidationError(str(exc))
    print(f"{value:.6f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"adi": value, "config": _resolved(args)}, fh)
    return 0


# --- argument plumbing -----------------------------------------------------------


def _add_mcmc_flags(p):
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--draws", type=int, default=3000)
    p.add_argument("--burn-in", type=int, default=300)
    p.add_argument("--proposal-scale", type=float, default=0.05)


def _add_likelihood_flags(p):
    p.add_argument("--mode", choices=["p3", "np3"], default="p3")
    p.add_argument("--sigma-image", type=float, default=1.0)
    p.add_argument("--neural-scale", type=float, default=0.05)
    p.add_argument("--weights", default=None, help="BIGW weight file (np3)")
    p.add_argument("--selection", default=None, help="channel selection JSON (np3)")
    p.add_argument("--scale-sigma", type=float, default=None,
                   help="scale prior spread; defaults to the value recorded in the dataset")


def build_parser():
    parser = _Parser(prog="bigraph", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"bigraph {__version__} (formats: "
            + ", ".join(f"{k} v{v}" for k, v in FILE_FORMAT_VERSIONS.items())
            + ")"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--config", default=None, help="JSON file of defaults")

    p = sub.add_parser("gen-dataset", help="generate a labeled dataset split")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--shots", type=int, default=6)
    p.add_argument("--width", type=int, default=80)
    p.add_argument("--height", type=int, default=60)
    p.add_argument("--profile", choices=["standard", "dark", "room"],
                   default="standard")
    p.add_argument("--split", default="train")
    p.add_argument("--scale-sigma", type=float, default=0.1)
    p.add_argument("--shadows", action="store_true")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("render", help="render a scene file to PNG or BIGI")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("optimize-scene", help="fit globals and materials")
    common(p)
    p.add_argument("--dataset", required=True, help="dataset split directory")
    p.add_argument("--out", required=True, help="optimized scene JSON")
    p.add_argument("--epochs", type=int, default=7)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--steps-per-epoch", type=int, default=30)
    p.add_argument("--limit", type=int, default=0, help="cap target images")
    p.add_argument("--loss-csv", default=None)
    p.set_defaults(func=cmd_optimize_scene)

    p = sub.add_parser("select-channels", help="rank feature channels")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--random-weights-seed", type=int, default=0)
    p.add_argument("--save-weights", default=None)
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--limit", type=int, default=0)
    p.set_defaults(func=cmd_select_channels)

    p = sub.add_parser("infer", help="posterior sampling for one image")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="BIGP posterior file")
    _add_mcmc_flags(p)
    _add_likelihood_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("classify", help="classify queries against a support set")
    common(p)
    p.add_argument("--support", required=True, help="dataset split directory")
    p.add_argument("--query", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="predictions CSV")
    p.add_argument("--k-shot", type=int, default=1)
    _add_mcmc_flags(p)
    _add_likelihood_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="N-way K-shot episode evaluation")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--n-way", type=int, default=5)
    p.add_argument("--k-shot", type=int, default=1)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--shuffle-labels", action="store_true")
    _add_mcmc_flags(p)
    _add_likelihood_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("adi", help="pose error between two pose JSON files")
    common(p)
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--shape", required=True,
                   choices=[s.value for s in ShapeClass])
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_adi)

    return parser


def _apply_config_file(parser, argv):
    """Defaults <- config file <- flags: reparse with file-provided defaults."""
    if "--config" not in argv:
        return argv, None
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise ValidationError("--config needs a file path")
    path = argv[idx + 1]
    with open(path) as fh:
        values = json.load(fh)
    if not isinstance(values, dict):
        raise ValidationError("config file must hold a JSON object")
    return argv, values


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv, config_values = _apply_config_file(parser, argv)
        if config_values:
            # config keys use flag spelling with dashes or underscores
            normalized = {
                k.replace("-", "_"): v for k, v in config_values.items()
            }
            for sp in parser._subparsers._group_actions[0].choices.values():
                known = {a.dest for a in sp._actions}
                sp.set_defaults(
                    **{k: v for k, v in normalized.items() if k in known}
                )
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        _log(f"error: {exc}")
        return 1
    except (ValueError, FileNotFoundError, OSError) as exc:
        _log(f"runtime failure: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
