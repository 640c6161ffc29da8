#!/usr/bin/env python3
"""Recover shared scene parameters (lights, floor, background) and per-object
materials from dataset images with known poses, then report the loss trace.

This is the calibration step that precedes inference: the optimized globals
become the fixed rendering context, and the recovered materials seed the
material priors.

Example:
    python3 scripts/fit_scene_globals.py --split results/ds/train \
        --out results/globals.json --epochs 7
"""

import argparse
import json
from pathlib import Path

import numpy as np

from bigraph import imgio
from bigraph.benchmark import load_dataset_index
from bigraph.genmodel import ObjectParams, PriorSet
from bigraph.sceneopt import SceneOptConfig, optimize_scene
from bigraph.scene import save_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--split", type=Path, required=True)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--epochs", type=int, default=7)
    ap.add_argument("--learning-rate", type=float, default=0.01)
    ap.add_argument("--limit", type=int, default=0, help="max images (0 = all)")
    args = ap.parse_args()

    index, scene = load_dataset_index(args.split)
    targets = []
    for entry in index["classes"]:
        for shot in entry["shots"]:
            path = args.split / entry["class_id"] / f"{shot}.png"
            with open(path.with_suffix(".json")) as fh:
                omega = ObjectParams.from_dict(json.load(fh)["omega"])
            targets.append((imgio.read_png(path), omega.to_instance()))
            if args.limit and len(targets) >= args.limit:
                break
        if args.limit and len(targets) >= args.limit:
            break

    cfg = SceneOptConfig(epochs=args.epochs, learning_rate=args.learning_rate)
    result = optimize_scene(
        targets, scene, cfg,
        progress=lambda epoch, loss: print(f"epoch {epoch}: loss {loss:.6f}"),
    )
    print(f"initial {result.initial_loss:.6f} -> final "
          f"{float(np.mean(result.final_losses)):.6f}")

    save_scene(
        result.globals_scene, args.out,
        extra={
            "epoch_losses": result.epoch_losses,
            "initial_loss": result.initial_loss,
        },
    )

    materials = result.object_materials
    priors = PriorSet.from_materials(materials)
    prior_doc = {
        prop: {"means": gmm.means.tolist(), "stds": gmm.stds.tolist(),
               "weights": gmm.weights.tolist()}
        for prop, gmm in priors.materials.items()
    }
    with open(args.out.with_suffix(".priors.json"), "w") as fh:
        json.dump(prior_doc, fh, indent=2)
    print(f"globals -> {args.out}; material priors -> "
          f"{args.out.with_suffix('.priors.json')}")


if __name__ == "__main__":
    main()
