#!/usr/bin/env python3
"""Export the first convolution layer of a standard image network to the
portable BIGW weight format, with a JSON manifest.

The script is self-contained: it writes the BIGW byte layout directly
(magic "BIGW", u32 version, then per tensor a u32 rank, u32 dims, and
little-endian float32 values, kernel before bias) so consumers only need
the file, not this environment.

Usage:
    python3 export_weights.py --model vgg16 --out weights.bigw \
        --manifest manifest.json

Pretrained weights require download access; `--allow-untrained` falls back
to the architecture's seeded random initialization so the export pipeline
can be exercised offline.
"""

import argparse
import hashlib
import json
import struct
import sys

import numpy as np

BIGW_MAGIC = b"BIGW"
BIGW_VERSION = 1

EXPECTED_KERNEL_SHAPE = (64, 3, 3, 3)  # [out, in, kh, kw]
EXPECTED_BIAS_SHAPE = (64,)

MODELS = {
    "vgg16": ("VGG16_Weights.IMAGENET1K_V1", "features.0"),
}


def write_bigw(tensors, path):
    with open(path, "wb") as fh:
        fh.write(BIGW_MAGIC)
        fh.write(struct.pack("<I", BIGW_VERSION))
        for t in tensors:
            arr = np.asarray(t, dtype=np.float32)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes(order="C"))


def load_first_conv(model_id, allow_untrained=False, seed=0):
    """Return (kernel, bias, layer_name, pretrained) as float32 arrays."""
    import torch
    import torchvision.models as models

    if model_id not in MODELS:
        raise SystemExit(f"unknown model '{model_id}'; known: {sorted(MODELS)}")
    weights_name, layer_name = MODELS[model_id]

    pretrained = True
    try:
        weights = getattr(models, weights_name.split(".")[0])[
            weights_name.split(".")[1]
        ]
        net = getattr(models, model_id)(weights=weights)
    except Exception as exc:  # download/offline failure
        if not allow_untrained:
            raise SystemExit(
                f"could not obtain pretrained weights ({exc}); "
                "pass --allow-untrained to export a seeded random "
                "initialization instead"
            )
        torch.manual_seed(seed)
        net = getattr(models, model_id)(weights=None)
        pretrained = False

    layer = net
    for part in layer_name.split("."):
        layer = layer[int(part)] if part.isdigit() else getattr(layer, part)
    kernel = layer.weight.detach().numpy().astype(np.float32)
    bias = layer.bias.detach().numpy().astype(np.float32)
    return kernel, bias, layer_name, pretrained


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="vgg16")
    ap.add_argument("--out", required=True)
    ap.add_argument("--manifest", required=True)
    ap.add_argument(
        "--allow-untrained", action="store_true",
        help="fall back to seeded random initialization if pretrained "
             "weights cannot be downloaded",
    )
    ap.add_argument("--seed", type=int, default=0,
                    help="seed for the untrained fallback")
    args = ap.parse_args(argv)

    kernel, bias, layer_name, pretrained = load_first_conv(
        args.model, allow_untrained=args.allow_untrained, seed=args.seed
    )

    # abort on shape mismatch before anything is written
    if kernel.shape != EXPECTED_KERNEL_SHAPE:
        raise SystemExit(
            f"kernel shape {kernel.shape} != expected {EXPECTED_KERNEL_SHAPE}"
        )
    if bias.shape != EXPECTED_BIAS_SHAPE:
        raise SystemExit(
            f"bias shape {bias.shape} != expected {EXPECTED_BIAS_SHAPE}"
        )
    if not (np.isfinite(kernel).all() and np.isfinite(bias).all()):
        raise SystemExit("non-finite values in source weights")

    write_bigw([kernel, bias], args.out)
    with open(args.out, "rb") as fh:
        checksum = hashlib.sha256(fh.read()).hexdigest()

    manifest = {
        "model": args.model,
        "layer": layer_name,
        "pretrained": pretrained,
        "kernel_shape": list(kernel.shape),
        "bias_shape": list(bias.shape),
        "sha256": checksum,
        "format": {"magic": "BIGW", "version": BIGW_VERSION},
    }
    if not pretrained:
        manifest["seed"] = args.seed
    with open(args.manifest, "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {args.out} (sha256 {checksum[:12]}...) and {args.manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
