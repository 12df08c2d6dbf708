#!/usr/bin/env python3
"""Convert Keras ImageNet weights (include_top=False) to depthfake .dfw files.

Usage:
    convert_keras_weights.py {xception,resnet50,mobilenet_v1} [--out DIR]

The output lands in DIR (default $DEPTHFAKE_WEIGHTS_DIR or
~/.cache/depthfake/weights) as <backbone>_imagenet.dfw. Keras downloads the
source weights on first use, so this needs network access once.
"""

import argparse
import os
import struct
import sys
from pathlib import Path

import numpy as np

STEMS = {"xception": "xception", "resnet50": "resnet50", "mobilenet_v1": "mobilenet_v1"}
# Keras leaves the Xception residual projections unnamed; in build order they
# belong to blocks 2, 3, 4 and 13.
XCEPTION_RESIDUALS = ["block2", "block3", "block4", "block13"]


def build(name, weights):
    import tensorflow as tf

    apps = tf.keras.applications
    kwargs = dict(weights=weights, include_top=False, input_shape=(224, 224, 3))
    if name == "xception":
        return apps.Xception(**kwargs)
    if name == "resnet50":
        return apps.ResNet50(**kwargs)
    return apps.MobileNet(**kwargs)


def tensors(model, name):
    import tensorflow as tf

    layers = tf.keras.layers
    out = []
    residual_convs = 0
    residual_bns = 0
    for layer in model.layers:
        w = layer.get_weights()
        if not w:
            continue
        lname = layer.name
        if isinstance(layer, layers.SeparableConv2D):
            out.append((f"{lname}/depthwise/depthwise_kernel", w[0][:, :, :, 0]))
            out.append((f"{lname}/pointwise/kernel", w[1]))
        elif isinstance(layer, layers.DepthwiseConv2D):
            out.append((f"{lname}/depthwise_kernel", w[0][:, :, :, 0]))
            if len(w) > 1:
                out.append((f"{lname}/bias", w[1]))
        elif isinstance(layer, layers.Conv2D):
            if name == "xception" and not lname.startswith("block"):
                lname = f"{XCEPTION_RESIDUALS[residual_convs]}_residual_conv"
                residual_convs += 1
            kernel = w[0]
            if name == "resnet50" and lname == "conv1_conv":
                # Keras feeds ResNet50 BGR; the depthfake graph takes RGB.
                kernel = kernel[:, :, ::-1, :]
            out.append((f"{lname}/kernel", kernel))
            if len(w) > 1:
                out.append((f"{lname}/bias", w[1]))
        elif isinstance(layer, layers.BatchNormalization):
            if name == "xception" and not lname.startswith("block"):
                lname = f"{XCEPTION_RESIDUALS[residual_bns]}_residual_bn"
                residual_bns += 1
            for suffix, value in zip(["gamma", "beta", "moving_mean", "moving_variance"], w):
                out.append((f"{lname}/{suffix}", value))
        else:
            sys.exit(f"unhandled layer {lname} ({type(layer).__name__})")
    return out


def write_dfw(path, items):
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(b"DFWEIGHT")
        f.write(struct.pack("<II", 1, len(items)))
        for name, value in items:
            value = np.ascontiguousarray(value, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", value.ndim))
            f.write(struct.pack(f"<{value.ndim}q", *value.shape))
            f.write(value.tobytes())
    os.replace(tmp, path)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("backbone", choices=sorted(STEMS))
    default_dir = os.environ.get("DEPTHFAKE_WEIGHTS_DIR") or str(Path.home() / ".cache" / "depthfake" / "weights")
    parser.add_argument("--out", default=default_dir)
    parser.add_argument("--weights", default="imagenet",
                        help="'imagenet', a Keras weights file, or 'none' for a random layout check")
    args = parser.parse_args()

    model = build(args.backbone, None if args.weights == "none" else args.weights)
    items = tensors(model, args.backbone)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{STEMS[args.backbone]}_imagenet.dfw"
    write_dfw(path, items)
    print(f"wrote {len(items)} tensors to {path}")


if __name__ == "__main__":
    main()
