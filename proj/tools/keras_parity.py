#!/usr/bin/env python3
"""Check a depthfake backbone graph against its Keras counterpart.

Builds the Keras model with random weights and perturbed batch-norm
statistics, converts it, attaches a random dense head, and compares the
logit of the C++ graph (via depthfake_keras_parity) on a random image.

Usage:
    keras_parity.py PROBE {xception,resnet50,mobilenet_v1} [--tol 1e-4]

Exits 77 when TensorFlow is not importable so ctest can report a skip.
"""

import argparse
import importlib.util
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("probe")
    ap.add_argument("backbone", choices=["xception", "resnet50", "mobilenet_v1"])
    ap.add_argument("--tol", type=float, default=1e-4)
    args = ap.parse_args()

    try:
        import tensorflow as tf
    except ImportError:
        print("tensorflow not available")
        return 77

    here = Path(__file__).resolve().parent
    spec = importlib.util.spec_from_file_location("convert", here / "convert_keras_weights.py")
    convert = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(convert)

    tf.keras.utils.set_random_seed(3)
    model = convert.build(args.backbone, None)
    rng = np.random.default_rng(0)
    for layer in model.layers:
        if isinstance(layer, tf.keras.layers.BatchNormalization):
            g, b, m, v = layer.get_weights()
            layer.set_weights([g * rng.uniform(0.5, 1.5, g.shape), b + rng.normal(0, 0.1, b.shape),
                               rng.normal(0, 0.1, m.shape), v * rng.uniform(0.5, 1.5, v.shape)])

    items = convert.tensors(model, args.backbone)
    feat = model.output_shape[-1]
    w = rng.normal(0, 1 / np.sqrt(feat), (feat, 1)).astype(np.float32)
    b = np.array([0.1], np.float32)
    items += [("head_logit/kernel", w), ("head_logit/bias", b)]

    apps = tf.keras.applications
    pre = {"xception": apps.xception.preprocess_input, "resnet50": apps.resnet50.preprocess_input,
           "mobilenet_v1": apps.mobilenet.preprocess_input}[args.backbone]
    x = rng.uniform(0, 255, (1, 224, 224, 3)).astype(np.float32)
    # ResNet50 preprocessing flips RGB to BGR; the converter already flipped conv1.
    features = model(pre(x.copy()), training=False).numpy().mean(axis=(1, 2))
    expected = float((features @ w + b).item())

    with tempfile.TemporaryDirectory() as tmp:
        weights = Path(tmp) / "w.dfw"
        image = Path(tmp) / "x.f32"
        convert.write_dfw(weights, items)
        x.tofile(image)
        out = subprocess.run([args.probe, args.backbone, str(weights), str(image)],
                             check=True, capture_output=True, text=True).stdout
    got = float(out.strip())
    err = abs(got - expected)
    print(f"{args.backbone}: keras {expected:.9g} depthfake {got:.9g} abs err {err:.3g}")
    return 0 if err <= args.tol * max(1.0, abs(expected)) else 1


if __name__ == "__main__":
    sys.exit(main())
