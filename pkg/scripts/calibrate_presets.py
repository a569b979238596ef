"""Calibrate Low/Medium/High noise factors on the synthetic fixture and re-check them on fresh sentences.

    python3 scripts/calibrate_presets.py [--probe 200] [--tolerance 0.005]
"""

import argparse
import json
import time

from asca.attack import AudioProbe
from asca.calibration import calibrate_presets
from asca.classifier import AugmentSpec, train_centroid
from asca.dataset import stratified_split, synth_dataset, synth_sentences
from asca.spectrogram import MEL_PRESETS


def parse():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--probe", type=int, default=200, help="probe sentences, half with digits")
    p.add_argument("--tolerance", type=float, default=0.005)
    p.add_argument("--eta-max", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args()


def run(args):
    ds = synth_dataset(args.seed)
    split = stratified_split(ds, 0.2, args.seed + 1)
    model = train_centroid(ds, split, MEL_PRESETS["synthetic"], AugmentSpec(mask_fraction=0.1, seed=args.seed + 2))
    probe = AudioProbe(model, ds)
    half = args.probe // 2
    sentences = synth_sentences(half, args.probe - half, args.seed + 3)
    start = time.perf_counter()
    results = calibrate_presets(sentences, probe, args.seed + 11, (0.0, args.eta_max), args.tolerance)
    elapsed = time.perf_counter() - start
    taken = set(sentences)
    fresh = [s for s in synth_sentences(3 * half, 3 * (args.probe - half), args.seed + 99) if s not in taken][:args.probe]
    out = {}
    for level, res in results.items():
        out[level] = {**res.to_json(), "fresh_accuracy": probe(res.eta, fresh, args.seed + 1234)}
    return {"levels": out, "elapsed_s": round(elapsed, 1)}


if __name__ == "__main__":
    print(json.dumps(run(parse()), indent=2))
