"""Whole pipeline through the command-line entry point, in a temp directory.

synth -> ingest -> fit -> match -> augment, then a second identical run to
show that every output file is reproduced byte for byte.

Run with ``python demos/augment_pipeline.py``.
"""
import filecmp
import tempfile
from pathlib import Path

import numpy as np

from sceneaware import AudioBuffer, write_audio
from sceneaware.cli import main

FS = 16000


def fake_speech(seconds, rng):
    t = np.arange(int(seconds * FS)) / FS
    return 0.3 * rng.standard_normal(len(t)) * (0.6 + 0.4 * np.sin(2 * np.pi * 3 * t))


def make_inputs(root):
    rng = np.random.default_rng(3)
    (root / "clean" / "spk1").mkdir(parents=True)
    (root / "noise").mkdir()
    # the 3.5 s pause splits the first recording into two segments
    talk = np.concatenate([fake_speech(2, rng), np.zeros(int(3.5 * FS)), fake_speech(1.5, rng)])
    write_audio(AudioBuffer(talk, FS), root / "clean" / "spk1" / "a.wav")
    write_audio(AudioBuffer(fake_speech(1, rng), FS), root / "clean" / "b.wav")
    write_audio(AudioBuffer(0.1 * rng.standard_normal(5 * FS), FS), root / "noise" / "hum.wav")


def pipeline(root, out):
    w = lambda p: str(root / out / p)
    for argv in (
        ["synth", "--count", "12", "--t60-range", "0.2", "1.0", "--seed", "5", "--out", w("airs")],
        ["synth", "--count", "3", "--t60-range", "0.4", "0.5", "--seed", "6", "--out", w("scene")],
        ["ingest", w("airs"), "--out", w("catalog.csv")],
        ["fit", "--scene-airs", w("scene"), "--epsilon", "0.02", "--out", w("scene.json")],
        ["match", "--catalog", w("catalog.csv"), "--scene", w("scene.json"), "-M", "4",
         "--seed", "5", "--out", w("selection.json"), "--hist", w("hist.csv")],
        ["augment", "--selection", w("selection.json"), "--clean", str(root / "clean"),
         "--noise", str(root / "noise"), "--seed", "5", "--out", w("train")],
    ):
        print("$ sceneaware", " ".join(a.replace(str(root) + "/", "") for a in argv))
        if main(argv) != 0:
            raise SystemExit(f"{argv[0]} failed")


with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    make_inputs(root)
    pipeline(root, "first")
    pipeline(root, "second")
    files = sorted(p.relative_to(root / "first") for p in (root / "first").rglob("*") if p.is_file())
    same = [f for f in files if filecmp.cmp(root / "first" / f, root / "second" / f, shallow=False)]
    print(f"\n{len(same)} of {len(files)} files identical across the two runs")
    print((root / "first" / "train" / "manifest.json").read_text()[:600], "...")
