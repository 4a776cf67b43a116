"""Build the grayscale PGM corpus under data/ from sample images bundled
with scikit-image, scikit-learn and matplotlib, plus photographs shipped
inside the PyWavelets, mahotas and scipy 1.9 wheels (fetched with
`pip download` into a temporary directory).

Test images are resized so the short side is 256 and center-cropped to
256x256. Training images are resized so the short side is 384, or kept at
native size when smaller.
"""
import bz2
import io
import os
import pickle
import subprocess
import sys
import tempfile
import zipfile

import numpy as np

import matplotlib
import skimage
import sklearn
from PIL import Image

SK = os.path.join(os.path.dirname(skimage.__file__), "data")
SL = os.path.join(os.path.dirname(sklearn.__file__), "datasets", "images")
MPL = os.path.join(os.path.dirname(matplotlib.__file__), "mpl-data", "sample_data")

TEST = {
    "camera": os.path.join(SK, "camera.png"),
    "astronaut": os.path.join(SK, "astronaut.png"),
    "coffee": os.path.join(SK, "coffee.png"),
    "chelsea": os.path.join(SK, "chelsea.png"),
    "coins": os.path.join(SK, "coins.png"),
    "moon": os.path.join(SK, "moon.png"),
    "rocket": os.path.join(SK, "rocket.jpg"),
    "hopper": os.path.join(MPL, "grace_hopper.jpg"),
    "flower": os.path.join(SL, "flower.jpg"),
    "china": os.path.join(SL, "china.jpg"),
}

TRAIN = {
    "motorcycle_left": os.path.join(SK, "motorcycle_left.png"),
    "motorcycle_right": os.path.join(SK, "motorcycle_right.png"),
    "hubble": os.path.join(SK, "hubble_deep_field.jpg"),
    "retina": os.path.join(SK, "retina.jpg"),
    "brick": os.path.join(SK, "brick.png"),
    "grass": os.path.join(SK, "grass.png"),
    "gravel": os.path.join(SK, "gravel.png"),
    "clock": os.path.join(SK, "clock_motion.png"),
    "cell": os.path.join(SK, "cell.png"),
    "ihc": os.path.join(SK, "ihc.png"),
}


WHEELS = {
    "face": ("scipy==1.9.3", "scipy/misc/face.dat"),
    "ascent": ("scipy==1.9.3", "scipy/misc/ascent.dat"),
    "aero": ("PyWavelets==1.8.0", "pywt/data/aero.npz"),
    "store": ("mahotas==1.4.19", "mahotas/demos/data/DepartmentStore.jpg"),
    "portrait": ("mahotas==1.4.19", "mahotas/demos/data/luispedro.jpg"),
}


def wheel_images(tmp):
    reqs = sorted({r for r, _ in WHEELS.values()})
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, *reqs],
        check=True,
    )
    wheels = [os.path.join(tmp, f) for f in os.listdir(tmp) if f.endswith(".whl")]
    out = {}
    for name, (req, member) in WHEELS.items():
        prefix = req.split("==")[0].lower()
        wheel = next(w for w in wheels if os.path.basename(w).lower().startswith(prefix))
        raw = zipfile.ZipFile(wheel).read(member)
        if member.endswith("face.dat"):
            arr = np.frombuffer(bz2.decompress(raw), dtype=np.uint8).reshape(768, 1024, 3)
            im = Image.fromarray(arr)
        elif member.endswith("ascent.dat"):
            im = Image.fromarray(np.asarray(pickle.loads(raw)).astype(np.uint8))
        elif member.endswith(".npz"):
            data = np.load(io.BytesIO(raw))
            im = Image.fromarray(np.asarray(data[data.files[0]]).astype(np.uint8))
        else:
            im = Image.open(io.BytesIO(raw))
        out[name] = im
    return out


def gray_resized(src, short):
    im = (src if isinstance(src, Image.Image) else Image.open(src)).convert("L")
    w, h = im.size
    if min(w, h) < short:
        return im
    s = short / min(w, h)
    return im.resize((max(short, round(w * s)), max(short, round(h * s))), Image.LANCZOS)


def main(root):
    for name, path in TEST.items():
        im = gray_resized(path, 256)
        w, h = im.size
        l, t = (w - 256) // 2, (h - 256) // 2
        im.crop((l, t, l + 256, t + 256)).save(os.path.join(root, "test", name + ".pgm"))
    sources = dict(TRAIN)
    with tempfile.TemporaryDirectory() as tmp:
        sources.update(wheel_images(tmp))
        for name, src in sources.items():
            gray_resized(src, 384).save(os.path.join(root, "train", name + ".pgm"))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data"))
