"""Regenerate the checked-in test fixtures.

Needs scikit-image (only for the source photograph); the test suite itself
reads the PNG with Pillow.
"""

import argparse
import os

import numpy as np
from PIL import Image


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures"))
    args = ap.parse_args()
    from skimage import data

    crop = np.asarray(data.camera())[96:224, 160:288].astype(np.uint8)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "camera_crop.png")
    Image.fromarray(crop).save(path)
    print(f"wrote {path} {crop.shape}")


if __name__ == "__main__":
    main()
