"""Stand up a real study service for the scripted client flow test.

Creates a fresh 50 real + 30 fake study in a temp directory, prints one
JSON line {"port", "study"} to stdout, then serves until killed.
"""

import json
import socket
import tempfile
from pathlib import Path

import uvicorn
from PIL import Image, PngImagePlugin

from lesionforge import data
from lesionforge.vtt import StudyConfig, StudyStore
from lesionforge.vtt_api import build_app


def write_png(path, seed, index, tag):
    pixels, _ = data.synth_blob(seed, index, 16)
    arr = data.denormalize(pixels).transpose(1, 2, 0)
    info = PngImagePlugin.PngInfo()
    info.add_text("Source", f"{tag}-{index:03d}")
    Image.fromarray(arr).save(path, pnginfo=info)


def main():
    root = Path(tempfile.mkdtemp(prefix="vtt-ui-"))
    src = root / "src"
    src.mkdir()
    reals, fakes = [], []
    for i in range(55):
        p = src / f"real_{i:03d}.png"
        write_png(p, 1, i, "clinic")
        reals.append(str(p))
    for i in range(35):
        p = src / f"fake_{i:03d}.png"
        write_png(p, 2, 1000 + i, "model")
        fakes.append(str(p))

    store = StudyStore(root / "store")
    study = store.create_study(reals, fakes, StudyConfig(seed=3))
    app = build_app(store, "test-token")

    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    print(json.dumps({"port": port, "study": study.id}), flush=True)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


if __name__ == "__main__":
    main()
