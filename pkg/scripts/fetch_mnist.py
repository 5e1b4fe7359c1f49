"""Download the four MNIST IDX files into the localerr data directory.

Tries the public gzip mirrors first, then falls back to a PyPI source
distribution that bundles the raw files. Usage::

    python scripts/fetch_mnist.py [--dest DIR]

DIR defaults to $LOCALERR_DATA_DIR, else ~/.cache/localerr/mnist.
"""

from __future__ import annotations

import argparse
import gzip
import io
import sys
import tarfile
import urllib.request
import zipfile
from pathlib import Path

FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]
MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
]
SDIST = ("https://files.pythonhosted.org/packages/be/d1/"
         "6db83a78917574d10bdbfa61c1d563300770d643735f6cf355a6f9adcabe/MNIST_dir-0.2.tar.gz")


def _get(url: str, timeout: float = 60.0) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as r:
        return r.read()


def _canonical(name: str) -> str | None:
    base = Path(name).name
    if base.startswith("._"):
        return None
    for target in FILES:
        if base.replace(".idx", "-idx").removesuffix(".gz") == target:
            return target
    return None


def _store(dest: Path, target: str, payload: bytes, gz: bool) -> None:
    if gz:
        payload = gzip.decompress(payload)
    (dest / target).write_bytes(payload)
    print(f"  {target}: {len(payload)} bytes")


def from_mirrors(dest: Path) -> bool:
    for mirror in MIRRORS:
        try:
            blobs = {f: _get(mirror + f + ".gz") for f in FILES}
        except OSError as exc:
            print(f"mirror {mirror} failed: {exc}", file=sys.stderr)
            continue
        for f, b in blobs.items():
            _store(dest, f, b, gz=True)
        return True
    return False


def _scan_archive(members, dest: Path, found: set) -> None:
    for name, read in members:
        target = _canonical(name)
        if target and target not in found:
            _store(dest, target, read(), gz=name.endswith(".gz"))
            found.add(target)
        elif name.endswith(".zip") and not Path(name).name.startswith("._"):
            with zipfile.ZipFile(io.BytesIO(read())) as z:
                _scan_archive([(n, lambda n=n: z.read(n)) for n in z.namelist()], dest, found)


def from_sdist(dest: Path) -> bool:
    try:
        blob = _get(SDIST, timeout=300.0)
    except OSError as exc:
        print(f"PyPI fallback failed: {exc}", file=sys.stderr)
        return False
    found: set = set()
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        members = [(m.name, lambda m=m: tar.extractfile(m).read()) for m in tar.getmembers() if m.isfile()]
        _scan_archive(members, dest, found)
    return found == set(FILES)


def main(argv=None) -> int:
    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
    from localerr.data import data_dir, mnist_available

    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--dest", help="target directory")
    args = parser.parse_args(argv)
    dest = data_dir(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    if mnist_available(dest):
        print(f"MNIST already present in {dest}")
        return 0
    print(f"fetching MNIST into {dest}")
    if not (from_mirrors(dest) or from_sdist(dest)):
        print("could not download MNIST from any source", file=sys.stderr)
        return 2
    return 0 if mnist_available(dest) else 2


if __name__ == "__main__":
    sys.exit(main())
