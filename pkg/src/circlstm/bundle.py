"""On-disk model bundles and sequence files.

Bundle directory layout::

    manifest.json            architecture, block size, fixed-point format, tensor index
    tensors/<name>.f64       float64 little-endian, C order
    tensors/<name>.q16       int16 little-endian raw fixed-point values, C order
    spectra/<name>.c128      float64 little-endian, interleaved (re, im), shape (p, q, k/2+1, 2)

Circulant tensors store their defining vectors with shape (p, q, k). The
manifest lists every file with its shape and SHA-256; loading checks both,
and re-derives the spectra to confirm they match the stored rows. Output is
byte-for-byte deterministic for the same weights.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .circulant import BlockCirculantMatrix, SpectralWeights, project_dense
from .fxp import FxpFormat, quantize_array
from .lstm import LstmArchSpec, LstmWeights
from .spectral import PackedSpectrum, dft

FORMAT = "circlstm-bundle"
VERSION = 1


class BundleError(ValueError):
    pass


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(root: Path, rel: str, data: bytes) -> dict:
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return {"file": rel, "sha256": _sha(data)}


def save_bundle(weights: LstmWeights, path, *, seed: int | None = None, source: str = "random",
                spectra: bool = True) -> dict:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    fmt = weights.cells[0][0].fmt
    entries = []
    for name, t in sorted(weights.named_tensors().items()):
        if isinstance(t, BlockCirculantMatrix):
            values = t.rows
            entry = {"name": name, "kind": "circulant", "m": t.m, "n": t.n, "k": t.k}
        else:
            values = np.asarray(t, dtype=np.float64)
            entry = {"name": name, "kind": "dense" if values.ndim == 2 else "vector"}
        entry["shape"] = list(values.shape)
        entry["f64"] = _write(root, f"tensors/{name}.f64", values.astype("<f8").tobytes())
        entry["q16"] = _write(root, f"tensors/{name}.q16",
                              quantize_array(values, fmt).raw.astype("<i2").tobytes())
        if spectra and isinstance(t, BlockCirculantMatrix):
            bins = dft(t.rows).bins
            inter = np.stack([bins.real, bins.imag], axis=-1)
            entry["spectrum"] = _write(root, f"spectra/{name}.c128", inter.astype("<f8").tobytes())
        entries.append(entry)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "arch": weights.arch.to_dict(),
        "block_size": weights.arch.block_size,
        "fxp": str(fmt),
        "seed": seed,
        "source": source,
        "tensors": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _read(root: Path, ref: dict, dtype: str, shape) -> np.ndarray:
    path = root / ref["file"]
    try:
        data = path.read_bytes()
    except OSError as e:
        raise BundleError(f"missing payload {ref['file']}") from e
    if _sha(data) != ref["sha256"]:
        raise BundleError(f"hash mismatch for {ref['file']}")
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) != count * np.dtype(dtype).itemsize:
        raise BundleError(f"{ref['file']} has {len(data)} bytes, expected shape {shape}")
    return np.frombuffer(data, dtype=dtype).reshape(shape)


def load_manifest(path) -> dict:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise BundleError(f"cannot read bundle manifest in {root}: {e}") from e
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise BundleError("not a circlstm bundle (format/version mismatch)")
    return manifest


def load_bundle(path, spectra_tol: float = 1e-9) -> tuple[LstmWeights, dict]:
    root = Path(path)
    manifest = load_manifest(root)
    try:
        arch = LstmArchSpec.from_dict(manifest["arch"])
        fmt = FxpFormat.parse(manifest["fxp"])
    except (KeyError, TypeError, ValueError) as e:
        raise BundleError(f"bad manifest: {e}") from e
    tensors, stored = {}, {}
    for e in manifest["tensors"]:
        values = _read(root, e["f64"], "<f8", e["shape"]).astype(np.float64)
        q = _read(root, e["q16"], "<i2", e["shape"]).astype(np.int64)
        if not np.array_equal(q, quantize_array(values, fmt).raw):
            raise BundleError(f"{e['name']}: quantized payload disagrees with float payload")
        if e["kind"] == "circulant":
            t = BlockCirculantMatrix(e["m"], e["n"], e["k"], values)
            if "spectrum" in e:
                F = e["k"] // 2 + 1
                inter = _read(root, e["spectrum"], "<f8", list(values.shape[:2]) + [F, 2])
                bins = inter[..., 0] + 1j * inter[..., 1]
                if not np.allclose(bins, dft(values).bins, rtol=0, atol=spectra_tol):
                    raise BundleError(f"{e['name']}: stored spectrum is not the DFT of its rows")
                stored[e["name"]] = PackedSpectrum(e["k"], bins)
            tensors[e["name"]] = t
        else:
            tensors[e["name"]] = values
    try:
        weights = LstmWeights.from_named_tensors(arch, tensors, fmt)
    except (KeyError, ValueError) as e:
        raise BundleError(f"bundle tensors do not match the architecture: {e}") from e
    for l, per_dir in enumerate(weights.cells):
        for d, cell in zip(arch.direction_names(), per_dir):
            for name, mat in cell.matrices().items():
                key = f"l{l}.{d}.{name}"
                if key in stored:
                    cell.set_spectral(name, SpectralWeights.from_spectra(mat, stored[key], fmt))
    return weights, manifest


def weights_from_dense(arch: LstmArchSpec, path, fmt: FxpFormat | None = None) -> LstmWeights:
    """Project dense matrices from an ``.npz`` (keys as in the bundle, W_* 2-D) onto block-circulant form."""
    try:
        with np.load(path) as data:
            arrays = {k: np.asarray(data[k], dtype=np.float64) for k in data.files}
    except Exception as e:  # numpy raises several types for corrupt archives
        raise BundleError(f"cannot read dense model {path}: {e}") from e
    tensors = {}
    for name, m, n in arch.matrix_shapes():
        if name not in arrays:
            raise BundleError(f"dense model lacks {name}")
        if arrays[name].shape != (m, n):
            raise BundleError(f"{name} has shape {arrays[name].shape}, expected {(m, n)}")
        tensors[name] = project_dense(arrays[name], arch.block_size)
    for name, arr in arrays.items():
        tensors.setdefault(name, arr)
    try:
        return LstmWeights.from_named_tensors(arch, tensors, fmt or FxpFormat())
    except (KeyError, ValueError) as e:
        raise BundleError(f"dense model does not match the architecture: {e}") from e


# --------------------------------------------------------------------------
# sequences


def read_sequence(path, input_dim: int) -> np.ndarray:
    """JSON (list of frames, or ``{"frames": [...]}``) or raw float32 little-endian frames."""
    path = Path(path)
    try:
        if path.suffix == ".json":
            data = json.loads(path.read_text())
            frames = data["frames"] if isinstance(data, dict) else data
            X = np.asarray(frames, dtype=np.float64)
            if X.size == 0:
                return np.zeros((0, input_dim))
        else:
            raw = np.frombuffer(path.read_bytes(), dtype="<f4")
            if raw.size % input_dim:
                raise BundleError(f"{path}: {raw.size} floats is not a multiple of {input_dim}")
            X = raw.reshape(-1, input_dim).astype(np.float64)
    except (OSError, ValueError, KeyError, TypeError) as e:
        if isinstance(e, BundleError):
            raise
        raise BundleError(f"cannot read sequence {path}: {e}") from e
    if X.ndim != 2:
        raise BundleError(f"{path}: frames must form a 2-D array")
    return X


def write_sequence(path, Y: np.ndarray):
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps({"frames": np.asarray(Y).tolist()}) + "\n")
    else:
        path.write_bytes(np.asarray(Y, dtype="<f4").tobytes())
