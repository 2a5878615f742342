"""Single-file model containers: text header plus CDLT blobs.

Layout:

    #cdlm v1 kind=<kind>\n
    <key> = <value>\n ...
    blobs = <name>,<name>,...\n
    ---\n
    for each name, in order: "blob <name> <nbytes>\n" + raw CDLT bytes

Headers are ASCII; floats are written with repr() so they round-trip
exactly. Blob payloads are float32 (the CDLT dtype), so save -> load ->
save reproduces the file byte for byte.
"""

from __future__ import annotations

import io

import numpy as np

from .coupled import CROP_NAMES, CropEnsemble, GlobalModel, GlobalRegressor
from .dictionary import Dictionary
from .errors import FormatError, InputError
from .kernels import CenterBank
from .refine import BlockModel, RefinementModel
from .tensorio import decode_tensor, encode_tensor

_MAGIC = "#cdlm v1"


def _write_container(path, kind: str, header: dict, blobs: dict) -> None:
    buf = io.BytesIO()
    buf.write(f"{_MAGIC} kind={kind}\n".encode("ascii"))
    for k, v in header.items():
        buf.write(f"{k} = {v}\n".encode("ascii"))
    buf.write(("blobs = " + ",".join(blobs) + "\n").encode("ascii"))
    buf.write(b"---\n")
    for name, arr in blobs.items():
        raw = encode_tensor(arr)
        buf.write(f"blob {name} {len(raw)}\n".encode("ascii"))
        buf.write(raw)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_container(path, expect_kind: str):
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise InputError(f"cannot read model file {path}: {exc}") from exc
    with fh:
        first = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        if not first.startswith(_MAGIC):
            raise FormatError(f"{path}: not a cdlm container")
        kind = dict(tok.split("=", 1) for tok in first.split()[2:]).get("kind")
        if kind != expect_kind:
            raise FormatError(f"{path}: kind {kind!r}, expected {expect_kind!r}")
        header = {}
        blob_names = []
        while True:
            line = fh.readline().decode("ascii").rstrip("\n")
            if line == "---":
                break
            if not line:
                raise FormatError(f"{path}: truncated header")
            k, _, v = line.partition(" = ")
            if k == "blobs":
                blob_names = v.split(",") if v else []
            else:
                header[k] = v
        blobs = {}
        for expected in blob_names:
            tag = fh.readline().decode("ascii").rstrip("\n").split()
            if len(tag) != 3 or tag[0] != "blob" or tag[1] != expected:
                raise FormatError(f"{path}: blob sequence mismatch at {expected!r}")
            raw = fh.read(int(tag[2]))
            if len(raw) != int(tag[2]):
                raise FormatError(f"{path}: truncated blob {expected!r}")
            blobs[expected] = decode_tensor(raw, check_finite=False,
                                            source=f"{path}:{expected}")
    return header, blobs


def _global_model_entries(prefix: str, model: GlobalModel, header, blobs):
    header[f"{prefix}lambda_w"] = repr(model.lambda_w)
    header[f"{prefix}coarse_rows"] = model.coarse_rows
    header[f"{prefix}coarse_cols"] = model.coarse_cols
    blobs[f"{prefix}B"] = model.dictionary.B
    blobs[f"{prefix}T"] = model.regressor.T
    blobs[f"{prefix}centers"] = model.bank.centers
    blobs[f"{prefix}sigmas"] = model.bank.sigmas
    blobs[f"{prefix}mean"] = model.mean_depth


def _global_model_from(prefix: str, header, blobs) -> GlobalModel:
    B = np.asarray(blobs[f"{prefix}B"], dtype=np.float64)
    # float32 storage may nudge an atom norm just past 1; renormalize noise
    norms = np.linalg.norm(B, axis=0)
    over = norms > 1.0
    B[:, over] /= norms[over]
    return GlobalModel(
        dictionary=Dictionary(B),
        regressor=GlobalRegressor(np.asarray(blobs[f"{prefix}T"], dtype=np.float64)),
        bank=CenterBank(
            np.asarray(blobs[f"{prefix}centers"], dtype=np.float64),
            np.asarray(blobs[f"{prefix}sigmas"], dtype=np.float64),
        ),
        mean_depth=np.asarray(blobs[f"{prefix}mean"], dtype=np.float64),
        coarse_rows=int(header[f"{prefix}coarse_rows"]),
        coarse_cols=int(header[f"{prefix}coarse_cols"]),
        lambda_w=float(header[f"{prefix}lambda_w"]),
    )


def save_global_model(path, model: GlobalModel) -> None:
    header = {}
    blobs = {}
    _global_model_entries("", model, header, blobs)
    _write_container(path, "global_model", header, blobs)


def load_global_model(path) -> GlobalModel:
    header, blobs = _read_container(path, "global_model")
    return _global_model_from("", header, blobs)


def save_ensemble(path, ens: CropEnsemble) -> None:
    header = {
        "gamma": repr(ens.gamma),
        "squared_merge": int(ens.squared_merge),
    }
    blobs = {}
    for crop in CROP_NAMES:
        r, c = ens.crop_centers[crop]
        header[f"{crop}.center"] = f"{r!r},{c!r}"
        _global_model_entries(f"{crop}.", ens.models[crop], header, blobs)
    _write_container(path, "crop_ensemble", header, blobs)


def load_ensemble(path) -> CropEnsemble:
    header, blobs = _read_container(path, "crop_ensemble")
    models = {}
    centers = {}
    for crop in CROP_NAMES:
        models[crop] = _global_model_from(f"{crop}.", header, blobs)
        r, c = header[f"{crop}.center"].split(",")
        centers[crop] = (float(r), float(c))
    return CropEnsemble(
        models=models,
        crop_centers=centers,
        gamma=float(header["gamma"]),
        squared_merge=bool(int(header["squared_merge"])),
    )


def save_refinement(path, model: RefinementModel) -> None:
    header = {
        "p_i_rows": model.p_i_rows,
        "p_i_cols": model.p_i_cols,
        "uses_global": int(model.uses_global),
        "n_blocks": len(model.blocks),
    }
    blobs = {}
    for i, blk in enumerate(model.blocks):
        header[f"block{i}.rows"] = f"{blk.row_start},{blk.row_end}"
        blobs[f"block{i}.t_up"] = blk.t_up
        blobs[f"block{i}.centers"] = blk.bank.centers
        blobs[f"block{i}.sigmas"] = blk.bank.sigmas
    _write_container(path, "refinement_model", header, blobs)


def load_refinement(path) -> RefinementModel:
    header, blobs = _read_container(path, "refinement_model")
    blocks = []
    for i in range(int(header["n_blocks"])):
        start, end = header[f"block{i}.rows"].split(",")
        blocks.append(BlockModel(
            row_start=int(start),
            row_end=int(end),
            t_up=np.asarray(blobs[f"block{i}.t_up"], dtype=np.float64),
            bank=CenterBank(
                np.asarray(blobs[f"block{i}.centers"], dtype=np.float64),
                np.asarray(blobs[f"block{i}.sigmas"], dtype=np.float64),
            ),
        ))
    return RefinementModel(
        blocks=tuple(blocks),
        p_i_rows=int(header["p_i_rows"]),
        p_i_cols=int(header["p_i_cols"]),
        uses_global=bool(int(header["uses_global"])),
    )
