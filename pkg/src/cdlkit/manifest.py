"""Line-delimited dataset manifests.

One record per line; the first token is the record kind, the rest are
key=value pairs. Paths are relative to the manifest file and may not
contain whitespace.

    # comment / blank lines ignored
    meta coarse_rows=12 coarse_cols=16 ... crop_names=C,UL,UR,DL,DR
    center id=center_0000 feat.C=centers/center_0000.C.cdlt ...
    example id=train_0000 split=train depth=... guide=... feat.C=... conv.c2=...

`load_dataset` reads every referenced tensor eagerly and validates the
whole bundle up front, so commands fail before touching their output
directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError
from .kernels import HypercolumnField
from .tensorio import read_tensor

META_INT_KEYS = ("coarse_rows", "coarse_cols", "pi_rows", "pi_cols",
                 "full_rows", "full_cols", "feat_dim")


@dataclass(frozen=True)
class ManifestMeta:
    coarse_rows: int
    coarse_cols: int
    pi_rows: int
    pi_cols: int
    full_rows: int
    full_cols: int
    feat_dim: int
    crop_names: tuple
    layers: tuple


@dataclass(frozen=True)
class ExampleRecord:
    id: str
    split: str
    depth: str
    guide: str
    features: dict            # crop -> relative path
    conv_maps: dict           # layer -> relative path


@dataclass(frozen=True)
class CenterRecord:
    id: str
    features: dict


@dataclass(frozen=True)
class Manifest:
    meta: ManifestMeta
    examples: tuple
    centers: tuple
    root: str

    def ids(self, split: str | None = None):
        return [e.id for e in self.examples if split is None or e.split == split]


def _parse_kv(tokens, lineno):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise FormatError(f"manifest line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        if k in out:
            raise FormatError(f"manifest line {lineno}: duplicate key {k!r}")
        out[k] = v
    return out


def load_manifest(path) -> Manifest:
    root = os.path.dirname(os.path.abspath(path))
    meta_kv = {}
    examples = []
    centers = []
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        kind, *rest = line.split()
        kv = _parse_kv(rest, lineno)
        if kind == "meta":
            meta_kv.update(kv)
        elif kind == "example":
            examples.append(_example_from_kv(kv, lineno))
        elif kind == "center":
            centers.append(_center_from_kv(kv, lineno))
        else:
            raise FormatError(f"manifest line {lineno}: unknown record kind {kind!r}")

    missing = [k for k in META_INT_KEYS + ("crop_names", "layers") if k not in meta_kv]
    if missing:
        raise FormatError(f"manifest meta missing keys: {missing}")
    meta = ManifestMeta(
        **{k: int(meta_kv[k]) for k in META_INT_KEYS},
        crop_names=tuple(meta_kv["crop_names"].split(",")),
        layers=tuple(meta_kv["layers"].split(",")),
    )

    ids = [e.id for e in examples] + [c.id for c in centers]
    if len(set(ids)) != len(ids):
        raise FormatError("manifest ids are not unique")
    for e in examples:
        if set(e.features) != set(meta.crop_names):
            raise FormatError(f"example {e.id}: crop keys {sorted(e.features)} "
                              f"!= {sorted(meta.crop_names)}")
        if set(e.conv_maps) != set(meta.layers):
            raise FormatError(f"example {e.id}: layer keys {sorted(e.conv_maps)} "
                              f"!= {sorted(meta.layers)}")
    for c in centers:
        if set(c.features) != set(meta.crop_names):
            raise FormatError(f"center {c.id}: crop keys != manifest crops")

    man = Manifest(meta=meta, examples=tuple(examples), centers=tuple(centers),
                   root=root)
    _check_files_exist(man)
    return man


def _example_from_kv(kv, lineno):
    feats = {k[5:]: v for k, v in kv.items() if k.startswith("feat.")}
    convs = {k[5:]: v for k, v in kv.items() if k.startswith("conv.")}
    known = {"id", "split", "depth", "guide"}
    extra = [k for k in kv if k not in known
             and not k.startswith(("feat.", "conv."))]
    if extra:
        raise FormatError(f"manifest line {lineno}: unknown keys {extra}")
    for req in ("id", "split", "depth", "guide"):
        if req not in kv:
            raise FormatError(f"manifest line {lineno}: example missing {req!r}")
    return ExampleRecord(id=kv["id"], split=kv["split"], depth=kv["depth"],
                         guide=kv["guide"], features=feats, conv_maps=convs)


def _center_from_kv(kv, lineno):
    feats = {k[5:]: v for k, v in kv.items() if k.startswith("feat.")}
    if "id" not in kv:
        raise FormatError(f"manifest line {lineno}: center missing id")
    extra = [k for k in kv if k != "id" and not k.startswith("feat.")]
    if extra:
        raise FormatError(f"manifest line {lineno}: unknown keys {extra}")
    return CenterRecord(id=kv["id"], features=feats)


def _check_files_exist(man: Manifest):
    missing = []
    for e in man.examples:
        for rel in [e.depth, e.guide, *e.features.values(), *e.conv_maps.values()]:
            if not os.path.isfile(os.path.join(man.root, rel)):
                missing.append(rel)
    for c in man.centers:
        for rel in c.features.values():
            if not os.path.isfile(os.path.join(man.root, rel)):
                missing.append(rel)
    if missing:
        raise InputError(f"manifest references missing files: {missing[:8]}"
                         + (" ..." if len(missing) > 8 else ""))


def write_manifest(path, meta: ManifestMeta, examples, centers) -> None:
    lines = ["# cdlkit dataset manifest v1"]
    meta_parts = [f"{k}={getattr(meta, k)}" for k in META_INT_KEYS]
    meta_parts.append("crop_names=" + ",".join(meta.crop_names))
    meta_parts.append("layers=" + ",".join(meta.layers))
    lines.append("meta " + " ".join(meta_parts))
    for c in centers:
        parts = [f"id={c.id}"]
        parts += [f"feat.{crop}={c.features[crop]}" for crop in meta.crop_names]
        lines.append("center " + " ".join(parts))
    for e in examples:
        parts = [f"id={e.id}", f"split={e.split}", f"depth={e.depth}",
                 f"guide={e.guide}"]
        parts += [f"feat.{crop}={e.features[crop]}" for crop in meta.crop_names]
        parts += [f"conv.{layer}={e.conv_maps[layer]}" for layer in meta.layers]
        lines.append("example " + " ".join(parts))
    text = "\n".join(lines) + "\n"
    if any(ch.isspace() for rec in (*examples, *centers)
           for p in rec.features.values() for ch in p):
        raise InputError("manifest paths may not contain whitespace")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(text)


@dataclass
class LoadedDataset:
    """Everything a pipeline run needs, eagerly loaded and validated."""

    meta: ManifestMeta
    ids: list
    split: dict                       # id -> "train" | "test"
    features: dict                    # crop -> {id -> (dim,) float64}
    depths: dict                      # id -> (H, W) float64
    guides: dict                      # id -> (H, W, 3) float64
    convs: dict                       # id -> {layer -> (h, w, ch) float64}
    center_features: dict             # crop -> (n_centers, dim) float64
    root: str = ""

    def train_ids(self):
        return [i for i in self.ids if self.split[i] == "train"]

    def test_ids(self):
        return [i for i in self.ids if self.split[i] == "test"]

    def feature_matrix(self, crop: str, ids) -> np.ndarray:
        return np.stack([self.features[crop][i] for i in ids])

    def depth_stack(self, ids) -> np.ndarray:
        return np.stack([self.depths[i] for i in ids])

    def hyper_field(self, ex_id: str, rows: int, cols: int) -> HypercolumnField:
        layers = [self.convs[ex_id][l] for l in self.meta.layers]
        return HypercolumnField(tuple(layers), rows, cols)


def load_dataset(manifest_path) -> LoadedDataset:
    man = load_manifest(manifest_path)
    meta = man.meta

    def _load(rel):
        return np.asarray(read_tensor(os.path.join(man.root, rel)), dtype=np.float64)

    features = {crop: {} for crop in meta.crop_names}
    depths = {}
    guides = {}
    convs = {}
    split = {}
    ids = []
    for e in man.examples:
        ids.append(e.id)
        if e.split not in ("train", "test"):
            raise FormatError(f"example {e.id}: unknown split {e.split!r}")
        split[e.id] = e.split
        d = _load(e.depth)
        if d.shape != (meta.full_rows, meta.full_cols):
            raise InputError(f"{e.id}: depth shape {d.shape} != "
                             f"({meta.full_rows}, {meta.full_cols})")
        depths[e.id] = d
        g = _load(e.guide)
        if g.shape != (meta.full_rows, meta.full_cols, 3):
            raise InputError(f"{e.id}: guide shape {g.shape} invalid")
        guides[e.id] = g
        for crop in meta.crop_names:
            f = _load(e.features[crop])
            if f.shape != (meta.feat_dim,):
                raise InputError(f"{e.id}: feature {crop} shape {f.shape} != "
                                 f"({meta.feat_dim},)")
            features[crop][e.id] = f
        convs[e.id] = {layer: _load(e.conv_maps[layer]) for layer in meta.layers}
        for layer, arr in convs[e.id].items():
            if arr.ndim != 3:
                raise InputError(f"{e.id}: conv map {layer} must be (h, w, ch)")

    center_features = {}
    for crop in meta.crop_names:
        rows = []
        for c in man.centers:
            f = _load(c.features[crop])
            if f.shape != (meta.feat_dim,):
                raise InputError(f"center {c.id}: feature {crop} bad shape {f.shape}")
            rows.append(f)
        if rows:
            center_features[crop] = np.stack(rows)
    return LoadedDataset(
        meta=meta, ids=ids, split=split, features=features, depths=depths,
        guides=guides, convs=convs, center_features=center_features,
        root=man.root,
    )
