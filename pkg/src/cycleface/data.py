"""Dataset synthesis, on-disk layout, and CelebA-format ingestion.

Directory layout:
    images/<id>.png     8-bit RGB, pixel p encoded as round((p+1)*127.5)
    captions.jsonl      {"id", "text", "template_seed"} per line
    attributes.tsv      header of attribute names; rows of id + 0/1
    manifest.json       schema version, counts, seed, splits
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import render
from .attributes import DEFAULT_SCHEMA, AttributeVector, sanitize, valid_space
from .grammar import N_PARAPHRASES, Caption, caption_from_attributes

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


@dataclass
class FaceSample:
    id: str
    image: np.ndarray  # (64, 64, 3) float32 in [-1, 1]
    attributes: AttributeVector
    caption: Caption


@dataclass
class DatasetManifest:
    root: Path
    count: int
    schema_version: int
    seed: int
    splits: dict  # split name -> list of sample ids

    @property
    def split_names(self):
        return list(self.splits)

    def ids(self, split=None):
        if split is None:
            out = []
            for name in self.splits:
                out.extend(self.splits[name])
            return out
        return list(self.splits[split])

    def save(self):
        payload = {
            "version": MANIFEST_VERSION,
            "schema_version": self.schema_version,
            "attribute_names": list(DEFAULT_SCHEMA.names),
            "count": self.count,
            "seed": self.seed,
            "splits": self.splits,
        }
        path = Path(self.root) / "manifest.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, root):
        root = Path(root)
        payload = json.loads((root / "manifest.json").read_text())
        return cls(
            root=root,
            count=payload["count"],
            schema_version=payload["schema_version"],
            seed=payload["seed"],
            splits=payload["splits"],
        )


def write_png(path, image):
    Image.fromarray(render.encode_u8(image), mode="RGB").save(path, format="PNG")


def read_png(path):
    with Image.open(path) as im:
        return render.decode_u8(np.asarray(im.convert("RGB")))


def load_sample(manifest: DatasetManifest, sample_id: str) -> FaceSample:
    root = Path(manifest.root)
    image = read_png(root / "images" / f"{sample_id}.png")
    attrs = _attribute_table(root)[sample_id]
    cap = _caption_table(root)[sample_id]
    return FaceSample(id=sample_id, image=image, attributes=attrs, caption=cap)


_TABLE_CACHE = {}


def _attribute_table(root):
    root = Path(root)
    key = ("attrs", str(root))
    if key not in _TABLE_CACHE:
        lines = (root / "attributes.tsv").read_text().splitlines()
        names = lines[0].split("\t")[1:]
        assert tuple(names) == DEFAULT_SCHEMA.names
        table = {}
        for line in lines[1:]:
            parts = line.split("\t")
            table[parts[0]] = AttributeVector(tuple(int(b) == 1 for b in parts[1:]))
        _TABLE_CACHE[key] = table
    return _TABLE_CACHE[key]


def _caption_table(root):
    root = Path(root)
    key = ("caps", str(root))
    if key not in _TABLE_CACHE:
        table = {}
        for line in (root / "captions.jsonl").read_text().splitlines():
            obj = json.loads(line)
            table[obj["id"]] = Caption(
                text=obj["text"], template_seed=obj["template_seed"]
            )
        _TABLE_CACHE[key] = table
    return _TABLE_CACHE[key]


def captions(manifest: DatasetManifest, split=None):
    table = _caption_table(manifest.root)
    return [table[i] for i in manifest.ids(split)]


def attribute_vectors(manifest: DatasetManifest, split=None):
    table = _attribute_table(manifest.root)
    return [table[i] for i in manifest.ids(split)]


def _split_sizes(count, fractions):
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    sizes = [int(np.floor(f * count)) for f in fractions]
    remainders = [f * count - s for f, s in zip(fractions, sizes)]
    while sum(sizes) < count:
        i = int(np.argmax(remainders))
        sizes[i] += 1
        remainders[i] = -1
    return sizes


def _write_tables(root, samples):
    root = Path(root)
    _TABLE_CACHE.pop(("attrs", str(root)), None)
    _TABLE_CACHE.pop(("caps", str(root)), None)
    with open(root / "captions.jsonl", "w") as f:
        for s in samples:
            f.write(json.dumps(
                {"id": s.id, "text": s.caption.text,
                 "template_seed": s.caption.template_seed},
                sort_keys=True) + "\n")
    with open(root / "attributes.tsv", "w") as f:
        f.write("id\t" + "\t".join(DEFAULT_SCHEMA.names) + "\n")
        for s in samples:
            bits = "\t".join(str(int(b)) for b in s.attributes.bits)
            f.write(f"{s.id}\t{bits}\n")


def _assign_splits(ids, fractions):
    names = ("train", "val", "test")[: len(fractions)]
    sizes = _split_sizes(len(ids), fractions)
    splits, start = {}, 0
    for name, size in zip(names, sizes):
        splits[name] = list(ids[start : start + size])
        start += size
    return splits


def synthesize_dataset(out_dir, count, seed, splits=(0.8, 0.1, 0.1)) -> DatasetManifest:
    """Write a procedural dataset; byte-identical for identical arguments."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(np.uint64(seed))
    space = valid_space()
    samples = []
    for i in range(count):
        attrs = space[int(rng.integers(len(space)))]
        style_seed = int(rng.integers(2 ** 31))
        template_seed = int(rng.integers(N_PARAPHRASES))
        sample_id = f"s{i:06d}_{style_seed}"
        image = render.render_face(attrs, style_seed)
        caption = caption_from_attributes(attrs, template_seed)
        samples.append(FaceSample(sample_id, image, attrs, caption))
        write_png(out_dir / "images" / f"{sample_id}.png", image)

    _write_tables(out_dir, samples)
    manifest = DatasetManifest(
        root=out_dir,
        count=count,
        schema_version=DEFAULT_SCHEMA.version,
        seed=seed,
        splits=_assign_splits([s.id for s in samples], splits),
    )
    manifest.save()
    return manifest


# CelebA attribute names that map onto grammar clauses.
CELEBA_MAP = {
    "Oval_Face": "face_oval",
    "Black_Hair": "hair_black",
    "Blond_Hair": "hair_blond",
    "Wavy_Hair": "hair_wavy",
    "Bald": "bald",
    "Smiling": "smiling",
    "Big_Nose": "big_nose",
    "Arched_Eyebrows": "arched_eyebrows",
    "Eyeglasses": "eyeglasses",
    "5_o_Clock_Shadow": "beard_shadow",
    "Wearing_Lipstick": "lipstick",
}


class CelebAFormatError(ValueError):
    pass


def ingest_celeba_format(attribute_file, image_dir, out_dir,
                         splits=(0.8, 0.1, 0.1), seed=0) -> DatasetManifest:
    """Ingest a `list_attr_celeba.txt`-style file plus an image directory.

    Accepts 40- and 41-column attribute variants. Images are resized to
    64x64 and rescaled to [-1, 1]; captions come from the mapped
    attributes. Missing images are skipped with a warning.
    """
    attribute_file = Path(attribute_file)
    image_dir = Path(image_dir)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    lines = attribute_file.read_text().splitlines()
    if len(lines) < 2:
        raise CelebAFormatError("attribute file too short for header")
    try:
        declared = int(lines[0].strip())
    except ValueError as e:
        raise CelebAFormatError(f"first line must be a sample count: {lines[0]!r}") from e
    names = lines[1].split()
    if len(names) not in (40, 41):
        raise CelebAFormatError(
            f"expected 40 or 41 attribute columns, got {len(names)}")
    unmapped = [n for n in names if n not in CELEBA_MAP]
    if unmapped:
        log.info("ignoring %d unmapped CelebA attributes: %s",
                 len(unmapped), ", ".join(unmapped))

    rng = np.random.default_rng(np.uint64(seed))
    samples, skipped = [], 0
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != len(names) + 1:
            raise CelebAFormatError(
                f"line {lineno}: expected {len(names) + 1} columns, got {len(parts)}")
        filename = parts[0]
        flags = {}
        for name, value in zip(names, parts[1:]):
            if value not in ("1", "-1"):
                raise CelebAFormatError(
                    f"line {lineno}: attribute value must be 1 or -1, got {value!r}")
            if name in CELEBA_MAP:
                flags[CELEBA_MAP[name]] = value == "1"
        bits = [flags.get(n, False) for n in DEFAULT_SCHEMA.names]
        attrs = sanitize(bits)

        src = image_dir / filename
        if not src.exists():
            log.warning("missing image %s, skipping", src)
            skipped += 1
            continue
        with Image.open(src) as im:
            resized = im.convert("RGB").resize((render.IMAGE_SIZE, render.IMAGE_SIZE),
                                               Image.BILINEAR)
        image = render.decode_u8(np.asarray(resized))
        sample_id = Path(filename).stem
        template_seed = int(rng.integers(N_PARAPHRASES))
        caption = caption_from_attributes(attrs, template_seed)
        samples.append(FaceSample(sample_id, image, attrs, caption))
        write_png(out_dir / "images" / f"{sample_id}.png", image)

    if skipped:
        log.warning("skipped %d rows with missing images", skipped)
    if declared != len(samples) + skipped:
        log.warning("header declared %d samples, parsed %d", declared,
                    len(samples) + skipped)

    _write_tables(out_dir, samples)
    manifest = DatasetManifest(
        root=out_dir,
        count=len(samples),
        schema_version=DEFAULT_SCHEMA.version,
        seed=seed,
        splits=_assign_splits([s.id for s in samples], splits),
    )
    manifest.save()
    return manifest
