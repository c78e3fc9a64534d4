import logging
import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Iterator, Literal, Optional, Tuple, Union

from pydantic import ValidationError

from flowforge.core.config import settings
from flowforge.core.exceptions import HashMismatchError, InvalidConfigError, MissingFileError
from flowforge.core.raster import FlowField
from flowforge.models.dataset_models import DatasetManifest, ManifestHeader, ManifestRecord
from flowforge.models.hyperparams import HyperParams
from flowforge.services.augment_service import augment_sample
from flowforge.services.hyper_service import hyperparams_hash
from flowforge.services.scene_service import AppearancePool, Provenance, RenderedSample, render_index, sample_seed
from flowforge.utils.flow_io import encode_png, load_flo, read_png, write_flo

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"

# (index, image1 png, image2 png, flow .flo, augmented triple or None)
EncodedSample = Tuple[int, bytes, bytes, bytes, Optional[Tuple[bytes, bytes, bytes]]]


def sample_filenames(index: int, suffix: str = "") -> Tuple[str, str, str]:
    stem = f"{index:06d}"
    return f"{stem}_img1{suffix}.png", f"{stem}_img2{suffix}.png", f"{stem}_flow{suffix}.flo"


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# --- Manifest ---

def write_manifest(directory: Union[str, Path], manifest: DatasetManifest) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [manifest.header.model_dump_json()] + [r.model_dump_json(exclude_none=True) for r in manifest.samples]
    path = d / MANIFEST_NAME
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
    return path


def read_manifest(directory: Union[str, Path]) -> DatasetManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise MissingFileError(f"No {MANIFEST_NAME} in {directory}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise MissingFileError(f"{path} is empty")
    try:
        header = ManifestHeader.model_validate_json(lines[0])
        samples = [ManifestRecord.model_validate_json(ln) for ln in lines[1:]]
    except ValidationError as e:
        raise InvalidConfigError(f"Malformed manifest {path}: {e}") from e
    return DatasetManifest(header=header, samples=samples)


def check_manifest(directory: Union[str, Path], manifest: DatasetManifest, hyperparams: Optional[HyperParams] = None) -> None:
    d = Path(directory)
    if manifest.header.count != len(manifest.samples):
        raise MissingFileError(f"Manifest declares {manifest.header.count} samples but lists {len(manifest.samples)}")
    if hyperparams is not None and hyperparams_hash(hyperparams) != manifest.header.hyperparams_hash:
        raise HashMismatchError(
            f"Dataset {d} was generated from hyperparameters {manifest.header.hyperparams_hash}, "
            f"config hashes to {hyperparams_hash(hyperparams)}"
        )
    for record in manifest.samples:
        for name in (record.image1, record.image2, record.flow, record.image1_aug, record.image2_aug, record.flow_aug):
            if name is not None and not (d / name).is_file():
                raise MissingFileError(f"Dataset file {d / name} listed in the manifest is missing")


def load_dataset(
    directory: Union[str, Path],
    hyperparams: Optional[HyperParams] = None,
    augmented: bool = False,
) -> Iterator[RenderedSample]:
    """Stream samples in manifest order; `augmented` reads the materialized *_aug copies."""
    d = Path(directory)
    manifest = read_manifest(d)
    check_manifest(d, manifest, hyperparams)
    header = manifest.header
    for record in manifest.samples:
        names = (record.image1, record.image2, record.flow)
        if augmented:
            if record.flow_aug is None:
                raise MissingFileError(f"Sample {record.index} in {d} has no augmented copy")
            names = (record.image1_aug, record.image2_aug, record.flow_aug)
        yield RenderedSample(
            image1=read_png(d / names[0]),
            image2=read_png(d / names[1]),
            flow=load_flo(d / names[2]),
            provenance=Provenance(hyperparams_hash=header.hyperparams_hash, root_seed=header.root_seed, index=record.index),
        )


def load_flows(directory: Union[str, Path], augmented: bool = False) -> Iterator[FlowField]:
    for sample in load_dataset(directory, augmented=augmented):
        yield sample.flow


def load_flo_directory(directory: Union[str, Path]) -> Iterator[FlowField]:
    d = Path(directory)
    if not d.is_dir():
        raise MissingFileError(f"Flow directory not found: {d}")
    for path in sorted(d.rglob("*.flo")):
        yield load_flo(path)


# --- Generation ---

def _encode(sample: RenderedSample) -> Tuple[bytes, bytes, bytes]:
    return encode_png(sample.image1), encode_png(sample.image2), write_flo(sample.flow)


def render_encoded(
    h: HyperParams,
    pool: AppearancePool,
    root_seed: int,
    augment: Literal["off", "materialize"],
    index: int,
) -> EncodedSample:
    """Worker task: render one sample (and its augmented copy) to file bytes."""
    sample = render_index(h, pool, root_seed, index)
    aug = None
    if augment == "materialize":
        aug = _encode(augment_sample(sample, h.augment, sample_seed(root_seed, index).child("augment")))
    return (index, *_encode(sample), aug)


def generate_dataset(
    h: HyperParams,
    pool: AppearancePool,
    out_dir: Union[str, Path],
    count: int,
    root_seed: int,
    workers: int = 1,
    augment: Literal["off", "materialize"] = "off",
) -> DatasetManifest:
    """Write `count` samples and then the manifest; an interrupted run leaves no manifest."""
    if count < 0:
        raise InvalidConfigError(f"count must be >= 0, got {count}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stale = out / MANIFEST_NAME
    if stale.exists():
        stale.unlink()

    task = partial(render_encoded, h, pool, root_seed, augment)
    records = []
    step = max(1, count // 10)

    def consume(results):
        for index, img1, img2, flo, aug in results:
            names = sample_filenames(index)
            for name, data in zip(names, (img1, img2, flo)):
                _atomic_write(out / name, data)
            record = ManifestRecord(index=index, image1=names[0], image2=names[1], flow=names[2])
            if aug is not None:
                aug_names = sample_filenames(index, "_aug")
                for name, data in zip(aug_names, aug):
                    _atomic_write(out / name, data)
                record = record.model_copy(update=dict(zip(("image1_aug", "image2_aug", "flow_aug"), aug_names)))
            records.append(record)
            logger.debug(f"Wrote sample {index}")
            if (index + 1) % step == 0 or index + 1 == count:
                logger.info(f"Generated {index + 1}/{count} samples")

    logger.info(f"Generating {count} samples into {out} (seed {root_seed}, {workers} workers)")
    if workers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            consume(executor.map(task, range(count)))
    else:
        consume(map(task, range(count)))

    manifest = DatasetManifest(
        header=ManifestHeader(
            hyperparams_hash=hyperparams_hash(h),
            root_seed=root_seed,
            count=count,
            resolution=tuple(h.resolution),
            generator_version=settings.GENERATOR_VERSION,
        ),
        samples=records,
    )
    write_manifest(out, manifest)
    logger.info(f"Dataset complete: {count} samples in {out}")
    return manifest
