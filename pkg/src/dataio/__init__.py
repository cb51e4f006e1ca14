# LDSeg Data I/O Package
from src.dataio.formats import (
    atomic_write,
    decode_greymap,
    decode_tensor,
    encode_greymap,
    encode_tensor,
    read_image,
    read_mask,
    read_tensor,
    write_image,
    write_mask,
    write_tensor,
)
from src.dataio.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from src.dataio.dataset import DatasetManifest, ManifestEntry, SegmentationData, load_split, train_val_split
from src.dataio.outputs import OutputDir
from src.dataio.synthetic import SyntheticSample, corrupt, generate_dataset, generate_sample

__all__ = [
    'atomic_write', 'decode_greymap', 'decode_tensor', 'encode_greymap', 'encode_tensor',
    'read_image', 'read_mask', 'read_tensor', 'write_image', 'write_mask', 'write_tensor',
    'Checkpoint', 'decode_checkpoint', 'encode_checkpoint', 'load_checkpoint', 'save_checkpoint',
    'DatasetManifest', 'ManifestEntry', 'SegmentationData', 'load_split', 'train_val_split',
    'OutputDir',
    'SyntheticSample', 'corrupt', 'generate_dataset', 'generate_sample',
]
