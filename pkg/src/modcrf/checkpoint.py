"""Deterministic model archives: parameter payloads, vocabulary and manifest in one zip."""
from __future__ import annotations

import zipfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, manifest_lines, parse_pairs
from .data import Vocabulary
from .errors import CheckpointError, ConfigError
from .labels import build_label_space
from .models import Model

_EPOCH = (1980, 1, 1, 0, 0, 0)
_FORMAT = "modcrf-checkpoint-1"


def _write(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(path, model: Model, config: RunConfig, extra: dict | None = None) -> None:
    """Write parameters as little-endian float64 payloads plus an index, vocab and manifest."""
    named = model.named_parameters()
    config = replace(config, types=",".join(model.space.types), variant=model.variant.value)
    facts = {"format": _FORMAT}
    facts.update(extra or {})
    index = []
    with zipfile.ZipFile(path, "w") as zf:
        _write(zf, "manifest.txt", ("\n".join(manifest_lines(config, facts)) + "\n").encode())
        _write(zf, "vocab.txt", ("\n".join(model.vocab.to_lines()) + "\n").encode())
        for name in sorted(named):
            data = np.ascontiguousarray(named[name].data, dtype="<f8")
            index.append(f"{name}\t{','.join(map(str, data.shape))}")
            _write(zf, f"params/{name}", data.tobytes())
        _write(zf, "index.txt", ("\n".join(index) + "\n").encode())


def read_manifest(path) -> dict:
    try:
        with zipfile.ZipFile(path) as zf:
            return parse_pairs(zf.read("manifest.txt").decode().splitlines())
    except (OSError, KeyError, zipfile.BadZipFile, UnicodeDecodeError, ConfigError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None


def load_checkpoint(path) -> tuple:
    """Rebuild ``(model, config, manifest)``; any inconsistency raises CheckpointError."""
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = parse_pairs(zf.read("manifest.txt").decode().splitlines())
            if manifest.get("format") != _FORMAT:
                raise CheckpointError(f"unrecognized checkpoint format {manifest.get('format')!r}")
            config_keys = {k: v for k, v in manifest.items() if k in RunConfig.__dataclass_fields__}
            config = RunConfig().with_overrides(config_keys)
            if config.config_hash() != manifest.get("config_hash"):
                raise CheckpointError("manifest config hash does not match its contents")
            vocab = Vocabulary.from_lines(zf.read("vocab.txt").decode().splitlines())
            space = build_label_space(config.scheme, config.type_list())
            model = Model(config.model_config(), space, vocab, config.seed)
            state = {}
            for line in zf.read("index.txt").decode().splitlines():
                if not line:
                    continue
                name, shape_text = line.split("\t")
                shape = tuple(int(s) for s in shape_text.split(",") if s)
                payload = zf.read(f"params/{name}")
                state[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
            model.load_state(state)
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError, zipfile.BadZipFile, UnicodeDecodeError, ConfigError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    return model, config, manifest
