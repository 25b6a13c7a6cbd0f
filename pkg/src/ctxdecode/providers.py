"""Adapters for external ASR/TTS systems, with content-addressed caching.

Three transports are supported (see docs/providers.md for the bit-exact
contracts):

- precomputed_file: local lookup tables (TSV for single hypotheses and audio
  paths, JSONL for n-best lists); the only transport allowed in offline mode
  besides a warm cache.
- subprocess: a command invoked per utterance whose stdout carries the
  result; bounded by a configurable timeout (default 120 s).
- http_endpoint: a POST per utterance returning JSON.

Every fetched value is cached on disk under a digest of (provider name,
utterance id, params, payload kind). Cache entries are immutable: fetching a
different value for an existing key is a hard error, never a silent
overwrite. Writes are atomic (temp file then rename), so concurrent fetches
are safe.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import subprocess
import tempfile
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from ctxdecode.audio import read_wav
from ctxdecode.rerank import Candidate, NBestList

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 120.0


class ProviderError(RuntimeError):
    """Provider failure: unavailable location, bad payload, timeout, conflict."""


class ProviderKind(enum.Enum):
    PRECOMPUTED_FILE = "precomputed_file"
    SUBPROCESS = "subprocess"
    HTTP_ENDPOINT = "http_endpoint"


@dataclass(frozen=True)
class ProviderSpec:
    name: str
    kind: ProviderKind
    location: str
    params: dict = field(default_factory=dict)

    @property
    def timeout_s(self) -> float:
        return float(self.params.get("timeout_s", DEFAULT_TIMEOUT_S))

    @property
    def extra_args(self) -> list[str]:
        return [str(a) for a in self.params.get("args", [])]


def load_provider_config(path: str | Path) -> list[ProviderSpec]:
    """Read a TOML or JSON provider config: {"providers": [{name, kind, location, params?}]}."""
    path = Path(path)
    if path.suffix == ".toml":
        import tomli

        data = tomli.loads(path.read_text(encoding="utf-8"))
    else:
        data = json.loads(path.read_text(encoding="utf-8"))
    specs = []
    seen: set[str] = set()
    for entry in data.get("providers", []):
        try:
            kind = ProviderKind(entry["kind"])
        except (KeyError, ValueError):
            raise ProviderError(f"provider entry {entry.get('name')!r} has invalid kind") from None
        name = entry.get("name")
        if not name or name in seen:
            raise ProviderError(f"provider names must be unique and non-empty, got {name!r}")
        seen.add(name)
        spec = ProviderSpec(name=name, kind=kind, location=entry["location"], params=entry.get("params", {}))
        if kind is ProviderKind.PRECOMPUTED_FILE and not Path(spec.location).exists():
            raise ProviderError(f"precomputed file for provider {name!r} not found: {spec.location}")
        specs.append(spec)
    return specs


class ProviderCache:
    """Content-addressed on-disk cache; eviction is manual by design."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def key(self, spec: ProviderSpec, utterance_id: str, payload_kind: str) -> str:
        digest = hashlib.sha256()
        for part in (spec.name, utterance_id, json.dumps(spec.params, sort_keys=True), payload_kind):
            digest.update(part.encode("utf-8"))
            digest.update(b"\x00")
        return digest.hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, key: str, payload_kind: str, value) -> None:
        existing = self.get(key)
        if existing is not None:
            if existing["value"] != value:
                raise ProviderError(
                    f"cache conflict for key {key}: stored value differs from newly fetched one"
                )
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {"kind": payload_kind, "value": value, "created_at": time.time()}
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)


class Provider:
    """One configured provider bound to a cache."""

    def __init__(self, spec: ProviderSpec, cache: ProviderCache | None = None, offline: bool = False):
        self.spec = spec
        self.cache = cache
        self.offline = offline

    def _cached(self, utterance_id: str, payload_kind: str, fetch):
        key = None
        if self.cache is not None:
            key = self.cache.key(self.spec, utterance_id, payload_kind)
            hit = self.cache.get(key)
            if hit is not None:
                return hit["value"]
        if self.offline and self.spec.kind is not ProviderKind.PRECOMPUTED_FILE:
            raise ProviderError(
                f"offline mode: no cached {payload_kind} from provider {self.spec.name!r} "
                f"for utterance {utterance_id!r}"
            )
        value = fetch()
        if self.cache is not None:
            self.cache.put(key, payload_kind, value)
        return value

    # -- first-pass hypotheses ------------------------------------------------

    def fetch_first_pass(self, utterance_id: str, audio_path: str | None = None) -> str:
        """One raw hypothesis line for the utterance."""
        return self._cached(utterance_id, "first_pass", lambda: self._fetch_text(utterance_id, audio_path))

    def _fetch_text(self, utterance_id: str, audio_path: str | None) -> str:
        if self.spec.kind is ProviderKind.PRECOMPUTED_FILE:
            table = self._tsv_table()
            if utterance_id not in table:
                raise ProviderError(
                    f"utterance {utterance_id!r} not found in precomputed file {self.spec.location}"
                )
            return table[utterance_id]
        if self.spec.kind is ProviderKind.SUBPROCESS:
            if audio_path is None:
                raise ProviderError(f"subprocess provider {self.spec.name!r} requires an audio path")
            out = self._run([self.spec.location, *self.spec.extra_args, audio_path])
            return out.splitlines()[0] if out else ""
        body = Path(audio_path).read_bytes() if audio_path else b""
        payload = self._http_post(body, {"X-Utterance-Id": utterance_id}, raw=True)
        if "text" not in payload:
            raise ProviderError(f"provider {self.spec.name!r} returned no 'text' field")
        return payload["text"]

    # -- n-best lists ----------------------------------------------------------

    def fetch_nbest(self, utterance_id: str, beam_size: int, audio_path: str | None = None) -> NBestList:
        """An n-best list, truncated to beam_size with a warning when oversized."""
        entries = self._cached(
            utterance_id, f"nbest@{beam_size}", lambda: self._fetch_nbest_entries(utterance_id, beam_size, audio_path)
        )
        if len(entries) > beam_size:
            log.warning(
                "provider %s returned %d candidates for %s; truncating to beam size %d",
                self.spec.name,
                len(entries),
                utterance_id,
                beam_size,
            )
            entries = entries[:beam_size]
        try:
            candidates = tuple(
                Candidate(rank=e["rank"], text=e["text"], model_score=e.get("score")) for e in entries
            )
            return NBestList(candidates=candidates, beam_size=beam_size)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"provider {self.spec.name!r} returned a malformed n-best list: {exc}") from None

    def _fetch_nbest_entries(self, utterance_id: str, beam_size: int, audio_path: str | None) -> list:
        if self.spec.kind is ProviderKind.PRECOMPUTED_FILE:
            for line_no, line in enumerate(Path(self.spec.location).read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    raise ProviderError(f"{self.spec.location}:{line_no}: malformed JSON") from None
                if record.get("id") == utterance_id:
                    return record["nbest"]
            raise ProviderError(
                f"utterance {utterance_id!r} not found in precomputed file {self.spec.location}"
            )
        if self.spec.kind is ProviderKind.SUBPROCESS:
            out = self._run([self.spec.location, *self.spec.extra_args, audio_path or utterance_id, str(beam_size)])
            try:
                return json.loads(out)
            except json.JSONDecodeError:
                raise ProviderError(f"provider {self.spec.name!r} emitted malformed n-best JSON") from None
        payload = self._http_post(json.dumps({"id": utterance_id, "beam_size": beam_size}).encode("utf-8"))
        if "nbest" not in payload:
            raise ProviderError(f"provider {self.spec.name!r} returned no 'nbest' field")
        return payload["nbest"]

    # -- synthesized prefix audio ----------------------------------------------

    def fetch_prefix_audio(self, context_text: str, speaker_ref_audio: str | None = None) -> str:
        """Path to provider-synthesized context audio; validated on return.

        The cache key includes the context-text digest, not the text itself.
        """
        text_digest = hashlib.sha256(context_text.encode("utf-8")).hexdigest()
        path = self._cached(
            text_digest, "prefix_audio", lambda: self._fetch_audio_path(context_text, speaker_ref_audio)
        )
        try:
            read_wav(path)
        except Exception as exc:
            raise ProviderError(f"provider {self.spec.name!r} returned invalid audio {path!r}: {exc}") from None
        return path

    def _fetch_audio_path(self, context_text: str, speaker_ref_audio: str | None) -> str:
        if self.spec.kind is ProviderKind.PRECOMPUTED_FILE:
            table = self._tsv_table()
            if context_text not in table:
                raise ProviderError(
                    f"context text not found in precomputed audio table {self.spec.location}"
                )
            return table[context_text]
        if self.spec.kind is ProviderKind.SUBPROCESS:
            out = self._run([self.spec.location, *self.spec.extra_args, context_text, speaker_ref_audio or ""])
            if not out:
                raise ProviderError(f"provider {self.spec.name!r} returned no audio path")
            return out.splitlines()[0]
        payload = self._http_post(
            json.dumps({"context_text": context_text, "speaker_audio": speaker_ref_audio}).encode("utf-8")
        )
        if "audio_path" not in payload:
            raise ProviderError(f"provider {self.spec.name!r} returned no 'audio_path' field")
        return payload["audio_path"]

    # -- transports -------------------------------------------------------------

    def _tsv_table(self) -> dict[str, str]:
        table: dict[str, str] = {}
        for line in Path(self.spec.location).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("\t")
            table[key] = value
        return table

    def _run(self, argv: list[str]) -> str:
        try:
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=self.spec.timeout_s
            )
        except subprocess.TimeoutExpired:
            raise ProviderError(
                f"provider {self.spec.name!r} timed out after {self.spec.timeout_s:.0f}s"
            ) from None
        except OSError as exc:
            raise ProviderError(f"provider {self.spec.name!r} failed to start: {exc}") from None
        if proc.returncode != 0:
            raise ProviderError(
                f"provider {self.spec.name!r} exited {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        return proc.stdout.strip()

    def _http_post(self, body: bytes, headers: dict | None = None, raw: bool = False) -> dict:
        request = urllib.request.Request(
            self.spec.location,
            data=body,
            headers={
                "Content-Type": "application/octet-stream" if raw else "application/json",
                **(headers or {}),
            },
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.spec.timeout_s) as response:
                payload = response.read()
        except urllib.error.HTTPError as exc:
            raise ProviderError(f"provider {self.spec.name!r} returned HTTP {exc.code}") from None
        except (urllib.error.URLError, TimeoutError) as exc:
            raise ProviderError(f"provider {self.spec.name!r} unreachable: {exc}") from None
        try:
            return json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ProviderError(f"provider {self.spec.name!r} returned a malformed payload") from None
