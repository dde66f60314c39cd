"""Dialogues, the line-delimited feature-file format, synthetic data, masking and splits.

File layout (UTF-8, one JSON object per line)::

    {"schema_version": 1, "num_labels": K, "label_names": [...],
     "dims": {"text": d_t, "audio": d_a, "visual": d_v}}
    {"dialogue_id": "...", "utterances": [{"utt_id": "...", "speaker": "...",
     "label": 0, "text": [...], "audio": [...], "visual": [...]}, ...]}
    ...

Feature values are read at float32 precision. Unknown keys are rejected.
"""
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .rng import Rng

SCHEMA_VERSION = 1
MODALITIES = ("text", "audio", "visual")
_HEADER_KEYS = {"schema_version", "num_labels", "label_names", "dims"}
_DIALOGUE_KEYS = {"dialogue_id", "utterances"}
_UTTERANCE_KEYS = {"utt_id", "speaker", "label", *MODALITIES}

# Dialogue / utterance counts of the two public benchmark corpora, per split.
CORPUS_SIZES = {
    "iemocap": {"num_labels": 6, "train+val": (120, 5810), "test": (31, 1623)},
    "meld": {"num_labels": 7, "train+val": (1153, 11098), "test": (280, 2610)},
}


@dataclass
class Utterance:
    utt_id: str
    speaker: str
    label: int
    text: np.ndarray
    audio: np.ndarray
    visual: np.ndarray

    def feature(self, modality):
        return getattr(self, modality)

    def __eq__(self, other):
        if not isinstance(other, Utterance):
            return NotImplemented
        return (self.utt_id, self.speaker, self.label) == (other.utt_id, other.speaker, other.label) and all(
            np.array_equal(self.feature(m), other.feature(m)) for m in MODALITIES)


@dataclass
class Dialogue:
    dialogue_id: str
    utterances: list

    def __len__(self):
        return len(self.utterances)

    def labels(self):
        return np.array([u.label for u in self.utterances], dtype=np.int64)


@dataclass
class DatasetHeader:
    num_labels: int
    label_names: list
    dims: dict
    schema_version: int = SCHEMA_VERSION

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise DatasetError(f"unsupported schema_version {self.schema_version}")
        if self.num_labels != len(self.label_names) or self.num_labels < 1:
            raise DatasetError(f"num_labels={self.num_labels} but {len(self.label_names)} label names")
        if set(self.dims) != set(MODALITIES):
            raise DatasetError(f"dims must have exactly keys {MODALITIES}, got {sorted(self.dims)}")
        for m, d in self.dims.items():
            if not isinstance(d, int) or isinstance(d, bool) or d < 1:
                raise DatasetError(f"dims.{m} must be a positive integer, got {d!r}")
        return self

    def to_dict(self):
        return {"schema_version": self.schema_version, "num_labels": self.num_labels,
                "label_names": list(self.label_names), "dims": dict(self.dims)}


def count_utterances(dialogues):
    return sum(len(d) for d in dialogues)


# -- reading ----------------------------------------------------------------

def _check_keys(obj, expected, where):
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = obj.keys() - expected
    missing = expected - obj.keys()
    if unknown or missing:
        raise DatasetError(f"{where}: unknown keys {sorted(unknown)}, missing keys {sorted(missing)}")


def _parse_header(obj, lineno):
    _check_keys(obj, _HEADER_KEYS, f"line {lineno}")
    if not isinstance(obj["label_names"], list) or not all(isinstance(s, str) for s in obj["label_names"]):
        raise DatasetError(f"line {lineno}: label_names must be a list of strings")
    if not isinstance(obj["dims"], dict):
        raise DatasetError(f"line {lineno}: dims must be an object")
    try:
        return DatasetHeader(obj["num_labels"], obj["label_names"], dict(obj["dims"]),
                             obj["schema_version"]).validate()
    except DatasetError as e:
        raise DatasetError(f"line {lineno}: {e}") from None


def _parse_utterance(obj, header, lineno, pos):
    _check_keys(obj, _UTTERANCE_KEYS, f"line {lineno}, utterance {pos}")
    utt_id = obj["utt_id"]
    if not isinstance(utt_id, str) or not isinstance(obj["speaker"], str):
        raise DatasetError(f"line {lineno}, utterance {pos}: utt_id and speaker must be strings")
    label = obj["label"]
    if not isinstance(label, int) or isinstance(label, bool) or not 0 <= label < header.num_labels:
        raise DatasetError(f"line {lineno}: utterance {utt_id!r} label {label!r} outside [0, {header.num_labels})")
    feats = {}
    for m in MODALITIES:
        raw = obj[m]
        if not isinstance(raw, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
            raise DatasetError(f"line {lineno}: utterance {utt_id!r} {m} features must be a list of numbers")
        with np.errstate(over="ignore"):
            vec = np.asarray(raw, dtype=np.float32)
        if vec.shape != (header.dims[m],):
            raise DatasetError(f"line {lineno}: utterance {utt_id!r} has {vec.size} {m} values, "
                               f"header says {header.dims[m]}")
        if not np.isfinite(vec).all():
            raise DatasetError(f"line {lineno}: utterance {utt_id!r} has non-finite {m} values")
        feats[m] = vec
    return Utterance(utt_id, obj["speaker"], label, **feats)


def parse_lines(lines, source="<string>"):
    header = None
    dialogues = []
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetError(f"{source}: line {lineno}: malformed JSON ({e.msg})") from None
        try:
            if header is None:
                header = _parse_header(obj, lineno)
                continue
            _check_keys(obj, _DIALOGUE_KEYS, f"line {lineno}")
            did = obj["dialogue_id"]
            if not isinstance(did, str):
                raise DatasetError(f"line {lineno}: dialogue_id must be a string")
            if did in seen:
                raise DatasetError(f"line {lineno}: duplicate dialogue_id {did!r}")
            seen.add(did)
            utts = obj["utterances"]
            if not isinstance(utts, list) or not utts:
                raise DatasetError(f"line {lineno}: dialogue {did!r} has no utterances")
            dialogues.append(Dialogue(did, [_parse_utterance(u, header, lineno, i) for i, u in enumerate(utts)]))
        except DatasetError as e:
            raise DatasetError(f"{source}: {e}") from None
    if header is None:
        raise DatasetError(f"{source}: empty file, header line missing")
    return header, dialogues


def load_dataset(path):
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        return parse_lines(fh, str(path))


# -- writing ----------------------------------------------------------------

def _vector(arr):
    # shortest decimal that round-trips at float32
    return [float(str(v)) for v in np.asarray(arr, dtype=np.float32)]


def _utterance_dict(u):
    return {"utt_id": u.utt_id, "speaker": u.speaker, "label": int(u.label),
            **{m: _vector(u.feature(m)) for m in MODALITIES}}


def dumps_dataset(header, dialogues):
    lines = [json.dumps(header.to_dict())]
    for d in dialogues:
        lines.append(json.dumps({"dialogue_id": d.dialogue_id,
                                 "utterances": [_utterance_dict(u) for u in d.utterances]}))
    return "\n".join(lines) + "\n"


def save_dataset(path, header, dialogues):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_dataset(header, dialogues), encoding="utf-8")


# -- synthetic data ------------------------------------------------------------

@dataclass
class SyntheticSpec:
    num_labels: int = 4
    dims: dict = field(default_factory=lambda: {"text": 16, "audio": 12, "visual": 8})
    dialogues: int = 60
    min_utterances: int = 4
    max_utterances: int = 12
    margin: float = 1.0
    noise: dict = field(default_factory=lambda: {"text": 0.25, "audio": 0.25, "visual": 0.25})
    context_correlation: float = 0.5
    num_speakers: int = 2
    signal_modalities: tuple = MODALITIES
    seed: int = 0

    def validate(self):
        if self.num_labels < 1:
            raise DatasetError("num_labels must be >= 1")
        if set(self.dims) != set(MODALITIES) or any(int(d) < 1 for d in self.dims.values()):
            raise DatasetError(f"dims must give a positive width for each of {MODALITIES}")
        if set(self.noise) != set(MODALITIES) or any(s < 0 for s in self.noise.values()):
            raise DatasetError("noise must give a non-negative scale for each modality")
        if self.margin <= 0:
            raise DatasetError("margin must be > 0")
        if self.dialogues < 1 or not 1 <= self.min_utterances <= self.max_utterances:
            raise DatasetError("need >= 1 dialogue and 1 <= min_utterances <= max_utterances")
        if not 0.0 <= self.context_correlation <= 1.0:
            raise DatasetError("context_correlation must lie in [0, 1]")
        if not set(self.signal_modalities) <= set(MODALITIES):
            raise DatasetError(f"signal_modalities must be a subset of {MODALITIES}")
        return self


def class_centroids(num_labels, dim, margin, rng):
    """Unit-norm centroids with pairwise distance >= ``margin``.

    Uses a randomly rotated cross-polytope (distance sqrt(2), up to 2*dim
    classes) or, for wider margins, a rotated regular simplex (up to dim + 1
    classes).
    """
    q, r = np.linalg.qr(rng.normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    if num_labels == 1:
        return q[:1].copy()
    simplex_gap = math.sqrt(2.0 * num_labels / (num_labels - 1))
    if margin <= math.sqrt(2.0) + 1e-12 and num_labels <= 2 * dim:
        basis = np.concatenate([q, -q])
        return basis[:num_labels].copy()
    if margin <= simplex_gap + 1e-12 and num_labels <= dim + 1:
        e = np.eye(num_labels) - 1.0 / num_labels
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        # e spans a (K-1)-dim subspace of R^K; map it into R^dim orthonormally
        u, _, _ = np.linalg.svd(e.T, full_matrices=False)
        coords = e @ u[:, :num_labels - 1]
        return coords @ q[:num_labels - 1]
    raise DatasetError(f"cannot place {num_labels} unit centroids {margin} apart in {dim} dimensions")


def generate_synthetic(spec, lengths=None):
    """Labelled dialogues with Markov label context and noisy class centroids.

    ``lengths`` optionally fixes the utterance count of each dialogue instead
    of drawing it from the spec's range. Returns ``(header, dialogues,
    centroids)`` where ``centroids`` maps modality to the clean
    [num_labels, dim] class means.
    """
    spec.validate()
    if lengths is not None and (len(lengths) != spec.dialogues or min(lengths) < 1):
        raise DatasetError("lengths must give a positive size for every dialogue")
    rng = Rng(spec.seed)
    centroids = {m: class_centroids(spec.num_labels, int(spec.dims[m]), spec.margin, rng.child(i))
                 for i, m in enumerate(MODALITIES)}
    stream = rng.child(len(MODALITIES))
    dialogues = []
    for di in range(spec.dialogues):
        if lengths is None:
            n = int(stream.integers(spec.min_utterances, spec.max_utterances + 1))
        else:
            n = int(lengths[di])
        labels = np.empty(n, dtype=np.int64)
        labels[0] = stream.integers(0, spec.num_labels)
        for i in range(1, n):
            keep = stream.random() < spec.context_correlation
            labels[i] = labels[i - 1] if keep else stream.integers(0, spec.num_labels)
        speakers = stream.integers(0, spec.num_speakers, n)
        noise = {m: stream.normal((n, int(spec.dims[m]))) for m in MODALITIES}
        utts = []
        for i in range(n):
            feats = {}
            for m in MODALITIES:
                base = centroids[m][labels[i]] if m in spec.signal_modalities else 0.0
                feats[m] = (base + spec.noise[m] * noise[m][i]).astype(np.float32)
            utts.append(Utterance(f"d{di:05d}_u{i:03d}", f"S{speakers[i]}", int(labels[i]), **feats))
        dialogues.append(Dialogue(f"d{di:05d}", utts))
    header = DatasetHeader(spec.num_labels, [f"class_{c}" for c in range(spec.num_labels)],
                           {m: int(spec.dims[m]) for m in MODALITIES})
    return header, dialogues, centroids


def mimic_corpus(name, split, dims=None, seed=0, noise=0.5):
    """Synthetic export with the dialogue/utterance counts of a public corpus split."""
    try:
        info = CORPUS_SIZES[name]
        n_dialogues, n_utts = info[split]
    except KeyError:
        raise DatasetError(f"unknown corpus/split {name!r}/{split!r}") from None
    dims = dims or {"text": 8, "audio": 6, "visual": 4}
    sizes = np.full(n_dialogues, n_utts // n_dialogues)
    sizes[: n_utts % n_dialogues] += 1
    spec = SyntheticSpec(num_labels=info["num_labels"], dims=dims, dialogues=n_dialogues,
                         min_utterances=1, max_utterances=int(sizes.max()),
                         noise={m: noise for m in MODALITIES}, seed=seed)
    header, dialogues, _ = generate_synthetic(spec, lengths=sizes.tolist())
    return header, dialogues


# -- transformations -------------------------------------------------------------

def mask_modalities(dialogues, keep):
    """Zero the features of every modality not in ``keep``; shapes are unchanged."""
    keep = set(keep)
    if not keep:
        raise DatasetError("keep set must name at least one modality")
    if not keep <= set(MODALITIES):
        raise DatasetError(f"unknown modalities {sorted(keep - set(MODALITIES))}")
    out = []
    for d in dialogues:
        utts = [replace(u, **{m: np.zeros_like(u.feature(m)) for m in MODALITIES if m not in keep})
                for u in d.utterances]
        out.append(Dialogue(d.dialogue_id, utts))
    return out


def split_dataset(dialogues, fractions, seed):
    """Shuffle dialogues with ``seed`` and cut them into consecutive parts.

    Part sizes use largest-remainder rounding so they always sum to the total.
    Returns a tuple with one list per fraction.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise DatasetError(f"fractions must be positive and sum to 1, got {fractions}")
    n = len(dialogues)
    if n < len(fractions):
        raise DatasetError(f"{n} dialogues cannot fill {len(fractions)} splits")
    raw = np.array(fractions) * n
    sizes = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[i] += 1
    # every part gets at least one dialogue
    for i in range(len(sizes)):
        if sizes[i] == 0:
            sizes[i] = 1
            sizes[int(np.argmax(sizes))] -= 1
    order = Rng(seed).permutation(n)
    parts, start = [], 0
    for s in sizes:
        parts.append([dialogues[i] for i in order[start:start + s]])
        start += s
    return tuple(parts)


# -- batching -------------------------------------------------------------------

@dataclass
class Batch:
    features: dict  # modality -> [B, L, d_m]
    labels: np.ndarray  # [B, L], -1 at padding
    valid: np.ndarray  # [B, L] bool
    dialogue_ids: list

    @property
    def lengths(self):
        return self.valid.sum(axis=1)


def collate(dialogues, dims, dtype=np.float32):
    b = len(dialogues)
    L = max(len(d) for d in dialogues)
    feats = {m: np.zeros((b, L, dims[m]), dtype=dtype) for m in MODALITIES}
    labels = np.full((b, L), -1, dtype=np.int64)
    valid = np.zeros((b, L), dtype=bool)
    for i, d in enumerate(dialogues):
        for j, u in enumerate(d.utterances):
            for m in MODALITIES:
                feats[m][i, j] = u.feature(m)
            labels[i, j] = u.label
            valid[i, j] = True
    return Batch(feats, labels, valid, [d.dialogue_id for d in dialogues])
