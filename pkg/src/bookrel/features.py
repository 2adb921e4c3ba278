"""Featurized training pairs and their on-disk store.

A feature directory holds one similarity-matrix file per pair plus a single
flat file of fixed-width pair-feature records, indexed by
``features-manifest.tsv``. Pairs whose books exceed the training word limit,
or whose chunk count would overflow the matrix, are excluded from training
features (they remain featurizable one-off for inference).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Book, book_word_count
from .embed import EmbeddingTable, book_vector, chunk_vectors, DEFAULT_CHUNK_SIZE
from .labels import RelationshipLabel
from .simmat import (
    DEFAULT_MATRIX_SIZE,
    PairFeatures,
    SimilarityMatrix,
    load_matrix,
    pad_truncate,
    pair_features,
    pairwise_similarity,
    save_matrix,
)

MANIFEST_NAME = "features-manifest.tsv"
META_NAME = "features-meta.json"
PAIR_FEATURES_NAME = "pair-features.f32"
MANIFEST_COLUMNS = ("index", "left_id", "right_id", "label", "provenance", "matrix_file")

DEFAULT_MAX_WORDS = 750_000


@dataclass(frozen=True)
class LabeledPair:
    left_id: str
    right_id: str
    label: RelationshipLabel
    provenance: str = "real"  # "real" | "synthetic"


@dataclass
class PairExample:
    left_id: str
    right_id: str
    matrix: SimilarityMatrix
    pair_vector: np.ndarray
    label: RelationshipLabel
    provenance: str


def featurize_pair(
    left: Book,
    right: Book,
    table: EmbeddingTable,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    matrix_size: int = DEFAULT_MATRIX_SIZE,
) -> tuple[SimilarityMatrix, PairFeatures]:
    """Similarity matrix and pair feature vector for one ordered book pair."""
    left_chunks = chunk_vectors(left, table, chunk_size)
    right_chunks = chunk_vectors(right, table, chunk_size)
    matrix = pad_truncate(pairwise_similarity(left_chunks, right_chunks), matrix_size)
    feats = pair_features(book_vector(left, table), book_vector(right, table))
    return matrix, feats


class _BookFeatureCache:
    """Per-book chunk vectors and book vector, computed once per featurize run."""

    def __init__(self, books: Mapping[str, Book], table: EmbeddingTable, chunk_size: int):
        self.books = books
        self.table = table
        self.chunk_size = chunk_size
        self._chunks: dict[str, np.ndarray] = {}
        self._vectors: dict[str, np.ndarray] = {}

    def chunks(self, book_id: str) -> np.ndarray:
        if book_id not in self._chunks:
            self._chunks[book_id] = chunk_vectors(
                self.books[book_id], self.table, self.chunk_size
            )
        return self._chunks[book_id]

    def vector(self, book_id: str) -> np.ndarray:
        if book_id not in self._vectors:
            self._vectors[book_id] = book_vector(self.books[book_id], self.table)
        return self._vectors[book_id]


def featurize_pairs(
    pairs: Sequence[LabeledPair],
    books: Mapping[str, Book],
    table: EmbeddingTable,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    matrix_size: int = DEFAULT_MATRIX_SIZE,
    max_words: int = DEFAULT_MAX_WORDS,
    threads: int = 1,
) -> tuple[list[PairExample], dict[str, int]]:
    """Featurize labeled pairs, excluding any pair touching a book that is
    over the word limit or whose similarity matrix would be truncated.
    Returns (examples, skip counts by reason)."""
    cache = _BookFeatureCache(books, table, chunk_size)
    skipped = {"oversize": 0, "truncated": 0, "missing_book": 0}

    eligible: list[LabeledPair] = []
    for pair in pairs:
        if pair.left_id not in books or pair.right_id not in books:
            skipped["missing_book"] += 1
            continue
        if (
            book_word_count(books[pair.left_id]) > max_words
            or book_word_count(books[pair.right_id]) > max_words
        ):
            skipped["oversize"] += 1
            continue
        if (
            len(cache.chunks(pair.left_id)) > matrix_size
            or len(cache.chunks(pair.right_id)) > matrix_size
        ):
            skipped["truncated"] += 1
            continue
        eligible.append(pair)

    def build(pair: LabeledPair) -> PairExample:
        matrix = pad_truncate(
            pairwise_similarity(cache.chunks(pair.left_id), cache.chunks(pair.right_id)),
            matrix_size,
        )
        feats = pair_features(cache.vector(pair.left_id), cache.vector(pair.right_id))
        return PairExample(
            pair.left_id, pair.right_id, matrix, feats.vector, pair.label, pair.provenance
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            examples = list(pool.map(build, eligible))
    else:
        examples = [build(pair) for pair in eligible]
    return examples, skipped


def write_features(examples: Sequence[PairExample], out_dir: str | Path,
                   chunk_size: int, matrix_size: int) -> None:
    out_dir = Path(out_dir)
    matrices_dir = out_dir / "matrices"
    matrices_dir.mkdir(parents=True, exist_ok=True)

    pair_dim = int(examples[0].pair_vector.size) if examples else 0
    meta = {
        "count": len(examples),
        "matrix_size": matrix_size,
        "pair_dim": pair_dim,
        "chunk_size": chunk_size,
    }
    with open(out_dir / META_NAME, "w", encoding="utf-8") as handle:
        json.dump(meta, handle, sort_keys=True, indent=2)
        handle.write("\n")

    with open(out_dir / PAIR_FEATURES_NAME, "wb") as feats:
        with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as manifest:
            manifest.write("\t".join(MANIFEST_COLUMNS) + "\n")
            for index, example in enumerate(examples):
                matrix_file = f"matrices/{index:06d}.smx"
                save_matrix(example.matrix, out_dir / matrix_file)
                feats.write(
                    np.ascontiguousarray(example.pair_vector, dtype="<f4").tobytes()
                )
                manifest.write(
                    f"{index}\t{example.left_id}\t{example.right_id}\t"
                    f"{example.label.value}\t{example.provenance}\t{matrix_file}\n"
                )


def load_features(directory: str | Path) -> list[PairExample]:
    directory = Path(directory)
    with open(directory / META_NAME, encoding="utf-8") as handle:
        meta = json.load(handle)
    pair_dim = int(meta["pair_dim"])
    raw = np.fromfile(directory / PAIR_FEATURES_NAME, dtype="<f4")
    if pair_dim and raw.size != meta["count"] * pair_dim:
        raise ValueError(f"{directory}: pair-features size mismatch")
    vectors = raw.reshape(meta["count"], pair_dim) if pair_dim else raw.reshape(0, 0)

    examples: list[PairExample] = []
    with open(directory / MANIFEST_NAME, encoding="utf-8") as handle:
        header = tuple(handle.readline().rstrip("\n").split("\t"))
        if header != MANIFEST_COLUMNS:
            raise ValueError(f"{directory}: bad features manifest header")
        for line in handle:
            if not line.strip():
                continue
            index_s, left_id, right_id, label, provenance, matrix_file = (
                line.rstrip("\n").split("\t")
            )
            index = int(index_s)
            examples.append(
                PairExample(
                    left_id,
                    right_id,
                    load_matrix(directory / matrix_file),
                    vectors[index].astype(np.float64),
                    RelationshipLabel(label),
                    provenance,
                )
            )
    return examples


LABELS_COLUMNS = ("left_id", "right_id", "label", "provenance")


def write_labels(pairs: Iterable[LabeledPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\t".join(LABELS_COLUMNS) + "\n")
        for pair in pairs:
            handle.write(
                f"{pair.left_id}\t{pair.right_id}\t{pair.label.value}\t{pair.provenance}\n"
            )


def read_labels(path: str | Path, default_provenance: str = "real") -> list[LabeledPair]:
    """Read a labeled-pair TSV; a missing provenance column defaults to real."""
    pairs: list[LabeledPair] = []
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().rstrip("\n").split("\t")
        if header[:3] != list(LABELS_COLUMNS[:3]):
            raise ValueError(f"{path}: bad labels header {header}")
        has_provenance = len(header) >= 4 and header[3] == "provenance"
        for line in handle:
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            provenance = fields[3] if has_provenance else default_provenance
            pairs.append(
                LabeledPair(fields[0], fields[1], RelationshipLabel(fields[2]), provenance)
            )
    return pairs
