"""Corpora, vocabularies, the heterogeneous graph, splits, synthetic data.

File formats (all UTF-8, ids 0-based):

- ``symptoms.jsonl``      one JSON object per line:
  ``{"id": int, "name": str, "text_embedding": [float, ...]?}``
- ``herbs.jsonl``         ``{"id": int, "name": str, "properties": [float]*P,
  "molecules": [str, ...]}``
- ``prescriptions.jsonl`` ``{"symptoms": [int, ...], "herbs": [int, ...]}``
  (herb order is meaningful and preserved)
- molecular table         header line ``dim=<d_m>`` then rows
  ``herb_id<TAB>mol_index<TAB>f1,f2,...``; ``mol_index = -1`` marks an
  imputed vector.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, SchemaError
from .nn import stage_rng

SYMPTOMS_FILE = "symptoms.jsonl"
HERBS_FILE = "herbs.jsonl"
PRESCRIPTIONS_FILE = "prescriptions.jsonl"


# ---------------------------------------------------------------------------
# record types
# ---------------------------------------------------------------------------

@dataclass
class SymptomRecord:
    id: int
    name: str
    text_embedding: np.ndarray | None = None


@dataclass
class HerbRecord:
    id: int
    name: str
    properties: np.ndarray = field(default_factory=lambda: np.zeros(0))
    molecules: list[str] = field(default_factory=list)
    mol_embeddings: list[np.ndarray] | None = None


@dataclass
class PrescriptionInstance:
    instance_id: int
    symptoms: frozenset[int]
    herbs: list[int]  # order preserved from the source, duplicates removed


@dataclass
class HeteroGraph:
    n_sym: int
    n_herb: int
    edges_ss: np.ndarray  # (E, 2) local symptom ids, u < v
    edges_hh: np.ndarray  # (E, 2) local herb ids, u < v
    edges_sh: np.ndarray  # (E, 2) (symptom id, herb id), both local
    degrees: np.ndarray = field(init=False)          # full graph, n_sym + n_herb
    sub_degrees_ss: np.ndarray = field(init=False)   # within the sym-sym subgraph
    sub_degrees_hh: np.ndarray = field(init=False)   # within the herb-herb subgraph

    def __post_init__(self):
        s, h = self.n_sym, self.n_herb
        for name, edges, hi_u, hi_v in (("edges_ss", self.edges_ss, s, s),
                                        ("edges_hh", self.edges_hh, h, h),
                                        ("edges_sh", self.edges_sh, s, h)):
            if len(edges) and (edges[:, 0].max() >= hi_u or edges[:, 1].max() >= hi_v
                               or edges.min() < 0):
                raise SchemaError(f"{name} contains out-of-range node ids")
        self.sub_degrees_ss = _degree_vector(s, self.edges_ss)
        self.sub_degrees_hh = _degree_vector(h, self.edges_hh)
        deg = np.zeros(s + h, dtype=np.int64)
        deg[:s] += self.sub_degrees_ss
        deg[s:] += self.sub_degrees_hh
        for u, v in self.edges_sh:
            deg[u] += 1
            deg[s + v] += 1
        self.degrees = deg

    def all_edges_global(self) -> np.ndarray:
        """Every edge of the full graph, herbs offset by n_sym."""
        parts = []
        if len(self.edges_ss):
            parts.append(self.edges_ss)
        if len(self.edges_hh):
            parts.append(self.edges_hh + self.n_sym)
        if len(self.edges_sh):
            sh = self.edges_sh.copy()
            sh[:, 1] += self.n_sym
            parts.append(sh)
        if not parts:
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate(parts, axis=0)


@dataclass
class DatasetSplit:
    train: list[PrescriptionInstance]
    valid: list[PrescriptionInstance]
    test: list[PrescriptionInstance]
    seed: int


def _degree_vector(n: int, edges: np.ndarray) -> np.ndarray:
    deg = np.zeros(n, dtype=np.int64)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    return deg


def _edge_array(pairs: Iterable[tuple[int, int]]) -> np.ndarray:
    arr = sorted(pairs)
    if not arr:
        return np.zeros((0, 2), dtype=np.int64)
    return np.asarray(arr, dtype=np.int64)


# ---------------------------------------------------------------------------
# corpus loading
# ---------------------------------------------------------------------------

def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    return rows


def load_corpus(corpus_dir: str | Path, expected_p: int | None = None,
                ) -> tuple[list[SymptomRecord], list[HerbRecord], list[PrescriptionInstance]]:
    """Load a corpus directory and validate id density and cross-references."""
    corpus_dir = Path(corpus_dir)
    for fname in (SYMPTOMS_FILE, HERBS_FILE, PRESCRIPTIONS_FILE):
        if not (corpus_dir / fname).exists():
            raise SchemaError(f"missing corpus file: {corpus_dir / fname}")

    symptoms: list[SymptomRecord] = []
    for row in _read_jsonl(corpus_dir / SYMPTOMS_FILE):
        emb = row.get("text_embedding")
        symptoms.append(SymptomRecord(
            id=int(row["id"]), name=str(row["name"]),
            text_embedding=None if emb is None else np.asarray(emb, dtype=np.float64)))
    symptoms.sort(key=lambda r: r.id)
    _check_dense_ids([r.id for r in symptoms], "symptom")
    _check_unique_names([r.name for r in symptoms], "symptom")

    herbs: list[HerbRecord] = []
    p_dim = expected_p
    for row in _read_jsonl(corpus_dir / HERBS_FILE):
        props = np.asarray(row["properties"], dtype=np.float64)
        if p_dim is None:
            p_dim = props.size
        if props.size != p_dim:
            raise SchemaError(
                f"herb {row['id']} ({row['name']}): property vector has length "
                f"{props.size}, expected {p_dim}")
        herbs.append(HerbRecord(id=int(row["id"]), name=str(row["name"]),
                                properties=props,
                                molecules=[str(m) for m in row.get("molecules", [])]))
    herbs.sort(key=lambda r: r.id)
    _check_dense_ids([r.id for r in herbs], "herb")
    _check_unique_names([r.name for r in herbs], "herb")

    prescriptions: list[PrescriptionInstance] = []
    n_sym, n_herb = len(symptoms), len(herbs)
    for idx, row in enumerate(_read_jsonl(corpus_dir / PRESCRIPTIONS_FILE)):
        sym_ids = [int(s) for s in row["symptoms"]]
        herb_ids = [int(h) for h in row["herbs"]]
        if not sym_ids or not herb_ids:
            raise SchemaError(f"prescription {idx}: empty symptom or herb list")
        for s in sym_ids:
            if not 0 <= s < n_sym:
                raise SchemaError(f"prescription {idx}: unknown symptom id {s}")
        deduped: list[int] = []
        for h in herb_ids:
            if not 0 <= h < n_herb:
                raise SchemaError(f"prescription {idx}: unknown herb id {h}")
            if h not in deduped:
                deduped.append(h)
        prescriptions.append(PrescriptionInstance(
            instance_id=idx, symptoms=frozenset(sym_ids), herbs=deduped))
    return symptoms, herbs, prescriptions


def _check_dense_ids(ids: list[int], kind: str) -> None:
    if ids != list(range(len(ids))):
        raise SchemaError(f"{kind} ids must be dense 0..{len(ids) - 1}")


def _check_unique_names(names: list[str], kind: str) -> None:
    dupes = [n for n, c in Counter(names).items() if c > 1]
    if dupes:
        raise SchemaError(f"duplicate {kind} names: {dupes[:5]}")


def save_corpus(corpus_dir: str | Path, symptoms: Sequence[SymptomRecord],
                herbs: Sequence[HerbRecord],
                prescriptions: Sequence[PrescriptionInstance]) -> None:
    corpus_dir = Path(corpus_dir)
    corpus_dir.mkdir(parents=True, exist_ok=True)
    with open(corpus_dir / SYMPTOMS_FILE, "w", encoding="utf-8") as fh:
        for r in symptoms:
            row = {"id": r.id, "name": r.name}
            if r.text_embedding is not None:
                row["text_embedding"] = [float(x) for x in r.text_embedding]
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    with open(corpus_dir / HERBS_FILE, "w", encoding="utf-8") as fh:
        for r in herbs:
            row = {"id": r.id, "name": r.name,
                   "properties": [float(x) for x in r.properties],
                   "molecules": list(r.molecules)}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    with open(corpus_dir / PRESCRIPTIONS_FILE, "w", encoding="utf-8") as fh:
        for r in prescriptions:
            row = {"symptoms": sorted(r.symptoms), "herbs": list(r.herbs)}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------

def build_graph(prescriptions: Sequence[PrescriptionInstance], n_sym: int, n_herb: int,
                tau_s: int = 2, tau_h: int = 2) -> HeteroGraph:
    """Co-occurrence graph: a within-type edge needs >= tau shared
    prescriptions, a symptom-herb edge needs one."""
    if tau_s < 1 or tau_h < 1:
        raise DataError("co-occurrence thresholds must be >= 1")
    ss: Counter = Counter()
    hh: Counter = Counter()
    sh: set[tuple[int, int]] = set()
    for inst in prescriptions:
        syms = sorted(inst.symptoms)
        herbs = sorted(set(inst.herbs))
        for i, u in enumerate(syms):
            for v in syms[i + 1:]:
                ss[(u, v)] += 1
        for i, u in enumerate(herbs):
            for v in herbs[i + 1:]:
                hh[(u, v)] += 1
        for u in syms:
            for v in herbs:
                sh.add((u, v))
    return HeteroGraph(
        n_sym=n_sym, n_herb=n_herb,
        edges_ss=_edge_array(p for p, c in ss.items() if c >= tau_s),
        edges_hh=_edge_array(p for p, c in hh.items() if c >= tau_h),
        edges_sh=_edge_array(sh))


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def split_sizes(n: int, ratio: tuple[float, float, float]) -> tuple[int, int, int]:
    """Valid and test sizes round half-up; train takes the remainder."""
    n_test = math.floor(n * ratio[2] + 0.5)
    n_valid = math.floor(n * ratio[1] + 0.5)
    return n - n_valid - n_test, n_valid, n_test


def split_dataset(prescriptions: Sequence[PrescriptionInstance],
                  ratio: tuple[float, float, float] = (0.7, 0.1, 0.2),
                  seed: int = 42) -> DatasetSplit:
    if len(ratio) != 3 or any(r <= 0 for r in ratio):
        raise DataError("split ratio must be three positive numbers")
    if abs(sum(ratio) - 1.0) > 1e-9:
        raise DataError(f"split ratio must sum to 1, got {sum(ratio)}")
    n = len(prescriptions)
    if n < 3:
        raise DataError(f"corpus too small to split: {n} instances")
    n_train, n_valid, n_test = split_sizes(n, ratio)
    order = stage_rng(seed, "split").permutation(n)
    items = [prescriptions[i] for i in order]
    return DatasetSplit(train=items[:n_train],
                        valid=items[n_train:n_train + n_valid],
                        test=items[n_train + n_valid:],
                        seed=seed)


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

_MOL_FRAGMENTS = ["C", "CC", "N", "O", "CO", "C(=O)O", "c1ccccc1", "Cl",
                  "C(N)", "OC", "S", "C=C"]


def _cluster_blocks(n: int, k: int) -> list[np.ndarray]:
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [np.arange(bounds[i], bounds[i + 1]) for i in range(k)]


def generate_synthetic(n_sym: int, n_herb: int, n_syndromes: int, n_prescriptions: int,
                       seed: int, *, p_dim: int = 23, missing_mol_fraction: float = 0.2,
                       text_embedding_dim: int | None = None,
                       unique_symptom_sets: bool = True,
                       ) -> tuple[list[SymptomRecord], list[HerbRecord],
                                  list[PrescriptionInstance]]:
    """Planted-structure corpus: each latent syndrome owns a symptom cluster
    and a herb cluster; prescriptions draw 2-4 symptoms and 5-10 herbs from
    one syndrome's clusters.  Fully deterministic under ``seed``.

    With ``unique_symptom_sets`` every instance gets a distinct symptom set,
    which makes per-instance memorization well defined; corpora with repeated
    inputs are produced by :func:`generate_conflicting_corpus`.
    """
    if n_syndromes > min(n_sym, n_herb):
        raise DataError("n_syndromes must not exceed min(n_sym, n_herb)")
    sym_clusters = _cluster_blocks(n_sym, n_syndromes)
    herb_clusters = _cluster_blocks(n_herb, n_syndromes)
    if min(len(c) for c in sym_clusters) < 2:
        raise DataError("symptom clusters too small: need >= 2 symptoms per syndrome")
    if min(len(c) for c in herb_clusters) < 5:
        raise DataError("herb clusters too small: need >= 5 herbs per syndrome")

    rng = stage_rng(seed, "synth")
    prop_proto = rng.normal(0.0, 1.0, size=(n_syndromes, p_dim))
    text_proto = (rng.normal(0.0, 1.0, size=(n_syndromes, text_embedding_dim))
                  if text_embedding_dim else None)
    mol_pools = []
    for c in range(n_syndromes):
        pool = []
        for _ in range(6):
            k = rng.integers(3, 7)
            pool.append("".join(rng.choice(_MOL_FRAGMENTS, size=k)))
        mol_pools.append(pool)

    sym_of = np.empty(n_sym, dtype=int)
    for c, block in enumerate(sym_clusters):
        sym_of[block] = c
    herb_of = np.empty(n_herb, dtype=int)
    for c, block in enumerate(herb_clusters):
        herb_of[block] = c

    symptoms = []
    for i in range(n_sym):
        emb = None
        if text_proto is not None:
            emb = text_proto[sym_of[i]] + 0.3 * rng.normal(size=text_embedding_dim)
        symptoms.append(SymptomRecord(id=i, name=f"sym-{i:03d}", text_embedding=emb))

    n_missing = int(round(missing_mol_fraction * n_herb))
    missing_ids = set(rng.choice(n_herb, size=n_missing, replace=False).tolist()) \
        if n_missing else set()
    herbs = []
    for i in range(n_herb):
        c = herb_of[i]
        props = prop_proto[c] + 0.15 * rng.normal(size=p_dim)
        mols: list[str] = []
        if i not in missing_ids:
            k = int(rng.integers(1, 5))
            mols = list(rng.choice(mol_pools[c], size=min(k, len(mol_pools[c])),
                                   replace=False))
        herbs.append(HerbRecord(id=i, name=f"herb-{i:03d}", properties=props,
                                molecules=mols))

    prescriptions = []
    seen_sets: set[frozenset[int]] = set()
    for idx in range(n_prescriptions):
        for attempt in range(1000):
            c = int(rng.integers(n_syndromes))
            k_s = int(rng.integers(2, min(4, len(sym_clusters[c])) + 1))
            sym_ids = frozenset(rng.choice(sym_clusters[c], size=k_s,
                                           replace=False).tolist())
            if not unique_symptom_sets or sym_ids not in seen_sets:
                break
        else:
            raise DataError(
                "could not draw a fresh symptom set; the configuration leaves too "
                "few distinct sets (pass unique_symptom_sets=False to allow repeats)")
        seen_sets.add(sym_ids)
        k_h = int(rng.integers(5, min(10, len(herb_clusters[c])) + 1))
        herb_ids = rng.choice(herb_clusters[c], size=k_h, replace=False).tolist()
        prescriptions.append(PrescriptionInstance(
            instance_id=idx, symptoms=sym_ids, herbs=[int(h) for h in herb_ids]))
    return symptoms, herbs, prescriptions


def generate_conflicting_corpus(n_pairs: int, herbs_per_formula: int, seed: int, *,
                                p_dim: int = 23,
                                ) -> tuple[list[SymptomRecord], list[HerbRecord],
                                           list[PrescriptionInstance]]:
    """Every symptom set appears twice, mapped to two disjoint herb formulas.

    Used to verify that generated sequences never blend the two ground
    truths for the same input.
    """
    rng = stage_rng(seed, "synth.conflict")
    n_sym = 2 * n_pairs
    n_herb = 2 * n_pairs * herbs_per_formula
    symptoms = [SymptomRecord(id=i, name=f"sym-{i:03d}") for i in range(n_sym)]
    herbs = [HerbRecord(id=i, name=f"herb-{i:03d}",
                        properties=rng.normal(size=p_dim),
                        molecules=["".join(rng.choice(_MOL_FRAGMENTS, size=4))])
             for i in range(n_herb)]
    prescriptions = []
    for p in range(n_pairs):
        sym_ids = frozenset({2 * p, 2 * p + 1})
        base = 2 * p * herbs_per_formula
        formula_a = list(range(base, base + herbs_per_formula))
        formula_b = list(range(base + herbs_per_formula, base + 2 * herbs_per_formula))
        rng.shuffle(formula_a)
        rng.shuffle(formula_b)
        prescriptions.append(PrescriptionInstance(
            instance_id=2 * p, symptoms=sym_ids, herbs=formula_a))
        prescriptions.append(PrescriptionInstance(
            instance_id=2 * p + 1, symptoms=sym_ids, herbs=formula_b))
    return symptoms, herbs, prescriptions


# ---------------------------------------------------------------------------
# molecular tables
# ---------------------------------------------------------------------------

def load_molecular_table(path: str | Path, n_herb: int | None = None,
                         ) -> dict[int, list[np.ndarray]]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise SchemaError(f"{path}:1: expected header 'dim=<d_m>', got {header!r}")
        try:
            d_m = int(header[4:])
        except ValueError as exc:
            raise SchemaError(f"{path}:1: bad dimension in header {header!r}") from exc
        table: dict[int, list[np.ndarray]] = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise SchemaError(f"{path}:{lineno}: expected 3 tab-separated fields")
            herb_id = int(parts[0])
            if n_herb is not None and not 0 <= herb_id < n_herb:
                raise SchemaError(f"{path}:{lineno}: unknown herb id {herb_id}")
            vec = np.asarray([float(x) for x in parts[2].split(",")], dtype=np.float64)
            if vec.size != d_m:
                raise SchemaError(
                    f"{path}:{lineno}: vector has length {vec.size}, header says {d_m}")
            table.setdefault(herb_id, []).append(vec)
    return table


def attach_molecular_table(herbs: Sequence[HerbRecord],
                           table: dict[int, list[np.ndarray]],
                           d_m: int | None = None) -> None:
    """Attach precomputed molecule embeddings to herb records in place.

    Rows must align 1:1 with each herb's molecule list; herbs absent from
    the table keep stub encoding (or the imputation path when they list no
    molecules at all).
    """
    for herb in herbs:
        vecs = table.get(herb.id)
        if vecs is None:
            continue
        if len(vecs) != len(herb.molecules):
            raise SchemaError(
                f"herb {herb.name}: table provides {len(vecs)} vectors for "
                f"{len(herb.molecules)} molecules")
        if d_m is not None and any(v.size != d_m for v in vecs):
            raise SchemaError(f"herb {herb.name}: table vectors are not {d_m}-wide")
        herb.mol_embeddings = [np.asarray(v, dtype=np.float64) for v in vecs]


def save_molecular_table(path: str | Path, table: dict[int, list[np.ndarray]],
                         d_m: int, imputed_ids: set[int] | None = None) -> None:
    """Write a molecular table; rows of herbs in ``imputed_ids`` get
    ``mol_index = -1``."""
    imputed_ids = imputed_ids or set()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={d_m}\n")
        for herb_id in sorted(table):
            for j, vec in enumerate(table[herb_id]):
                if vec.size != d_m:
                    raise SchemaError(f"herb {herb_id} row {j}: length {vec.size} != {d_m}")
                idx = -1 if herb_id in imputed_ids else j
                vals = ",".join(repr(float(x)) for x in vec)
                fh.write(f"{herb_id}\t{idx}\t{vals}\n")
