"""
Gerarchia a tre livelli specie → genere → taxon superiore e mappe di aggregazione
usate dalla loss gerarchica e dalle metriche per livello.

Formato del file (JSON UTF-8):

    {"species": [{"name", "genus", "color"?, "report"?}, ...],
     "genera":  [{"name", "taxon"}, ...],
     "taxa":    [{"name", "category"?}, ...]}          # opzionale

Gli indici seguono l'ordine del file. La sezione ``taxa`` è facoltativa: se manca,
i taxa sono ricavati dai generi nell'ordine di prima apparizione.
"""

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import IGNORE_INDEX
from .errors import ShapeMismatchError, TaxonomyError
from .tensor import Tensor, group_sum, is_debug
from .types import TaxonomyLevel

_HEX_COLOR = re.compile(r"^#?[0-9A-Fa-f]{6}$")
CATEGORIES = ("non_coniferous", "coniferous", "other")


@dataclass(frozen=True)
class Taxonomy:
    species: Tuple[str, ...]
    genera: Tuple[str, ...]
    taxa: Tuple[str, ...]
    genus_of: Tuple[int, ...]
    taxon_of: Tuple[int, ...]
    colors: Tuple[Optional[str], ...]
    reported: Tuple[bool, ...]
    categories: Tuple[Optional[str], ...]

    def __post_init__(self):
        problems = []
        if len(self.genus_of) != len(self.species):
            problems.append("genus_of deve avere una voce per specie")
        if len(self.taxon_of) != len(self.genera):
            problems.append("taxon_of deve avere una voce per genere")
        if any(not 0 <= g < len(self.genera) for g in self.genus_of):
            problems.append("indice di genere fuori intervallo")
        if any(not 0 <= t < len(self.taxa) for t in self.taxon_of):
            problems.append("indice di taxon fuori intervallo")
        if not problems:
            empty_genera = sorted(set(range(len(self.genera))) - set(self.genus_of))
            empty_taxa = sorted(set(range(len(self.taxa))) - set(self.taxon_of))
            problems += [f"genere '{self.genera[g]}' senza specie" for g in empty_genera]
            problems += [f"taxon '{self.taxa[t]}' senza generi" for t in empty_taxa]
        if not self.species:
            problems.append("nessuna specie definita")
        if problems:
            raise TaxonomyError(problems)

    @property
    def num_species(self) -> int:
        return len(self.species)

    @property
    def num_genera(self) -> int:
        return len(self.genera)

    @property
    def num_taxa(self) -> int:
        return len(self.taxa)

    @property
    def species_groups(self) -> Tuple[Tuple[int, ...], ...]:
        """S_g: specie di ciascun genere, nell'ordine del file."""
        return tuple(
            tuple(s for s, g in enumerate(self.genus_of) if g == genus)
            for genus in range(self.num_genera)
        )

    @property
    def genus_groups(self) -> Tuple[Tuple[int, ...], ...]:
        """G_t: generi di ciascun taxon."""
        return tuple(
            tuple(g for g, t in enumerate(self.taxon_of) if t == taxon)
            for taxon in range(self.num_taxa)
        )

    @property
    def taxon_of_species(self) -> Tuple[int, ...]:
        return tuple(self.taxon_of[g] for g in self.genus_of)

    def level_size(self, level: Union[TaxonomyLevel, str]) -> int:
        level = TaxonomyLevel(level)
        return {
            TaxonomyLevel.SPECIES: self.num_species,
            TaxonomyLevel.GENUS: self.num_genera,
            TaxonomyLevel.TAXON: self.num_taxa,
        }[level]

    def level_names(self, level: Union[TaxonomyLevel, str]) -> Tuple[str, ...]:
        level = TaxonomyLevel(level)
        return {
            TaxonomyLevel.SPECIES: self.species,
            TaxonomyLevel.GENUS: self.genera,
            TaxonomyLevel.TAXON: self.taxa,
        }[level]

    def level_map(self, level: Union[TaxonomyLevel, str]) -> np.ndarray:
        """Indice di livello per ogni specie."""
        level = TaxonomyLevel(level)
        if level is TaxonomyLevel.SPECIES:
            return np.arange(self.num_species, dtype=np.int64)
        if level is TaxonomyLevel.GENUS:
            return np.asarray(self.genus_of, dtype=np.int64)
        return np.asarray(self.taxon_of_species, dtype=np.int64)

    def species_index(self, name: str) -> int:
        try:
            return self.species.index(name)
        except ValueError as e:
            raise TaxonomyError(f"specie sconosciuta '{name}'") from e

    def category_of_species(self, index: int) -> Optional[str]:
        return self.categories[self.taxon_of[self.genus_of[index]]]

    @property
    def excluded_species(self) -> Tuple[str, ...]:
        return tuple(name for name, flag in zip(self.species, self.reported) if not flag)

    def prune(self, keep: Sequence[int]) -> Tuple["Taxonomy", Dict[int, int]]:
        """Restringe la tassonomia alle specie indicate; restituisce anche la mappa vecchio→nuovo indice."""
        kept = sorted(set(int(k) for k in keep))
        if not kept:
            raise TaxonomyError("la potatura eliminerebbe tutte le specie")
        data = self.to_dict()
        data["species"] = [data["species"][i] for i in kept]
        used_genera = {entry["genus"] for entry in data["species"]}
        data["genera"] = [g for g in data["genera"] if g["name"] in used_genera]
        used_taxa = {g["taxon"] for g in data["genera"]}
        data["taxa"] = [t for t in data["taxa"] if t["name"] in used_taxa]
        return taxonomy_from_dict(data), {old: new for new, old in enumerate(kept)}

    def to_dict(self) -> Dict[str, Any]:
        species = []
        for i, name in enumerate(self.species):
            entry: Dict[str, Any] = {"name": name, "genus": self.genera[self.genus_of[i]]}
            if self.colors[i] is not None:
                entry["color"] = self.colors[i]
            if not self.reported[i]:
                entry["report"] = False
            species.append(entry)
        genera = [
            {"name": name, "taxon": self.taxa[self.taxon_of[g]]}
            for g, name in enumerate(self.genera)
        ]
        taxa = []
        for t, name in enumerate(self.taxa):
            entry = {"name": name}
            if self.categories[t] is not None:
                entry["category"] = self.categories[t]
            taxa.append(entry)
        return {"species": species, "genera": genera, "taxa": taxa}


def _duplicates(names: Sequence[str]) -> List[str]:
    seen, dup = set(), []
    for name in names:
        if name in seen and name not in dup:
            dup.append(name)
        seen.add(name)
    return dup


def taxonomy_from_dict(data: Mapping[str, Any]) -> Taxonomy:
    if not isinstance(data, Mapping):
        raise TaxonomyError("il documento deve essere un oggetto JSON")

    species_entries = data.get("species") or []
    genus_entries = data.get("genera") or []
    taxon_entries = data.get("taxa")

    problems: List[str] = []
    if not species_entries:
        problems.append("sezione 'species' vuota o mancante")
    if not genus_entries:
        problems.append("sezione 'genera' vuota o mancante")
    if problems:
        raise TaxonomyError(problems)

    try:
        species_names = [str(e["name"]) for e in species_entries]
        species_genus = [str(e["genus"]) for e in species_entries]
        genus_names = [str(e["name"]) for e in genus_entries]
        genus_taxon = [str(e["taxon"]) for e in genus_entries]
    except (KeyError, TypeError) as e:
        raise TaxonomyError(f"voce senza campo obbligatorio {e}") from e

    if taxon_entries is None:
        taxon_names = list(dict.fromkeys(genus_taxon))
        categories: List[Optional[str]] = [None] * len(taxon_names)
    else:
        taxon_names = [str(e["name"]) for e in taxon_entries]
        categories = [e.get("category") for e in taxon_entries]

    for level, names in (("specie", species_names), ("genere", genus_names), ("taxon", taxon_names)):
        problems += [f"{level} duplicato '{n}'" for n in _duplicates(names)]

    genus_index = {name: i for i, name in enumerate(genus_names)}
    taxon_index = {name: i for i, name in enumerate(taxon_names)}
    problems += [
        f"specie orfana '{s}': genere '{g}' non definito"
        for s, g in zip(species_names, species_genus)
        if g not in genus_index
    ]
    problems += [
        f"genere '{g}' associato al taxon non definito '{t}'"
        for g, t in zip(genus_names, genus_taxon)
        if t not in taxon_index
    ]
    problems += [
        f"categoria sconosciuta '{c}'" for c in categories if c is not None and c not in CATEGORIES
    ]

    colors: List[Optional[str]] = []
    for entry in species_entries:
        color = entry.get("color")
        if color is not None and not _HEX_COLOR.match(str(color)):
            problems.append(f"colore non valido '{color}' per la specie '{entry['name']}'")
            color = None
        colors.append(None if color is None else "#" + str(color).lstrip("#").upper())

    if problems:
        raise TaxonomyError(problems)

    return Taxonomy(
        species=tuple(species_names),
        genera=tuple(genus_names),
        taxa=tuple(taxon_names),
        genus_of=tuple(genus_index[g] for g in species_genus),
        taxon_of=tuple(taxon_index[t] for t in genus_taxon),
        colors=tuple(colors),
        reported=tuple(bool(e.get("report", True)) for e in species_entries),
        categories=tuple(categories),
    )


def load_taxonomy(path: Union[str, Path]) -> Taxonomy:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise TaxonomyError(f"file di tassonomia non trovato: {path}") from e
    except json.JSONDecodeError as e:
        raise TaxonomyError(f"JSON non valido in {path}: {e}") from e
    return taxonomy_from_dict(data)


def default_taxonomy_path() -> Path:
    return Path(__file__).resolve().parent.parent / "resources" / "taxonomy_15.json"


def _class_axis(ndim: int, axis: Optional[int]) -> int:
    if axis is not None:
        return axis % ndim
    return max(ndim - 3, 0)


def aggregate_probs(
    p_species: Tensor,
    taxonomy: Taxonomy,
    level: Union[TaxonomyLevel, str],
    axis: Optional[int] = None,
) -> Tensor:
    """Somma le probabilità di specie per gruppo; il livello taxon passa sempre dal genere."""
    level = TaxonomyLevel(level)
    class_axis = _class_axis(p_species.ndim, axis)
    if p_species.shape[class_axis] != taxonomy.num_species:
        raise ShapeMismatchError(
            "aggregate_probs",
            p_species.shape,
            (taxonomy.num_species,),
            detail=f"l'asse delle classi deve avere {taxonomy.num_species} specie",
        )
    if is_debug():
        totals = p_species.data.sum(axis=class_axis)
        if np.any(p_species.data < 0) or not np.allclose(totals, 1.0, atol=1e-5):
            raise TaxonomyError("le probabilità di specie non formano un simplesso per pixel")

    if level is TaxonomyLevel.SPECIES:
        return p_species
    genus = group_sum(p_species, taxonomy.species_groups, axis=class_axis)
    if level is TaxonomyLevel.GENUS:
        return genus
    return group_sum(genus, taxonomy.genus_groups, axis=class_axis)


def aggregate_labels(
    y_species: np.ndarray,
    taxonomy: Taxonomy,
    level: Union[TaxonomyLevel, str],
    ignore_index: int = IGNORE_INDEX,
) -> np.ndarray:
    level = TaxonomyLevel(level)
    y = np.asarray(y_species)
    valid = y != ignore_index
    bad = valid & ((y < 0) | (y >= taxonomy.num_species))
    if np.any(bad):
        coord = tuple(int(c) for c in np.argwhere(bad)[0])
        raise TaxonomyError(
            f"etichetta {int(y[coord])} fuori intervallo alla coordinata {coord} "
            f"(specie disponibili: {taxonomy.num_species})"
        )
    out = np.full_like(y, ignore_index)
    out[valid] = taxonomy.level_map(level)[y[valid].astype(np.int64)]
    return out
