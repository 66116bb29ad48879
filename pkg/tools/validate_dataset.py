import argparse
import json
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Tuple

SPLITS = ("train", "val", "test")


def load_manifest(dataset_dir: Path) -> dict:
    with open(dataset_dir / "manifest.json", "r", encoding="utf-8") as f:
        return json.load(f)


def missing_files(dataset_dir: Path, manifest: dict) -> List[str]:
    """Percorsi citati dal manifest che non esistono su disco."""
    missing = []
    if not (dataset_dir / manifest.get("taxonomy", "taxonomy.json")).exists():
        missing.append(manifest.get("taxonomy", "taxonomy.json"))
    for entry in manifest.get("samples", []):
        for key in ("image", "mask"):
            if not (dataset_dir / entry[key]).exists():
                missing.append(entry[key])
    return missing


def split_leaks(manifest: dict) -> List[Tuple[Tuple[int, int], Tuple[int, int]]]:
    """
    Coppie di tile 4-adiacenti assegnate a split diversi. Le tile di buffer
    (split nullo) non contano.
    """
    assignment: Dict[Tuple[int, int], Optional[str]] = {
        tuple(e["tile"]): e.get("split") for e in manifest.get("samples", [])
    }
    leaks = []
    for (r, c), split in assignment.items():
        if split is None:
            continue
        for neighbour in ((r + 1, c), (r, c + 1)):
            other = assignment.get(neighbour)
            if other is not None and other != split:
                leaks.append(((r, c), neighbour))
    return leaks


def inconsistent_assignments(manifest: dict) -> List[str]:
    """Campioni la cui voce ``split`` non coincide con le liste ``splits``/``buffer``."""
    listed: Dict[str, Optional[str]] = {}
    for name, ids in manifest.get("splits", {}).items():
        for sample_id in ids:
            listed[sample_id] = name
    for sample_id in manifest.get("buffer", []):
        listed[sample_id] = None
    return [
        e["id"]
        for e in manifest.get("samples", [])
        if e["id"] not in listed or listed[e["id"]] != e.get("split")
    ]


def crown_totals(manifest: dict) -> Counter:
    totals: Counter = Counter()
    for entry in manifest.get("samples", []):
        totals.update(entry.get("crowns", {}))
    return totals


def main():
    parser = argparse.ArgumentParser(
        description="Valida un dataset generato: file presenti, split senza adiacenze, conteggi delle classi."
    )
    parser.add_argument(
        "--path",
        required=True,
        help="Percorso alla cartella del dataset (quella che contiene manifest.json)."
    )
    args = parser.parse_args()

    dataset_dir = Path(args.path)
    if not (dataset_dir / "manifest.json").exists():
        print(f"[ERRORE] manifest.json non trovato in: {dataset_dir}")
        raise SystemExit(1)

    manifest = load_manifest(dataset_dir)
    samples = manifest.get("samples", [])
    print(f"Dataset {dataset_dir}: {len(samples)} campioni, griglia {manifest.get('grid_shape')}.")
    problems = 0

    missing = missing_files(dataset_dir, manifest)
    if missing:
        problems += len(missing)
        print(f"[ERRORE] {len(missing)} file mancanti, ad esempio: {missing[:5]}")

    leaks = split_leaks(manifest)
    if leaks:
        problems += len(leaks)
        print(f"[ERRORE] {len(leaks)} coppie di tile adiacenti in split diversi, ad esempio: {leaks[:5]}")

    inconsistent = inconsistent_assignments(manifest)
    if inconsistent:
        problems += len(inconsistent)
        print(f"[ERRORE] Assegnazione incoerente per: {inconsistent[:5]}")

    counts = Counter(e.get("split") for e in samples)
    assigned = sum(counts[s] for s in SPLITS)
    for name in SPLITS:
        share = counts[name] / assigned if assigned else 0.0
        print(f"  {name:<5}: {counts[name]:>4} tile ({share:.1%})")
    print(f"  buffer: {counts[None]:>4} tile")

    min_count = int(manifest.get("min_count", 0))
    for species, total in sorted(crown_totals(manifest).items()):
        flag = "" if total >= min_count else "  [ATTENZIONE] sotto la soglia"
        print(f"  {species:<6} {total:>6} chiome{flag}")

    if problems:
        print(f"\n[ERRORE] Validazione fallita: {problems} problemi.")
        raise SystemExit(1)
    print("\nDataset valido.")


if __name__ == "__main__":
    main()
