"""
Controllo indipendente del valore della loss gerarchica su un caso calcolabile a mano.

Tassonomia di 4 specie in 2 generi e 1 taxon, un solo pixel, predizione uniforme,
normalizzazione per classi e pesi (1, 0.3, 0.1):

    L = 1 * ln4 / 4 + 0.3 * ln2 / 2 + 0.1 * ln1 / 1 = 0.25 ln4 + 0.15 ln2

Il valore è ricalcolato per enumerazione esplicita con il solo modulo ``math``
e confrontato con l'implementazione del pacchetto.

Uso (dalla radice del repository):  python -m tools.verify_hloss_closed_form
"""

import argparse
import math
import sys

import numpy as np

from src.treeseg.domain.losses import HierarchyWeights, hierarchical_loss
from src.treeseg.domain.taxonomy import taxonomy_from_dict
from src.treeseg.domain.tensor import Tensor, precision
from src.treeseg.domain.types import Normalization

SPECIES = {"s0": "g0", "s1": "g0", "s2": "g1", "s3": "g1"}
GENERA = {"g0": "t0", "g1": "t0"}
WEIGHTS = (1.0, 0.3, 0.1)


def brute_force(label: str, probabilities: dict) -> float:
    """Somma delle cross-entropie per livello, ciascuna divisa per il numero di classi del livello."""
    genus_probs = {g: 0.0 for g in GENERA}
    for species, p in probabilities.items():
        genus_probs[SPECIES[species]] += p
    taxon_probs = {t: 0.0 for t in set(GENERA.values())}
    for genus, p in genus_probs.items():
        taxon_probs[GENERA[genus]] += p

    levels = (
        (probabilities, label),
        (genus_probs, SPECIES[label]),
        (taxon_probs, GENERA[SPECIES[label]]),
    )
    total = 0.0
    for weight, (probs, target) in zip(WEIGHTS, levels):
        ce = 0.0
        for name, p in probs.items():
            if name == target:
                ce -= math.log(p)
        total += weight * ce / len(probs)
    return total


def package_value(label_index: int) -> float:
    taxonomy = taxonomy_from_dict(
        {
            "species": [{"name": s, "genus": g} for s, g in SPECIES.items()],
            "genera": [{"name": g, "taxon": t} for g, t in GENERA.items()],
        }
    )
    with precision(np.float64):
        probs = Tensor(np.full((4, 1, 1), 0.25))
        labels = np.array([[label_index]])
        loss = hierarchical_loss(
            probs, labels, taxonomy, HierarchyWeights(*WEIGHTS), Normalization.BY_CLASSES
        )
    return loss.value


def main():
    parser = argparse.ArgumentParser(description="Verifica il valore in forma chiusa della loss gerarchica.")
    parser.add_argument("--tolerance", type=float, default=1e-6)
    args = parser.parse_args()

    expected = 0.25 * math.log(4) + 0.15 * math.log(2)
    uniform = {s: 0.25 for s in SPECIES}
    failures = 0
    for index, label in enumerate(SPECIES):
        reference = brute_force(label, uniform)
        computed = package_value(index)
        ok = abs(reference - expected) <= args.tolerance and abs(computed - expected) <= args.tolerance
        failures += not ok
        print(
            f"etichetta {label}: forma chiusa {expected:.8f}  enumerazione {reference:.8f}  "
            f"pacchetto {computed:.8f}  {'OK' if ok else 'DIVERSO'}"
        )

    if failures:
        print(f"[ERRORE] {failures} casi fuori tolleranza ({args.tolerance:g}).")
        sys.exit(1)
    print("Valore della loss gerarchica confermato.")


if __name__ == "__main__":
    main()
