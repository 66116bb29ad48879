"""
Conteggio dei parametri del Processor in forma chiusa, confrontato con il modello istanziato.

Per una convoluzione 3D: out * in * kt * kh * kw pesi più out bias. Con la configurazione
predefinita (3 -> 32 con kernel 3x3x3, 32 -> 64 con kernel 2x3x3) il totale è 39.552.

Uso (dalla radice del repository):  python -m tools.count_processor_params
"""

import argparse
import sys
from typing import Sequence, Tuple

import numpy as np

from src.treeseg.domain.models import ProcessorSpec, init_processor, processor_parameter_count
from src.treeseg.domain.nn_ops import ParamSet

EXPECTED = 39_552


def closed_form(channels: Sequence[int], kernels: Sequence[Tuple[int, int, int]]) -> int:
    total = 0
    for (c_in, c_out), (kt, kh, kw) in zip(zip(channels, channels[1:]), kernels):
        total += c_out * c_in * kt * kh * kw + c_out
    return total


def main():
    parser = argparse.ArgumentParser(description="Verifica il numero di parametri del Processor.")
    parser.add_argument("--time-steps", type=int, default=4)
    parser.add_argument("--in-channels", type=int, default=3)
    args = parser.parse_args()

    spec = ProcessorSpec(time_steps=args.time_steps, in_channels=args.in_channels)
    formula = closed_form((spec.in_channels, spec.mid_channels, spec.out_channels), spec.kernels)
    declared = processor_parameter_count(spec)
    params = ParamSet()
    init_processor(params, spec, np.random.default_rng(0))
    instantiated = params.count()

    print(f"forma chiusa:  {formula}")
    print(f"dichiarato:    {declared}")
    print(f"istanziato:    {instantiated}")

    if len({formula, declared, instantiated}) != 1:
        print("[ERRORE] I conteggi non coincidono.")
        sys.exit(1)
    if (args.time_steps, args.in_channels) == (4, 3) and formula != EXPECTED:
        print(f"[ERRORE] Atteso {EXPECTED} parametri per la configurazione predefinita.")
        sys.exit(1)
    print("Conteggio dei parametri confermato.")


if __name__ == "__main__":
    main()
