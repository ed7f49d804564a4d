"""PLENA accelerator toolchain: formats, quantizer, ISA, machine, HBM, compiler, DSE."""

__version__ = "0.1.0"
