# SLE Lab: Loewner chains, Bessel processes, GFF/LQG and harmonic measure experiments
__version__ = "0.3.0"
