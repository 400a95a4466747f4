"""Ground-state phases of atoms with spin and motional degrees of freedom coupled by a waveguide-mediated interaction."""

__version__ = "0.1.0"
