"""Coefficient families: moment maps, coefficient models, Lions derivatives and the Hamiltonian."""
