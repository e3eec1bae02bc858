"""Simulation of a pulse-pumped electro-optomechanical photon-pair source.

Subpackages cover the truncated-Fock operator algebra (`fock`), open-system
propagation and two-time correlators (`dynamics`), the temporal biphoton
wavepacket and its Schmidt modes (`biphoton`), detector-level coincidence and
CHSH statistics (`detection`), the transient laser-heating model (`heating`),
and a config-driven batch CLI (`config`, `experiments`, `cli`).
"""

__version__ = "0.1.0"
