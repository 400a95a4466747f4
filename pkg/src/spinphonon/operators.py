"""Local operator algebra on one site.

The four-dimensional site space is (motional band) x (spin) with the frozen
basis order |a,dn>, |a,up>, |b,dn>, |b,up>; index = 2 * band + spin.  The
motional pseudo-spin has sigma~^z = b^dag b - a^dag a, the spin has
sigma^z |up> = +|up>.
"""

import numpy as np

BASIS = ("a_dn", "a_up", "b_dn", "b_up")

I2 = np.eye(2)
_PZ = np.array([[-1.0, 0.0], [0.0, 1.0]])  # index 0 -> -1, index 1 -> +1
_PX = np.array([[0.0, 1.0], [1.0, 0.0]])
_RAISE = np.array([[0.0, 0.0], [1.0, 0.0]])  # |1><0|
_LOWER = _RAISE.T.copy()

# spin-only (d = 2) operators, basis |dn>, |up>
sz = _PZ.copy()
sp = _RAISE.copy()
sm = _LOWER.copy()
sx = _PX.copy()

I4 = np.eye(4)


def motional(op2):
    return np.kron(op2, I2)


def spin(op2):
    return np.kron(I2, op2)


sigma_z = spin(_PZ)
sigma_p = spin(_RAISE)
sigma_m = spin(_LOWER)
sigma_x = spin(_PX)

tsigma_z = motional(_PZ)
tsigma_x = motional(_PX)
tsigma_p = motional(_RAISE)  # |b><a|
tsigma_m = motional(_LOWER)

# composite flips on {|a,dn>, |b,up>} and on {|a,up>, |b,dn>}
tau_z = (tsigma_z + sigma_z) / 2
tau_p = tsigma_p @ sigma_p
tau_m = tsigma_m @ sigma_m
gamma_z = (-tsigma_z + sigma_z) / 2
gamma_p = tsigma_m @ sigma_p
gamma_m = tsigma_p @ sigma_m

# O_i = sigma~^z sigma^z, conserved by the commuting part of the Hamiltonian
parity_O = tsigma_z @ sigma_z

# total-sigma^z charge of each basis state
CHARGES_4 = np.array([-1, 1, -1, 1])
CHARGES_2 = np.array([-1, 1])

SITE_OPS = {
    "id": I4,
    "sz": sigma_z, "sp": sigma_p, "sm": sigma_m, "sx": sigma_x,
    "tz": tsigma_z, "tx": tsigma_x, "tp": tsigma_p, "tm": tsigma_m,
    "tauz": tau_z, "taup": tau_p, "taum": tau_m,
    "gz": gamma_z, "gp": gamma_p, "gm": gamma_m,
}


def state_index(label) -> int:
    """Map a basis label ('a_dn', ...) or integer to its index."""
    if isinstance(label, (int, np.integer)):
        if not 0 <= label < 4:
            raise ValueError(f"basis index {label} out of range")
        return int(label)
    try:
        return BASIS.index(label)
    except ValueError:
        raise ValueError(f"unknown basis label {label!r}; expected one of {BASIS}") from None


def spin_marginal(rho16: np.ndarray) -> np.ndarray:
    """Trace the motional factor of both sites out of a 16x16 two-site RDM."""
    r = rho16.reshape(2, 2, 2, 2, 2, 2, 2, 2)  # m1 s1 m2 s2 ; m1' s1' m2' s2'
    return np.einsum("aibjakbl->ijkl", r).reshape(4, 4)


# two-spin states in the basis |dn dn>, |dn up>, |up dn>, |up up>
TRIPLET0 = np.array([0.0, 1.0, 1.0, 0.0]) / np.sqrt(2)
SINGLET = np.array([0.0, 1.0, -1.0, 0.0]) / np.sqrt(2)
BELL = {
    "T0": TRIPLET0,
    "S": SINGLET,
    "Tp": np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2),
    "Tm": np.array([1.0, 0.0, 0.0, -1.0]) / np.sqrt(2),
}
