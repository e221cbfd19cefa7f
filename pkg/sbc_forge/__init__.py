from math import pi

US = 1e-6
MS = 1e-3
MHZ = 2 * pi * 1e6

# Fock truncation: 80 levels for the single-ion model, 180 once eta = 0.45
# leaves ~120 populated levels plus headroom for 8th order couplings.
DEFAULT_N_MAX = 80
HIGH_ORDER_N_MAX = 180

DEFAULT_MAX_TAIL_MASS = 0.01

# Quench-induced decay of the upper state, 42 per millisecond.
DEFAULT_GAMMA_EFF = 42 / MS
DEFAULT_ETA_TILDE = 0.134
DEFAULT_XI = 0.05
DEFAULT_PULSE_AREA_REDUCTION = 1 * US
DEFAULT_REPUMP_PULSE = 3 * US
DEFAULT_REPUMP_GAP = 5 * US

# Detection emulation, y = a * (p0 - b)
SIGNAL_AMPLITUDE = 0.7
SIGNAL_OFFSET = 0.23
