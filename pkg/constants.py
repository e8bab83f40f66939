# constants.py

# Optimizer defaults
LEARNING_RATE = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Self-supervised fit
MAX_ITERS = 2000
LOG_EVERY = 100
PLATEAU_WINDOW = 100
PLATEAU_TOL = 1e-6

# Supervised baseline: Adam on minibatches of simulated pairs
SUPERVISED_LR = 1e-3
SUPERVISED_BATCH_SIZE = 4
SUPERVISED_ITERS = 2000

# Loss weight presets (alpha, beta, gamma)
WEIGHTS_X4 = (1.0, 8.0, 1e-5)
WEIGHTS_X8 = (0.0, 7.0, 0.0)

# TV baseline
TV_WEIGHT = 0.01
TV_ITERS = 200

# Network defaults
SCALES = 3
BASE_CHANNELS = 16
KERNEL_SIZE = 3
LEAKY_SLOPE = 0.1

# Sampling masks
CENTER_FRACTION_X4 = 0.08
CENTER_FRACTION_X8 = 0.04
TASKS = ("sr4", "dealias4", "sr8", "dealias8", "full")

# Metrics
PSNR_CAP = 100.0  # dB
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Phantoms
MIN_PHANTOM_SIZE = 32
MIN_ELLIPSES = 5
MAX_ELLIPSES = 12

# File output
PGM_MAXVAL = 65535
OUTPUT_ROOT_ENV = "SSLRECON_OUTPUT_ROOT"
MONTAGE_PANEL_SIZE = 192  # pixels
MONTAGE_CAPTION_HEIGHT = 28

# Colors
COLOR_WHITE = (255, 255, 255)
COLOR_BLACK = (0, 0, 0)
COLOR_YELLOW = (255, 220, 0)
