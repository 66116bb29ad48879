# Valore di maschera per sfondo e classi filtrate: escluso da loss e metriche.
IGNORE_INDEX = 255

LOG_CLAMP = 1e-12
DICE_EPSILON = 1.0
LEAKY_RELU_SLOPE = 0.01

# Calendario delle acquisizioni (tag data ISO), dalla tarda primavera all'autunno.
DEFAULT_CALENDAR = (
    "2021-05-28",
    "2021-06-17",
    "2021-07-21",
    "2021-08-18",
    "2021-09-02",
    "2021-09-28",
    "2021-10-07",
)

# Politica di selezione: un'immagine di giugno, due di settembre, una di ottobre.
SEASONAL_POLICY_SLOTS = (("06", 0), ("09", 0), ("09", 1), ("10", 0))
ANNOTATION_SLOT = 1

DEFAULT_TIME_STEPS = 4
DEFAULT_REFERENCE_INDEX = 2

DEFAULT_SPLIT_RATIOS = (0.63, 0.16, 0.21)
SPLIT_NAMES = ("train", "val", "test")
SPLIT_RATIO_TOLERANCE = 0.10

DEFAULT_MIN_CROWNS = 50

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

GRADCHECK_STEP = 1e-4
GRADCHECK_SAMPLES = 20
GRADCHECK_FLOOR = 1e-6

METRICS_CSV_COLUMNS = (
    "epoch",
    "lr",
    "loss_total",
    "loss_species",
    "loss_genus",
    "loss_taxon",
    "loss_dice",
    "loss_ce",
    "val_miou",
)
