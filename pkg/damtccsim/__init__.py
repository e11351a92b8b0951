from . import analysis, cli, diffusion, noise, phasegen, wlfilter
from .simulator import FrequencySimulator
