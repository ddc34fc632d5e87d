"""Pricing and calibration in the Stationary Heston model.

The Stationary model starts the CIR variance from its invariant Gamma law.
European options are priced by Fourier inversion averaged over that law;
Bermudan and barrier options on a hybrid product recursive quantization tree.
"""

from .errors import (ConfigError, DateMismatch, EmptyCell, FellerViolation, HestonError,
                     IntegrationFailure, NoConvergence, OutOfBounds, TreeBuildError)
from .exotics import (BarrierDirection, BarrierSpec, BermudanSpec, PriceReport, barrier_price,
                      bermudan_price, european_on_tree)
from .heston import (EuroOption, HestonParams, OptionKind, implied_vol, stationary_price_laguerre,
                     stationary_price_quantized, stationary_prices)
from .montecarlo import McConfig, mc_barrier, mc_european, mc_european_strip
from .quantization import Quantizer1D, optimize, stationary_vol_quantizer
from .tree import QuantTree, build_tree

__all__ = [
    "BarrierDirection", "BarrierSpec", "BermudanSpec", "ConfigError", "DateMismatch",
    "EmptyCell", "EuroOption", "FellerViolation", "HestonError", "HestonParams",
    "IntegrationFailure", "McConfig", "NoConvergence", "OptionKind", "OutOfBounds",
    "PriceReport", "QuantTree", "Quantizer1D", "TreeBuildError", "barrier_price",
    "bermudan_price", "build_tree", "european_on_tree", "implied_vol", "mc_barrier",
    "mc_european", "mc_european_strip", "optimize", "stationary_price_laguerre", "stationary_price_quantized",
    "stationary_prices", "stationary_vol_quantizer",
]
